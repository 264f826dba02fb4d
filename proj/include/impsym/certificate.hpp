#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "impsym/expr.hpp"
#include "impsym/grid.hpp"
#include "impsym/kvfile.hpp"
#include "impsym/system.hpp"

namespace impsym {

/// Comparison function r -> sum_k a_k r^{p_k} with a_k > 0 and p_k >= 1, or
/// the zero function. Text form: "a:p" terms separated by commas, or "zero".
class KInfFn {
public:
  struct Term {
    double a = 1.0;
    double p = 1.0;
  };

  KInfFn() = default;  // zero
  static KInfFn power(double a, double p);
  static KInfFn zero() { return {}; }
  static KInfFn from_terms(std::vector<Term> terms);
  /// Throws InputError on malformed text or a = 0, p < 1.
  static KInfFn parse(std::string_view text);

  bool is_zero() const noexcept { return terms_.empty(); }
  const std::vector<Term>& terms() const noexcept { return terms_; }
  std::optional<Term> single_term() const;

  double operator()(double r) const;
  /// Inverse on [0, inf): closed form for one term, bisection otherwise.
  /// Throws Error for the zero function.
  double inverse(double v) const;
  std::string to_string() const;

private:
  std::vector<Term> terms_;
};

/// Storage function and dissipativity data of one subsystem.
struct Certificate {
  std::string subsystem;
  Arity arity;
  Expr V;  // over x<k> and xh<k>
  KInfFn alpha_lower, alpha_upper;
  double kappa_c = 0.0;
  double kappa_d = 0.0;
  Eigen::MatrixXd D_c, D_d;  // (q + n) square, omega block first
  KInfFn rho_uc, rho_ud;
  KInfFn gamma_hat;
  double epsilon = 0.5;   // parameters of the local simulation function
  double delta = 0.0;     // 0 selects z_max + 1
  std::string origin;     // "file:line" of the section header

  double eval_V(std::span<const double> x, std::span<const double> xh) const;
  /// Throws InputError on shape, symmetry (1e-12) or sign violations.
  void validate() const;
};

/// [dw; dx]^T D [dw; dx].
double supply(const Eigen::MatrixXd& D, std::span<const double> dw, std::span<const double> dx);

/// Reads one [certificate <subsystem>] section per subsystem of `spec`.
std::vector<Certificate> load_certificates(const KvDocument& doc, const NetworkSpec& spec);
std::vector<Certificate> load_certificates_file(const std::string& path, const NetworkSpec& spec);

// ---------------------------------------------------------------------------
// Sampled checks. Margin = right-hand side - left-hand side, so a sample
// passes when its margin is >= 0. The verdict uses the margin normalized by
// max(|d|^2, 1e-6), d being the stacked differences of the sample; this makes
// the tolerance scale-aware and keeps finite-difference noise below it.

struct SampleOptions {
  std::size_t samples = 4096;
  std::size_t offset = 0;     // first Halton index
  std::size_t refine = 8;     // worst samples refined by pattern search
  std::size_t jobs = 1;
  double tol = 1e-7;          // on the normalized margin
};

struct NamedVector {
  std::string name;
  std::vector<double> value;
};

struct CheckReport {
  std::string name;
  bool pass = true;
  double worst_margin = 0.0;             // raw margin at the worst sample
  double worst_normalized = 0.0;         // verdict quantity
  std::size_t samples = 0;
  std::size_t skipped = 0;
  std::vector<NamedVector> witness;      // worst sample
  std::vector<std::pair<std::string, double>> extra;
};

/// Lower and upper sandwich margins at one pair.
std::pair<double, double> sandwich_margins(const Certificate& cert, std::span<const double> x,
                                           std::span<const double> xh);
/// Central-difference gradient of V with step 1e-6; throws EvalError.
void grad_V(const Certificate& cert, std::span<const double> x, std::span<const double> xh,
            std::span<double> gx, std::span<double> gxh);
double flow_dissipativity_margin(const Certificate& cert, const SubsystemSpec& spec,
                                 std::span<const double> x, std::span<const double> xh,
                                 std::span<const double> w, std::span<const double> wh,
                                 std::span<const double> u, std::span<const double> uh);
double jump_dissipativity_margin(const Certificate& cert, const SubsystemSpec& spec,
                                 std::span<const double> x, std::span<const double> xh,
                                 std::span<const double> w, std::span<const double> wh,
                                 std::span<const double> u, std::span<const double> uh);
double triangle_margin(const Certificate& cert, std::span<const double> x,
                       std::span<const double> y, std::span<const double> z);

CheckReport check_sandwich(const Certificate& cert, const SubsystemSpec& spec,
                           const SampleOptions& opt = {});
CheckReport check_flow_dissipativity(const Certificate& cert, const SubsystemSpec& spec,
                                     const SampleOptions& opt = {});
CheckReport check_jump_dissipativity(const Certificate& cert, const SubsystemSpec& spec,
                                     const SampleOptions& opt = {});
/// x, y, z range over `box`.
CheckReport check_triangle(const Certificate& cert, const Box& box,
                           const SampleOptions& opt = {});

// ---------------------------------------------------------------------------
// Exact reference for linear flows and quadratic V = (x-xh)^T P (x-xh):
// the flow condition becomes z^T L z <= 0 in z = [dw; dx (; du)].

struct OracleVerdict {
  bool holds = false;
  double max_eigenvalue = 0.0;
  Eigen::MatrixXd L;
};

/// B_u may be empty or zero. A nonzero B_u needs m = 1 and rho_uc = a r^2.
OracleVerdict quadratic_oracle(const Eigen::MatrixXd& P, const Eigen::MatrixXd& A,
                               const Eigen::MatrixXd& B_w, const Eigen::MatrixXd& B_u,
                               double kappa_c, const Eigen::MatrixXd& D_c,
                               const KInfFn& rho_uc = KInfFn::zero(), double tol = 0.0);

// ---------------------------------------------------------------------------
// Dwell time and the local simulation function.

struct DwellReport {
  bool pass = false;
  double value_at_zmin = 0.0;  // ln(kappa_d) - kappa_c tau z_min
  double value_at_zmax = 0.0;
};

/// Throws InputError when kappa_d <= 0.
DwellReport check_dwell_time(double kappa_c, double kappa_d, double tau, int z_min, int z_max);

enum class SimFnCase { A, B, C };
const char* case_name(SimFnCase c);
/// A: kappa_d < 1 and kappa_c > 0; B: kappa_d >= 1 and kappa_c > 0;
/// C: kappa_d < 1 and kappa_c <= 0; none otherwise.
std::optional<SimFnCase> classify_case(double kappa_c, double kappa_d);

class LocalSimFn {
public:
  const Certificate* cert = nullptr;
  SimFnCase kind = SimFnCase::A;
  double epsilon = 0.5;
  double delta = 0.0;
  double tau = 0.0;
  int z_max = 0;

  /// Factor multiplying V at counter c.
  double multiplier(int c) const;
  double operator()(std::span<const double> x, std::span<const double> xh, int c) const;
  /// min over c in [0, z_max] of multiplier(c).
  double min_multiplier() const;
};

/// Throws InputError when no case applies or epsilon, delta are out of range.
LocalSimFn build_local_simfn(const Certificate& cert, double epsilon, double delta, int z_max,
                             double tau);

// ---------------------------------------------------------------------------
// Compositional conditions.

struct SupplyBlock {
  std::size_t q = 0;
  std::size_t n = 0;
  Eigen::MatrixXd D;  // (q + n) square
};

struct CompositionReport {
  bool pass = false;
  double max_eigenvalue = 0.0;
  Eigen::VectorXd eigenvalues;  // ascending
  Eigen::MatrixXd Q;
};

/// Largest eigenvalue of a symmetric matrix.
double max_eigenvalue(const Eigen::MatrixXd& S);

/// Assembles the block matrix with all omega blocks first, then all x blocks,
/// weights mu_i, forms Q = [M; I]^T D [M; I] and tests lambda_max <= tol.
CompositionReport check_compositionality(const Eigen::MatrixXd& M,
                                         const std::vector<SupplyBlock>& blocks,
                                         const std::vector<double>& mu, double tol = 1e-9);
Eigen::MatrixXd assemble_block_matrix(const std::vector<SupplyBlock>& blocks,
                                      const std::vector<double>& mu);

struct InclusionViolation {
  std::vector<double> state;  // combined abstract state point
  std::vector<double> image;  // M * state
  std::size_t subsystem = 0;
  std::string reason;
};

struct InclusionReport {
  bool pass = true;
  std::size_t checked = 0;
  std::size_t violation_count = 0;
  std::vector<InclusionViolation> violations;  // first few witnesses
};

/// Enumerates every combined state grid point. Throws InputError when the
/// product cardinality exceeds `cap`.
InclusionReport check_input_inclusion(const Eigen::MatrixXd& M,
                                      const std::vector<Grid>& state_grids,
                                      const std::vector<Grid>& internal_grids,
                                      std::size_t cap = 1'000'000, double tol = 1e-9);

struct MuSearchResult {
  std::optional<std::vector<double>> mu;  // set iff some candidate passes
  std::vector<double> best;               // best candidate even when failing
  double best_score = 0.0;                // lambda_max of the normalized Q
  std::size_t candidates = 0;
};

/// Cartesian product of `values` over N subsystems, all-zero vector removed.
std::vector<std::vector<double>> mu_grid(const std::vector<double>& values, std::size_t N);

/// Minimizes the worst lambda_max over `block_sets` of Q(mu / sum mu). Ties
/// within 1e-12 go to the lexicographically smallest candidate.
MuSearchResult search_mu(const Eigen::MatrixXd& M,
                         const std::vector<std::vector<SupplyBlock>>& block_sets,
                         const std::vector<std::vector<double>>& candidates, double tol = 1e-9);

std::vector<SupplyBlock> supply_blocks(const NetworkSpec& spec,
                                       const std::vector<Certificate>& certs, bool jump);

}  // namespace impsym
