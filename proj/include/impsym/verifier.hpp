#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "impsym/abstraction.hpp"
#include "impsym/certificate.hpp"
#include "impsym/composer.hpp"
#include "impsym/integrator.hpp"
#include "impsym/system.hpp"

namespace impsym {

/// c * alpha.
KInfFn scale(const KInfFn& alpha, double c);

/// Lower bound of the local function: min over counters of its multiplier
/// times alpha_lower.
KInfFn local_alpha(const LocalSimFn& f);

/// a r^P with P the largest exponent and a = min_i mu_i sum_k a_ik R^(p_ik - P),
/// valid for distances r <= R. Returns the zero function when some mu_i = 0.
KInfFn global_alpha(const std::vector<double>& mu, const std::vector<KInfFn>& alphas, double R);

// ---------------------------------------------------------------------------
// Condition 1

struct Condition1Report {
  bool pass = false;
  double worst_margin = 0.0;      // simfn - alpha(|x - xh|)
  double worst_normalized = 0.0;  // margin / max(|x - xh|^2, 1e-6)
  std::size_t samples = 0;
  std::vector<double> witness_x, witness_xh;
  std::vector<int> witness_c;
  std::string note;
};

/// Local: x from the state box, xh on the table's grid, every counter.
Condition1Report verify_condition1(const LocalSimFn& f, const KInfFn& alpha,
                                   const TransitionTable& table, std::size_t samples,
                                   double tol = 1e-7);
/// Global: weighted sum over the composed system, counters enumerated when
/// there are at most 64 combinations and drawn at random otherwise.
Condition1Report verify_condition1_global(const GlobalSimFn& g, const KInfFn& alpha,
                                          const ComposedSystem& sys, std::size_t samples,
                                          std::uint64_t seed, double tol = 1e-7);

// ---------------------------------------------------------------------------
// Condition 2 data and fitting

/// One matched transition: value of the simulation function after and before,
/// supply term (zero for the max form) and the external input norm.
struct FitRecord {
  double v_next = 0.0;
  double v_now = 0.0;
  double supply = 0.0;
  double unorm = 0.0;
};

struct Fit {
  bool finite = false;
  double sigma = 0.0;
  KInfFn rho_u;          // a r^p or zero
  double rho_coef = 0.0;
  double rho_exp = 1.0;
  double eps = 0.0;
};

/// Sigma grid {0.10, 0.15, ..., 0.95}.
std::vector<double> sigma_grid();

/// Sum form: v_next <= sigma v_now + supply + rho(unorm) + eps.
/// eps comes from the records with the smallest input norm, the rho
/// coefficient from the rest; sigma minimizes (eps, coef), ties to the smaller.
Fit fit_sum_form(const std::vector<FitRecord>& records, double rho_exp);
/// Max form: v_next <= max(sigma v_now, rho(unorm), eps).
Fit fit_max_form(const std::vector<FitRecord>& records, double rho_exp);

/// Largest violation of a frozen fit: max over records of the residual minus
/// the fitted right-hand side (<= 0 when the fit covers every record).
double fit_excess(const Fit& fit, const std::vector<FitRecord>& records, bool max_form);

// ---------------------------------------------------------------------------
// Local condition 2

struct LocalTuple {
  std::vector<double> x;
  AbstractState xh;
  std::size_t u = 0;     // external grid id; u := u-hat
  std::vector<double> w;
  std::size_t wh = 0;    // internal grid id
};

struct Condition2Options {
  std::uint64_t seed = 1;
  std::size_t refine = 5;        // concrete states on a grid of step eta_x / refine
  double xh_radius = 0.0;        // 0: eta_x
  double wh_radius = 0.0;        // 0: 2 eta_w
  std::size_t global_tuples = 20000;
  std::size_t jobs = 1;
  double stability_slack = 0.05;
};

/// Refinement samples of the state box with seeded jitter, paired with every
/// nearby abstract state and counter, every u-hat, sampled omega values and
/// nearby omega-hat grid points.
std::vector<LocalTuple> sample_local_tuples(const SubsystemSpec& spec, const TransitionTable& table,
                                            const Condition2Options& opt, std::uint64_t seed);

struct Counterexample {
  std::string kind;
  std::string message;
};

struct Condition2Report {
  bool pass = false;
  Fit fit;
  std::size_t tuples = 0;
  std::size_t transitions = 0;   // (tuple, mode) pairs evaluated
  std::size_t strategy_inconsistencies = 0;
  double fresh_excess = 0.0;     // max excess on an independent sample set
  bool stable = true;
  std::uint64_t seed = 0;
  std::vector<Counterexample> counterexamples;
  std::vector<FitRecord> records;
};

/// Evaluates every admissible mode of each tuple; the abstract successor is
/// the stored successor of the same mode minimizing the local function.
std::vector<FitRecord> evaluate_local_tuples(const SubsystemSpec& spec,
                                             const TransitionTable& table, const LocalSimFn& f,
                                             const std::vector<LocalTuple>& tuples,
                                             std::size_t jobs,
                                             std::vector<Counterexample>* counterexamples,
                                             std::size_t* inconsistencies = nullptr);

Condition2Report verify_condition2_local(const SubsystemSpec& spec, const TransitionTable& table,
                                         const LocalSimFn& f, const Condition2Options& opt);

// ---------------------------------------------------------------------------
// Global condition 2

struct GlobalTuple {
  std::vector<double> x;   // global concrete state
  ComposedState xh;        // counters give the shared counter vector
  std::vector<std::size_t> u;
};

std::vector<GlobalTuple> sample_global_tuples(const NetworkSpec& spec, const ComposedSystem& sys,
                                              std::size_t count, double xh_radius,
                                              std::uint64_t seed);

/// Concrete successor of the network for one mode vector (true coupling).
std::vector<FitRecord> evaluate_global_tuples(const NetworkSpec& spec, const ComposedSystem& sys,
                                              const GlobalSimFn& g,
                                              const std::vector<GlobalTuple>& tuples,
                                              const IntegratorConfig& config, std::size_t jobs,
                                              std::vector<Counterexample>* counterexamples);

Condition2Report verify_condition2_global(const NetworkSpec& spec, const ComposedSystem& sys,
                                          const GlobalSimFn& g, const IntegratorConfig& config,
                                          double rho_exp, const Condition2Options& opt);

/// Abstract successor of one subsystem minimizing the weighted local term.
std::optional<AbstractState> best_successor(const std::vector<AbstractState>& candidates,
                                            const LocalSimFn& f, const TransitionTable& table,
                                            std::span<const double> x_next, double* value);

// ---------------------------------------------------------------------------
// Trajectory bound

struct TrajectoryOptions {
  std::size_t runs = 1000;
  std::size_t horizon = 50;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
};

struct TrajectoryReport {
  bool pass = false;
  double eps_hat = 0.0;
  double input_norm = 0.0;
  double max_ratio = 0.0;        // max observed distance / eps_hat
  double max_distance = 0.0;
  std::size_t runs = 0;
  std::size_t steps = 0;
  std::size_t violations = 0;
  std::size_t level_set_violations = 0;
  std::size_t blocked = 0;
  // Worst run, for the CSV trace.
  std::size_t worst_run = 0;
  std::vector<double> trace_time;
  std::vector<std::vector<double>> trace_x, trace_xh;
  std::vector<std::vector<int>> trace_c;
  std::vector<double> trace_dist;
};

TrajectoryReport verify_trajectory_bound(const NetworkSpec& spec, const ComposedSystem& sys,
                                         const GlobalSimFn& g, const IntegratorConfig& config,
                                         const TrajectoryOptions& opt);

void write_trace_csv(std::ostream& os, const NetworkSpec& spec, const TrajectoryReport& rep);

// ---------------------------------------------------------------------------
// Safety game

/// Explicit finite game: for each (state, input) a successor list, or the
/// input is disabled at that state.
struct Game {
  std::size_t num_states = 0;
  std::size_t num_inputs = 0;
  std::vector<std::uint64_t> offsets;  // num_states * num_inputs + 1
  std::vector<std::uint64_t> succ;
  std::vector<std::uint8_t> disabled;  // per (state, input)

  std::span<const std::uint64_t> successors(std::size_t s, std::size_t u) const {
    const std::size_t k = s * num_inputs + u;
    return {succ.data() + offsets[k], static_cast<std::size_t>(offsets[k + 1] - offsets[k])};
  }
};

/// Inputs are the external grid ids; successors are the union over every
/// internal grid point and admissible mode. An input is disabled when any of
/// those choices is blocked.
Game game_from_table(const TransitionTable& table);
/// Inputs are joint external ids; throws InputError above `cap` states.
Game game_from_composed(const ComposedSystem& sys, std::size_t cap = 1'000'000,
                        std::size_t jobs = 1);

struct SafetyController {
  std::vector<bool> winning;
  std::vector<std::vector<std::size_t>> allowed;  // per state
  std::size_t iterations = 0;
  std::vector<std::size_t> sizes;                 // winning-set size per iteration
  bool monotone = true;
};

/// Greatest fixed point of W = safe and pre(W). Throws InputError above `cap`.
SafetyController safety_fixpoint(const Game& game, const std::vector<bool>& safe,
                                 std::size_t cap = 10'000'000);

}  // namespace impsym
