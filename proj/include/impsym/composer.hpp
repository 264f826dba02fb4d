#pragma once

#include <Eigen/Dense>
#include <compare>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "impsym/abstraction.hpp"
#include "impsym/certificate.hpp"
#include "impsym/system.hpp"

namespace impsym {

/// One abstract state per subsystem.
struct ComposedState {
  std::vector<AbstractState> parts;

  auto operator<=>(const ComposedState&) const = default;
};

struct ComposedStep {
  std::vector<ComposedState> states;         // ascending
  bool blocked = false;
  bool any_blocked = false;                  // some (omega, mode) choice is blocked
  std::string reason;
  std::vector<std::vector<std::size_t>> w_choices;  // admissible omega-hat ids per subsystem
};

/// Network of subsystem abstractions. Internal inputs are resolved by every
/// internal grid point within Phi_i of (M x-hat)_i; the successor relation is
/// the union over those choices and over the admissible modes, per subsystem,
/// followed by the product across subsystems.
class ComposedSystem {
public:
  /// Tables must outlive the composed system. Throws InputError on a size
  /// mismatch between tables, M and Phi.
  ComposedSystem(std::vector<const TransitionTable*> tables, Eigen::MatrixXd M,
                 std::vector<double> Phi);

  std::size_t size() const noexcept { return tables_.size(); }
  const TransitionTable& table(std::size_t i) const { return *tables_.at(i); }
  const Eigen::MatrixXd& M() const noexcept { return M_; }
  const std::vector<double>& Phi() const noexcept { return Phi_; }

  std::size_t total_n() const noexcept { return total_n_; }
  /// Global abstract state point (concatenated cell points).
  std::vector<double> point(const ComposedState& s) const;
  /// Internal grid ids within Phi_i (+1e-9) of (M x-hat)_i for subsystem i.
  std::vector<std::size_t> internal_choices(std::size_t i, std::span<const double> image_i) const;
  std::vector<std::vector<std::size_t>> internal_choices(const ComposedState& s) const;

  /// Per-subsystem successor sets with each subsystem's mode fixed.
  std::vector<Successors> local_successors(const ComposedState& s,
                                           std::span<const std::size_t> u_idx,
                                           std::span<const Mode> modes,
                                           std::vector<std::vector<std::size_t>>* w_choices =
                                               nullptr) const;
  /// Same with every admissible mode.
  std::vector<Successors> local_successors(const ComposedState& s,
                                           std::span<const std::size_t> u_idx,
                                           std::vector<std::vector<std::size_t>>* w_choices =
                                               nullptr) const;

  ComposedStep successors(const ComposedState& s, std::span<const std::size_t> u_idx) const;
  ComposedStep successors(const ComposedState& s, std::span<const std::size_t> u_idx,
                          std::span<const Mode> modes) const;

  // Dense ids: mixed radix over the tables' state ids (last subsystem fastest).
  std::size_t num_states() const;
  std::size_t num_inputs() const;
  std::size_t id_of(const ComposedState& s) const;
  ComposedState state_of(std::size_t id) const;
  std::vector<std::size_t> input_of(std::size_t id) const;

private:
  std::vector<const TransitionTable*> tables_;
  Eigen::MatrixXd M_;
  std::vector<double> Phi_;
  std::size_t total_n_ = 0;
};

/// Cross product of per-subsystem state sets, ascending.
std::vector<ComposedState> product(const std::vector<std::vector<AbstractState>>& sets);

/// Weighted sum of local simulation functions.
struct GlobalSimFn {
  std::vector<double> mu;
  std::vector<LocalSimFn> locals;
  std::vector<std::size_t> dims;  // n_i

  // Fitted constants of the max-form decay condition and the lower bound.
  double sigma = 0.0;
  KInfFn rho_u;
  double eps = 0.0;
  KInfFn alpha;

  /// Sum of mu_i times the local function at matching counters.
  double operator()(std::span<const double> x, std::span<const double> xh,
                    std::span<const int> counters) const;
  /// Throws InputError when concrete and abstract counters differ.
  double operator()(std::span<const double> x, std::span<const double> xh,
                    std::span<const int> c_concrete, std::span<const int> c_abstract) const;
};

/// Throws InputError on a length mismatch or a negative weight.
GlobalSimFn compose_simfn(std::vector<double> mu, std::vector<LocalSimFn> locals);

/// alpha^{-1}(max(rho_u(r), eps)).
double deviation_bound(const KInfFn& alpha, const KInfFn& rho_u, double eps, double r);

/// JSON adjacency listing of the composed states reachable from `initial`
/// under every joint external input, with the omega-hat choices per
/// subsystem. Stops after `limit` states.
void write_exploration(std::ostream& os, const ComposedSystem& sys,
                       const std::vector<ComposedState>& initial, std::size_t limit);

}  // namespace impsym
