#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impsym/expr.hpp"
#include "impsym/grid.hpp"
#include "impsym/kvfile.hpp"

namespace impsym {

/// One impulsive subsystem: flow f between impulsive times, jump g at them.
/// Impulsive times are spaced by z * tau with z in [z_min, z_max]; the spacing
/// is encoded by the counter automaton rather than an explicit time set.
struct SubsystemSpec {
  std::string name;
  Arity arity;
  Box state_bounds;
  Box internal_bounds;
  Box external_bounds;
  VectorField flow;
  VectorField jump;
  double tau = 0.0;
  int z_min = 1;
  int z_max = 1;
  double phi = 0.0;  // bound on the internal-input variation within a period
  std::size_t line = 0;
};

struct NetworkSpec {
  std::vector<SubsystemSpec> subsystems;
  Eigen::MatrixXd M;  // (sum q_i) x (sum n_i)
  std::optional<std::vector<double>> phi_slack;  // per-subsystem tolerance Phi_i

  std::size_t size() const noexcept { return subsystems.size(); }
  std::size_t total_n() const;
  std::size_t total_q() const;
  std::size_t total_m() const;
  std::size_t state_offset(std::size_t i) const;
  std::size_t internal_offset(std::size_t i) const;
  std::size_t external_offset(std::size_t i) const;
  /// Index of a subsystem by name; throws InputError when unknown.
  std::size_t index_of(const std::string& name) const;
  double common_tau() const;
};

/// Concrete state of one subsystem together with its jump counter.
struct HybridState {
  std::vector<double> x;
  int c = 0;
};

struct Violation {
  std::string code;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const noexcept { return violations.empty(); }
  std::string summary() const;
};

/// Collects every structural problem instead of stopping at the first.
/// When `phi` is given (or the spec carries phi_slack) the coupling image of
/// the state box is checked against the internal bounds inflated by it.
ValidationReport validate_network(const NetworkSpec& spec,
                                  std::optional<std::vector<double>> phi = std::nullopt);

/// M * x split into one internal input vector per subsystem.
std::vector<std::vector<double>> coupling_image(const NetworkSpec& spec,
                                                std::span<const double> x);

/// Per-subsystem interval hull of M * (global state box).
std::vector<Box> coupling_image_hull(const NetworkSpec& spec);

/// Reads a system definition document; parse errors cite file and line.
NetworkSpec load_network(const KvDocument& doc);
NetworkSpec load_network_file(const std::string& path);

}  // namespace impsym
