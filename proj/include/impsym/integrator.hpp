#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "impsym/expr.hpp"
#include "impsym/system.hpp"

namespace impsym {

struct IntegratorConfig {
  double step = 1e-3;      // fixed RK4 step h
  double max_norm = 1e6;   // divergence guard on ||x||_inf

  /// Number of steps per period; throws InputError unless step divides tau
  /// to within 1e-12.
  std::size_t steps_for(double tau) const;
  void validate(double tau) const;
};

/// Right-hand side callback: writes dx/dt at x into dx.
using Rhs = std::function<void(std::span<const double> x, std::span<double> dx)>;

/// Classical fixed-step RK4 over [0, tau]. The state sum is Kahan-compensated
/// so that long integrations accumulate no extra rounding drift.
std::vector<double> integrate_rhs(const Rhs& rhs, std::span<const double> x0, double tau,
                                  const IntegratorConfig& config);

/// Flow of f with constant internal and external inputs over one period.
/// Returns the left limit at tau.
std::vector<double> integrate_flow(const VectorField& f, std::span<const double> x0,
                                   std::span<const double> w, std::span<const double> u,
                                   double tau, const IntegratorConfig& config);

/// Single evaluation of g at the pre-jump state and internal input and the
/// current external input.
std::vector<double> apply_jump(const VectorField& g, std::span<const double> x_minus,
                               std::span<const double> w_minus, std::span<const double> u_now);

struct TrajectorySample {
  double time = 0.0;
  std::vector<double> x;      // global state (post-jump at jump instants)
  std::vector<bool> jumped;   // per subsystem
};

struct HybridTrajectory {
  std::vector<TrajectorySample> samples;
  std::vector<std::vector<double>> jump_times;  // per subsystem

  /// Throws Error when times are not increasing or a subsystem's jump gaps
  /// leave {z_min tau, ..., z_max tau}.
  void check_invariants(const NetworkSpec& spec) const;
};

/// Per-subsystem sorted period indices k >= 1 at which the subsystem jumps
/// (at time k * tau). Counting starts at 0 at t = 0, so the first index and
/// every gap must lie in [z_min, z_max], and the counter at the horizon may
/// not exceed z_max.
using JumpSchedule = std::vector<std::vector<std::size_t>>;

void check_schedule(const NetworkSpec& spec, const JumpSchedule& schedule,
                    std::size_t horizon_periods);

/// Simulates the network in physical time. At each period boundary the
/// scheduled jumps are applied from the pre-jump values of all coordinates;
/// over each period the coupled flow is integrated with omega = M x(t)
/// inside the right-hand side and the external input held at
/// u_signal[k] (global external vector; empty spans are allowed when m = 0).
HybridTrajectory simulate_concrete(const NetworkSpec& spec, std::span<const double> x0,
                                   const std::vector<std::vector<double>>& u_signal,
                                   const JumpSchedule& schedule, std::size_t horizon_periods,
                                   const IntegratorConfig& config);

/// One synchronous transition of the composed sampled-data system. Subsystem
/// i flows when jump[i] is false: all flowing subsystems integrate jointly
/// with omega = M x(t), while jumping subsystems hold their pre-step value
/// during the flow. Jumping subsystems apply g at the pre-step state and
/// omega = M x(0).
std::vector<double> network_step(const NetworkSpec& spec, std::span<const double> x,
                                 const std::vector<bool>& jump, std::span<const double> u,
                                 const IntegratorConfig& config);

/// CSV columns: time, x_<sub>_1..x_<sub>_n for each subsystem in order,
/// then jump_<sub> flags (0/1).
void write_trajectory_csv(std::ostream& os, const NetworkSpec& spec,
                          const HybridTrajectory& trajectory);

}  // namespace impsym
