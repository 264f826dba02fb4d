#include "impsym/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "impsym/error.hpp"

namespace impsym {

std::size_t IntegratorConfig::steps_for(double tau) const {
  validate(tau);
  return static_cast<std::size_t>(std::llround(tau / step));
}

void IntegratorConfig::validate(double tau) const {
  if (!(step > 0.0) || !std::isfinite(step))
    throw InputError("integrator step must be positive, got " + std::to_string(step));
  if (!(max_norm > 0.0))
    throw InputError("integrator max_norm must be positive");
  if (!(tau > 0.0)) throw InputError("tau must be positive");
  const double n = std::round(tau / step);
  if (n < 1.0 || std::abs(n * step - tau) > 1e-12)
    throw InputError("integrator step " + std::to_string(step) + " does not divide tau " +
                     std::to_string(tau));
}

std::vector<double> integrate_rhs(const Rhs& rhs, std::span<const double> x0, double tau,
                                  const IntegratorConfig& config) {
  const std::size_t steps = config.steps_for(tau);
  const std::size_t n = x0.size();
  const double h = config.step;
  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> comp(n, 0.0);
  std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);

  for (std::size_t s = 0; s < steps; ++s) {
    rhs(x, k1);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
    rhs(tmp, k2);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
    rhs(tmp, k3);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + h * k3[i];
    rhs(tmp, k4);
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double inc = h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      const double y = inc - comp[i];
      const double t = x[i] + y;
      comp[i] = (t - x[i]) - y;
      x[i] = t;
      if (!std::isfinite(x[i])) throw IntegrationError(s + 1, "non-finite state (NaN)");
      norm = std::max(norm, std::abs(x[i]));
    }
    if (norm > config.max_norm)
      throw IntegrationError(s + 1, "blow-up: ||x||_inf = " + std::to_string(norm) +
                                        " exceeds max_norm " +
                                        std::to_string(config.max_norm));
  }
  return x;
}

std::vector<double> integrate_flow(const VectorField& f, std::span<const double> x0,
                                   std::span<const double> w, std::span<const double> u,
                                   double tau, const IntegratorConfig& config) {
  const Arity& a = f.arity();
  if (x0.size() != a.n || w.size() != a.q || u.size() != a.m)
    throw DimensionError("integrate_flow: input dimensions do not match the vector field");
  return integrate_rhs(
      [&](std::span<const double> x, std::span<double> dx) { f.eval_into(x, w, u, dx); }, x0,
      tau, config);
}

std::vector<double> apply_jump(const VectorField& g, std::span<const double> x_minus,
                               std::span<const double> w_minus, std::span<const double> u_now) {
  const Arity& a = g.arity();
  if (x_minus.size() != a.n || w_minus.size() != a.q || u_now.size() != a.m)
    throw DimensionError("apply_jump: input dimensions do not match the jump map");
  return g.eval(x_minus, w_minus, u_now);
}

namespace {

// Coupled right-hand side of the network; subsystems with frozen[i] set
// have zero derivative.
Rhs coupled_rhs(const NetworkSpec& spec, std::span<const double> u,
                const std::vector<bool>& frozen) {
  return [&spec, u, &frozen](std::span<const double> x, std::span<double> dx) {
    const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
    const Eigen::VectorXd w = spec.M * xv;
    for (std::size_t i = 0; i < spec.size(); ++i) {
      const auto& s = spec.subsystems[i];
      const std::size_t xo = spec.state_offset(i);
      auto out = dx.subspan(xo, s.arity.n);
      if (frozen[i]) {
        std::fill(out.begin(), out.end(), 0.0);
        continue;
      }
      s.flow.eval_into(x.subspan(xo, s.arity.n),
                       std::span<const double>(w.data() + spec.internal_offset(i), s.arity.q),
                       u.subspan(spec.external_offset(i), s.arity.m), out);
    }
  };
}

void check_global_dims(const NetworkSpec& spec, std::span<const double> x,
                       std::span<const double> u, const char* who) {
  if (x.size() != spec.total_n())
    throw DimensionError(std::string(who) + ": state has " + std::to_string(x.size()) +
                         " entries, expected " + std::to_string(spec.total_n()));
  if (u.size() != spec.total_m())
    throw DimensionError(std::string(who) + ": external input has " +
                         std::to_string(u.size()) + " entries, expected " +
                         std::to_string(spec.total_m()));
}

// Applies the jumps flagged in `jump` using pre-jump values of all
// coordinates; other subsystems are left unchanged (beta_i = identity).
std::vector<double> apply_network_jumps(const NetworkSpec& spec, std::span<const double> x,
                                        const std::vector<bool>& jump,
                                        std::span<const double> u) {
  std::vector<double> out(x.begin(), x.end());
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::VectorXd w = spec.M * xv;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (!jump[i]) continue;
    const auto& s = spec.subsystems[i];
    const std::size_t xo = spec.state_offset(i);
    const auto xi = apply_jump(
        s.jump, x.subspan(xo, s.arity.n),
        std::span<const double>(w.data() + spec.internal_offset(i), s.arity.q),
        u.subspan(spec.external_offset(i), s.arity.m));
    std::copy(xi.begin(), xi.end(), out.begin() + static_cast<std::ptrdiff_t>(xo));
  }
  return out;
}

}  // namespace

std::vector<double> network_step(const NetworkSpec& spec, std::span<const double> x,
                                 const std::vector<bool>& jump, std::span<const double> u,
                                 const IntegratorConfig& config) {
  check_global_dims(spec, x, u, "network_step");
  if (jump.size() != spec.size()) throw DimensionError("network_step: one mode per subsystem");
  bool any_flow = false;
  for (bool j : jump) any_flow = any_flow || !j;
  std::vector<double> flowed(x.begin(), x.end());
  if (any_flow) flowed = integrate_rhs(coupled_rhs(spec, u, jump), x, spec.common_tau(), config);
  const auto jumped = apply_network_jumps(spec, x, jump, u);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (!jump[i]) continue;
    const std::size_t xo = spec.state_offset(i);
    for (std::size_t k = 0; k < spec.subsystems[i].arity.n; ++k) flowed[xo + k] = jumped[xo + k];
  }
  return flowed;
}

void check_schedule(const NetworkSpec& spec, const JumpSchedule& schedule,
                    std::size_t horizon_periods) {
  if (schedule.size() != spec.size())
    throw InputError("jump schedule must list one entry per subsystem");
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const auto& s = spec.subsystems[i];
    const auto zmin = static_cast<std::size_t>(s.z_min);
    const auto zmax = static_cast<std::size_t>(s.z_max);
    std::size_t last = 0;
    for (std::size_t k : schedule[i]) {
      if (k > horizon_periods)
        throw InputError("jump schedule of '" + s.name + "': period " + std::to_string(k) +
                         " beyond horizon");
      const std::size_t gap = k - last;
      if (k <= last || gap < zmin || gap > zmax)
        throw InputError("jump schedule of '" + s.name + "': gap of " +
                         std::to_string(k > last ? gap : 0) + " periods before period " +
                         std::to_string(k) + " violates dwell bounds [" +
                         std::to_string(zmin) + ", " + std::to_string(zmax) + "]");
      last = k;
    }
    if (horizon_periods - last > zmax)
      throw InputError("jump schedule of '" + s.name + "': no jump within " +
                       std::to_string(zmax) + " periods after period " + std::to_string(last));
  }
}

HybridTrajectory simulate_concrete(const NetworkSpec& spec, std::span<const double> x0,
                                   const std::vector<std::vector<double>>& u_signal,
                                   const JumpSchedule& schedule, std::size_t horizon_periods,
                                   const IntegratorConfig& config) {
  check_schedule(spec, schedule, horizon_periods);
  if (x0.size() != spec.total_n()) throw DimensionError("simulate_concrete: x0 dimension");
  if (spec.total_m() > 0 && u_signal.size() < horizon_periods)
    throw InputError("simulate_concrete: external input signal shorter than horizon");
  const double tau = spec.common_tau();
  const std::size_t N = spec.size();
  const std::vector<double> no_u;

  // jump flags per period index
  std::vector<std::vector<bool>> jumps_at(horizon_periods + 1, std::vector<bool>(N, false));
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t k : schedule[i]) jumps_at[k][i] = true;

  auto input_at = [&](std::size_t k) -> std::span<const double> {
    if (spec.total_m() == 0) return no_u;
    const auto& u = u_signal.at(std::min(k, u_signal.size() - 1));
    if (u.size() != spec.total_m()) throw DimensionError("simulate_concrete: input dimension");
    return u;
  };

  HybridTrajectory traj;
  traj.jump_times.assign(N, {});
  std::vector<double> x(x0.begin(), x0.end());
  traj.samples.push_back({0.0, x, std::vector<bool>(N, false)});
  const std::vector<bool> none(N, false);
  for (std::size_t k = 0; k < horizon_periods; ++k) {
    x = integrate_rhs(coupled_rhs(spec, input_at(k), none), x, tau, config);
    const std::size_t kn = k + 1;
    const double t = static_cast<double>(kn) * tau;
    const auto& flags = jumps_at[kn];
    bool any = false;
    for (std::size_t i = 0; i < N; ++i)
      if (flags[i]) {
        any = true;
        traj.jump_times[i].push_back(t);
      }
    if (any) x = apply_network_jumps(spec, x, flags, input_at(kn));
    traj.samples.push_back({t, x, flags});
  }
  traj.check_invariants(spec);
  return traj;
}

void HybridTrajectory::check_invariants(const NetworkSpec& spec) const {
  for (std::size_t s = 1; s < samples.size(); ++s)
    if (!(samples[s].time > samples[s - 1].time))
      throw Error("trajectory times are not strictly increasing at sample " + std::to_string(s));
  const double tau = spec.common_tau();
  for (std::size_t i = 0; i < jump_times.size() && i < spec.size(); ++i) {
    const auto& sub = spec.subsystems[i];
    double last = 0.0;
    for (double t : jump_times[i]) {
      const double gap = (t - last) / tau;
      const double z = std::round(gap);
      if (std::abs(gap - z) > 1e-9 || z < sub.z_min || z > sub.z_max)
        throw Error("trajectory of '" + sub.name + "' has a jump gap of " +
                    std::to_string(gap) + " periods outside the dwell bounds");
      last = t;
    }
  }
}

void write_trajectory_csv(std::ostream& os, const NetworkSpec& spec,
                          const HybridTrajectory& trajectory) {
  os << "time";
  for (const auto& s : spec.subsystems)
    for (std::size_t k = 0; k < s.arity.n; ++k) os << ",x_" << s.name << '_' << (k + 1);
  for (const auto& s : spec.subsystems) os << ",jump_" << s.name;
  os << '\n';
  char buf[32];
  for (const auto& smp : trajectory.samples) {
    std::snprintf(buf, sizeof buf, "%.17g", smp.time);
    os << buf;
    for (double v : smp.x) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    for (bool j : smp.jumped) os << ',' << (j ? 1 : 0);
    os << '\n';
  }
}

}  // namespace impsym
