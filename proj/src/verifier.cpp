#include "impsym/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <tuple>

#include "impsym/error.hpp"
#include "impsym/parallel.hpp"
#include "impsym/sampling.hpp"

namespace impsym {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_diff(std::span<const double> a, std::span<const double> b) {
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r = std::max(r, std::abs(a[i] - b[i]));
  return r;
}

std::vector<double> diff(std::span<const double> a, std::span<const double> b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

double max_exponent(const KInfFn& f) {
  double p = 0.0;
  for (const auto& t : f.terms()) p = std::max(p, t.p);
  return p;
}

}  // namespace

KInfFn scale(const KInfFn& alpha, double c) {
  if (!(c > 0.0)) return KInfFn::zero();
  auto terms = alpha.terms();
  for (auto& t : terms) t.a *= c;
  return KInfFn::from_terms(std::move(terms));
}

KInfFn local_alpha(const LocalSimFn& f) { return scale(f.cert->alpha_lower, f.min_multiplier()); }

KInfFn global_alpha(const std::vector<double>& mu, const std::vector<KInfFn>& alphas, double R) {
  if (mu.size() != alphas.size()) throw DimensionError("one alpha per weight");
  double P = 1.0;
  for (const auto& a : alphas) P = std::max(P, max_exponent(a));
  double coef = kInf;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    double s = 0.0;
    for (const auto& t : alphas[i].terms()) s += t.a * std::pow(R, t.p - P);
    coef = std::min(coef, mu[i] * s);
  }
  if (!(coef > 0.0) || !std::isfinite(coef)) return KInfFn::zero();
  return KInfFn::power(coef, P);
}

// ---------------------------------------------------------------------------
// Condition 1

Condition1Report verify_condition1(const LocalSimFn& f, const KInfFn& alpha,
                                   const TransitionTable& table, std::size_t samples,
                                   double tol) {
  Condition1Report rep;
  if (alpha.is_zero()) {
    rep.note = "lower bound is not of class K-infinity";
    return rep;
  }
  const std::size_t n = table.arity.n;
  const Box& box = table.state_grid.bounds();
  std::vector<double> h(2 * n), x(n), y(n);
  double worst = kInf;
  for (std::size_t s = 0; s < samples; ++s) {
    halton_point(s, h);
    for (std::size_t d = 0; d < n; ++d) {
      x[d] = box.lower[d] + h[d] * (box.upper[d] - box.lower[d]);
      y[d] = box.lower[d] + h[n + d] * (box.upper[d] - box.lower[d]);
    }
    const auto xh = table.state_grid.nearest(y).point;
    const double r = inf_diff(x, xh);
    const double a = alpha(r);
    for (int c = 0; c <= table.z_max; ++c) {
      const double m = f(x, xh, c) - a;
      const double nm = m / std::max(r * r, 1e-6);
      ++rep.samples;
      if (nm < worst) {
        worst = nm;
        rep.worst_margin = m;
        rep.witness_x = x;
        rep.witness_xh = xh;
        rep.witness_c = {c};
      }
    }
  }
  rep.worst_normalized = rep.samples ? worst : 0.0;
  rep.pass = rep.worst_normalized >= -tol;
  return rep;
}

Condition1Report verify_condition1_global(const GlobalSimFn& g, const KInfFn& alpha,
                                          const ComposedSystem& sys, std::size_t samples,
                                          std::uint64_t seed, double tol) {
  Condition1Report rep;
  if (alpha.is_zero()) {
    rep.note = "lower bound is not of class K-infinity (some mu_i is zero)";
    return rep;
  }
  const std::size_t N = sys.size();
  std::size_t combos = 1;
  for (std::size_t i = 0; i < N && combos <= 64; ++i) combos *= sys.table(i).num_counters();
  Rng rng(Rng::derive(seed, 11));
  double worst = kInf;
  std::vector<int> c(N);
  for (std::size_t s = 0; s < samples; ++s) {
    std::vector<double> x, xh;
    for (std::size_t i = 0; i < N; ++i) {
      const auto& t = sys.table(i);
      const Box& b = t.state_grid.bounds();
      for (std::size_t d = 0; d < b.dim(); ++d) x.push_back(rng.uniform(b.lower[d], b.upper[d]));
      const auto p = t.state_grid.point(rng.index(t.num_cells()));
      xh.insert(xh.end(), p.begin(), p.end());
    }
    const double r = inf_diff(x, xh);
    const double a = alpha(r);
    const std::size_t reps = combos <= 64 ? combos : 1;
    for (std::size_t k = 0; k < reps; ++k) {
      if (combos <= 64) {
        std::size_t id = k;
        for (std::size_t i = N; i-- > 0;) {
          c[i] = static_cast<int>(id % sys.table(i).num_counters());
          id /= sys.table(i).num_counters();
        }
      } else {
        for (std::size_t i = 0; i < N; ++i)
          c[i] = static_cast<int>(rng.index(sys.table(i).num_counters()));
      }
      const double m = g(x, xh, c) - a;
      const double nm = m / std::max(r * r, 1e-6);
      ++rep.samples;
      if (nm < worst) {
        worst = nm;
        rep.worst_margin = m;
        rep.witness_x = x;
        rep.witness_xh = xh;
        rep.witness_c = c;
      }
    }
  }
  rep.worst_normalized = rep.samples ? worst : 0.0;
  rep.pass = rep.worst_normalized >= -tol;
  return rep;
}

// ---------------------------------------------------------------------------
// Fitting

std::vector<double> sigma_grid() {
  std::vector<double> s;
  for (int k = 10; k <= 95; k += 5) s.push_back(k / 100.0);
  return s;
}

namespace {

bool lex_better(double eps, double coef, const Fit& best) {
  if (!best.finite) return true;
  const double te = 1e-15 * std::max(1.0, std::abs(best.eps));
  if (eps < best.eps - te) return true;
  if (eps > best.eps + te) return false;
  return coef < best.rho_coef - 1e-15 * std::max(1.0, std::abs(best.rho_coef));
}

Fit make_fit(double sigma, double eps, double coef, double p) {
  Fit f;
  f.finite = true;
  f.sigma = sigma;
  f.eps = eps;
  f.rho_coef = coef;
  f.rho_exp = p;
  f.rho_u = coef > 0.0 ? KInfFn::power(coef, p) : KInfFn::zero();
  return f;
}

template <class Residual>
Fit fit_generic(const std::vector<FitRecord>& records, double p, bool max_form, Residual residual) {
  if (records.empty()) return make_fit(sigma_grid().front(), 0.0, 0.0, p);
  double umin = kInf;
  for (const auto& r : records) umin = std::min(umin, r.unorm);
  Fit best;
  for (double sigma : sigma_grid()) {
    double eps = 0.0;
    bool finite = true;
    for (const auto& r : records) {
      if (r.unorm > umin + 1e-12) continue;
      const double v = residual(r, sigma);
      if (!std::isfinite(v)) finite = false;
      eps = std::max(eps, v);
    }
    double coef = 0.0;
    for (const auto& r : records) {
      if (r.unorm <= umin + 1e-12) continue;
      const double v = residual(r, sigma);
      if (!std::isfinite(v)) finite = false;
      // In the max form rho alone must reach the residual.
      if (v > eps) coef = std::max(coef, (max_form ? v : v - eps) / std::pow(r.unorm, p));
    }
    if (!finite) continue;
    if (lex_better(eps, coef, best)) best = make_fit(sigma, eps, coef, p);
  }
  return best;
}

}  // namespace

Fit fit_sum_form(const std::vector<FitRecord>& records, double rho_exp) {
  // Need eps + rho(u) >= v_next - sigma v_now - supply. Splitting the
  // residual as eps on the smallest-input records, then (r - eps) / u^p.
  return fit_generic(records, rho_exp, false, [](const FitRecord& r, double sigma) {
    return r.v_next - sigma * r.v_now - r.supply;
  });
}

Fit fit_max_form(const std::vector<FitRecord>& records, double rho_exp) {
  // A record already covered by the sigma term contributes nothing; otherwise
  // its value must be covered by eps or rho.
  return fit_generic(records, rho_exp, true, [](const FitRecord& r, double sigma) {
    return r.v_next <= sigma * r.v_now ? 0.0 : r.v_next;
  });
}

double fit_excess(const Fit& fit, const std::vector<FitRecord>& records, bool max_form) {
  double worst = -kInf;
  for (const auto& r : records) {
    const double rho = fit.rho_u.is_zero() ? 0.0 : fit.rho_u(r.unorm);
    double e;
    if (max_form)
      e = r.v_next - std::max({fit.sigma * r.v_now, rho, fit.eps});
    else
      e = r.v_next - fit.sigma * r.v_now - r.supply - rho - fit.eps;
    worst = std::max(worst, e);
  }
  return records.empty() ? 0.0 : worst;
}

// ---------------------------------------------------------------------------
// Local condition 2

std::vector<LocalTuple> sample_local_tuples(const SubsystemSpec& spec, const TransitionTable& table,
                                            const Condition2Options& opt, std::uint64_t seed) {
  const double eta_x = table.state_grid.eta();
  const double eta_w = table.internal_grid.eta();
  const double xr = opt.xh_radius > 0.0 ? opt.xh_radius : eta_x;
  const double wr = opt.wh_radius > 0.0 ? opt.wh_radius : 2.0 * eta_w;
  const std::size_t refine = std::max<std::size_t>(1, opt.refine);
  const double hx = eta_x / static_cast<double>(refine);
  const Grid fine = build_grid(spec.state_bounds, hx);
  Rng rng(Rng::derive(seed, 21));

  std::vector<std::vector<double>> ws;
  std::vector<std::vector<std::size_t>> whs;
  for (std::size_t id = 0; id < table.num_w(); ++id) {
    auto w = table.internal_grid.point(id);
    for (std::size_t d = 0; d < w.size(); ++d)
      w[d] = std::clamp(w[d] + rng.uniform(-0.5, 0.5) * eta_w, spec.internal_bounds.lower[d],
                        spec.internal_bounds.upper[d]);
    whs.push_back(table.internal_grid.ball(w, wr));
    ws.push_back(std::move(w));
  }

  std::vector<LocalTuple> out;
  for (std::size_t id = 0; id < fine.size(); ++id) {
    auto x = fine.point(id);
    for (std::size_t d = 0; d < x.size(); ++d)
      x[d] = std::clamp(x[d] + rng.uniform(-0.5, 0.5) * hx, spec.state_bounds.lower[d],
                        spec.state_bounds.upper[d]);
    auto cells = table.state_grid.ball(x, xr);
    if (cells.empty()) cells.push_back(table.state_grid.nearest(x).id);
    for (std::size_t cell : cells)
      for (int c = 0; c <= table.z_max; ++c)
        for (std::size_t u = 0; u < table.num_u(); ++u)
          for (std::size_t k = 0; k < ws.size(); ++k)
            for (std::size_t wh : whs[k]) out.push_back({x, {cell, c}, u, ws[k], wh});
  }
  return out;
}

std::optional<AbstractState> best_successor(const std::vector<AbstractState>& candidates,
                                            const LocalSimFn& f, const TransitionTable& table,
                                            std::span<const double> x_next, double* value) {
  std::optional<AbstractState> best;
  double bv = kInf;
  std::vector<double> p(table.arity.n);
  for (const auto& s : candidates) {
    table.state_grid.point_into(s.cell, p);
    const double v = f(x_next, p, s.counter);
    if (v < bv) {
      bv = v;
      best = s;
    }
  }
  if (value) *value = bv;
  return best;
}

namespace {

std::string describe(const LocalTuple& t, Mode m) {
  std::string s = "x = [";
  for (std::size_t i = 0; i < t.x.size(); ++i) s += (i ? ", " : "") + std::to_string(t.x[i]);
  s += "], cell " + std::to_string(t.xh.cell) + ", c = " + std::to_string(t.xh.counter) +
       ", u-hat " + std::to_string(t.u) + ", w-hat " + std::to_string(t.wh) + ", " +
       mode_name(m);
  return s;
}

}  // namespace

std::vector<FitRecord> evaluate_local_tuples(const SubsystemSpec& spec,
                                             const TransitionTable& table, const LocalSimFn& f,
                                             const std::vector<LocalTuple>& tuples,
                                             std::size_t jobs,
                                             std::vector<Counterexample>* counterexamples,
                                             std::size_t* inconsistencies) {
  jobs = std::max<std::size_t>(1, jobs);
  std::vector<std::vector<FitRecord>> recs(jobs);
  std::vector<std::vector<Counterexample>> cex(jobs);
  std::vector<std::size_t> incons(jobs, 0);
  parallel_chunks(tuples.size(), jobs, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    using Key = std::tuple<std::vector<double>, std::vector<double>, std::size_t, int>;
    std::map<Key, std::vector<double>> cache;
    std::vector<double> xh(table.arity.n), wh(table.arity.q), u(table.arity.m);
    for (std::size_t k = begin; k < end; ++k) {
      const LocalTuple& t = tuples[k];
      table.state_grid.point_into(t.xh.cell, xh);
      table.internal_grid.point_into(t.wh, wh);
      table.external_grid.point_into(t.u, u);
      const double v_now = f(t.x, xh, t.xh.counter);
      for (Mode m : {Mode::Flow, Mode::Jump}) {
        if (!mode_admissible(spec, t.xh.counter, m)) continue;
        Key key{t.x, t.w, t.u, static_cast<int>(m)};
        auto it = cache.find(key);
        if (it == cache.end()) {
          std::vector<double> xp;
          try {
            xp = continuous_successor(spec, t.x, t.w, u, m, table.integrator);
          } catch (const Error& e) {
            cex[chunk].push_back({"concrete_failure", describe(t, m) + ": " + e.what()});
            continue;
          }
          it = cache.emplace(std::move(key), std::move(xp)).first;
        }
        const auto& xp = it->second;
        const Successors succ = table.successors(t.xh, t.wh, t.u, m);
        if (succ.blocked) {
          cex[chunk].push_back({"blocked", describe(t, m) + ": abstract successor set is empty"});
          continue;
        }
        double v_next = 0.0;
        const auto best = best_successor(succ.states, f, table, xp, &v_next);
        const auto cells = table.successor_cells(t.xh, t.wh, t.u, m);
        if (!best || !std::binary_search(cells.begin(), cells.end(),
                                         static_cast<std::uint32_t>(best->cell)))
          ++incons[chunk];
        FitRecord r;
        r.v_next = v_next;
        r.v_now = v_now;
        r.supply = supply(m == Mode::Flow ? f.cert->D_c : f.cert->D_d, diff(t.w, wh),
                          diff(t.x, xh));
        r.unorm = inf_norm(u);
        recs[chunk].push_back(r);
      }
    }
  });
  std::vector<FitRecord> out;
  for (std::size_t j = 0; j < jobs; ++j) {
    out.insert(out.end(), recs[j].begin(), recs[j].end());
    if (counterexamples)
      counterexamples->insert(counterexamples->end(), cex[j].begin(), cex[j].end());
    if (inconsistencies) *inconsistencies += incons[j];
  }
  return out;
}

Condition2Report verify_condition2_local(const SubsystemSpec& spec, const TransitionTable& table,
                                         const LocalSimFn& f, const Condition2Options& opt) {
  Condition2Report rep;
  rep.seed = opt.seed;
  const double p = f.cert->rho_uc.is_zero() ? 1.0 : max_exponent(f.cert->rho_uc);
  const auto tuples = sample_local_tuples(spec, table, opt, opt.seed);
  rep.tuples = tuples.size();
  rep.records = evaluate_local_tuples(spec, table, f, tuples, opt.jobs, &rep.counterexamples,
                                      &rep.strategy_inconsistencies);
  rep.transitions = rep.records.size();
  rep.fit = fit_sum_form(rep.records, p);

  const auto fresh = sample_local_tuples(spec, table, opt, Rng::derive(opt.seed, 99));
  std::vector<Counterexample> fresh_cex;
  const auto fresh_records = evaluate_local_tuples(spec, table, f, fresh, opt.jobs, &fresh_cex);
  rep.fresh_excess = fit_excess(rep.fit, fresh_records, false);
  rep.stable = rep.fresh_excess <= opt.stability_slack * rep.fit.eps + 1e-12;
  rep.pass = rep.fit.finite && rep.fit.sigma < 1.0 && rep.counterexamples.empty() &&
             rep.strategy_inconsistencies == 0;
  return rep;
}

// ---------------------------------------------------------------------------
// Global condition 2

std::vector<GlobalTuple> sample_global_tuples(const NetworkSpec& spec, const ComposedSystem& sys,
                                              std::size_t count, double xh_radius,
                                              std::uint64_t seed) {
  Rng rng(Rng::derive(seed, 31));
  std::vector<GlobalTuple> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    GlobalTuple t;
    for (std::size_t i = 0; i < sys.size(); ++i) {
      const auto& tab = sys.table(i);
      const Box& b = spec.subsystems[i].state_bounds;
      std::vector<double> xi(b.dim());
      for (std::size_t d = 0; d < b.dim(); ++d) xi[d] = rng.uniform(b.lower[d], b.upper[d]);
      const double r = xh_radius > 0.0 ? xh_radius : tab.state_grid.eta();
      auto cells = tab.state_grid.ball(xi, r);
      if (cells.empty()) cells.push_back(tab.state_grid.nearest(xi).id);
      const std::size_t cell = cells[rng.index(cells.size())];
      const int c = static_cast<int>(rng.index(tab.num_counters()));
      t.x.insert(t.x.end(), xi.begin(), xi.end());
      t.xh.parts.push_back({cell, c});
      t.u.push_back(rng.index(tab.num_u()));
    }
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

// All admissible mode vectors for the counters of a composed state.
std::vector<std::vector<Mode>> mode_vectors(const ComposedSystem& sys, const ComposedState& s) {
  std::vector<std::vector<Mode>> per(sys.size());
  for (std::size_t i = 0; i < sys.size(); ++i)
    for (Mode m : {Mode::Flow, Mode::Jump})
      if (mode_admissible(sys.table(i).z_min, sys.table(i).z_max, s.parts[i].counter, m))
        per[i].push_back(m);
  std::vector<std::vector<Mode>> out{{}};
  for (const auto& opts : per) {
    std::vector<std::vector<Mode>> next;
    for (const auto& prefix : out)
      for (Mode m : opts) {
        auto v = prefix;
        v.push_back(m);
        next.push_back(std::move(v));
      }
    out = std::move(next);
  }
  return out;
}

std::vector<double> global_input(const ComposedSystem& sys, std::span<const std::size_t> u) {
  std::vector<double> out;
  for (std::size_t i = 0; i < sys.size(); ++i) {
    const auto p = sys.table(i).external_grid.point(u[i]);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

struct MatchedStep {
  bool blocked = false;
  std::string reason;
  std::vector<double> x_next;
  ComposedState xh_next;
  double v_next = 0.0;
};

// Concrete network transition and the abstract successor chosen by the
// existential player (per-subsystem minimization of the weighted sum).
MatchedStep matched_step(const NetworkSpec& spec, const ComposedSystem& sys,
                         const GlobalSimFn& g, std::span<const double> x, const ComposedState& xh,
                         std::span<const std::size_t> u_idx, const std::vector<Mode>& modes,
                         const IntegratorConfig& config) {
  MatchedStep st;
  std::vector<bool> jump(sys.size());
  for (std::size_t i = 0; i < sys.size(); ++i) jump[i] = modes[i] == Mode::Jump;
  const auto u = global_input(sys, u_idx);
  st.x_next = network_step(spec, x, jump, u, config);
  std::vector<std::vector<std::size_t>> choices;
  const auto local = sys.local_successors(xh, u_idx, modes, &choices);
  std::size_t off = 0;
  for (std::size_t i = 0; i < sys.size(); ++i) {
    const std::size_t n = sys.table(i).arity.n;
    if (choices[i].empty() || local[i].blocked) {
      st.blocked = true;
      st.reason = "subsystem '" + sys.table(i).name + "' has no abstract successor";
      return st;
    }
    double v = 0.0;
    const auto best = best_successor(local[i].states, g.locals[i], sys.table(i),
                                     std::span<const double>(st.x_next).subspan(off, n), &v);
    st.xh_next.parts.push_back(*best);
    st.v_next += g.mu[i] * v;
    off += n;
  }
  return st;
}

std::vector<int> counters_of(const ComposedState& s) {
  std::vector<int> c;
  for (const auto& p : s.parts) c.push_back(p.counter);
  return c;
}

}  // namespace

std::vector<FitRecord> evaluate_global_tuples(const NetworkSpec& spec, const ComposedSystem& sys,
                                              const GlobalSimFn& g,
                                              const std::vector<GlobalTuple>& tuples,
                                              const IntegratorConfig& config, std::size_t jobs,
                                              std::vector<Counterexample>* counterexamples) {
  jobs = std::max<std::size_t>(1, jobs);
  std::vector<std::vector<FitRecord>> recs(jobs);
  std::vector<std::vector<Counterexample>> cex(jobs);
  parallel_chunks(tuples.size(), jobs, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const GlobalTuple& t = tuples[k];
      const auto xh = sys.point(t.xh);
      const auto c = counters_of(t.xh);
      const double v_now = g(t.x, xh, c);
      const double unorm = inf_norm(global_input(sys, t.u));
      for (const auto& modes : mode_vectors(sys, t.xh)) {
        MatchedStep st;
        try {
          st = matched_step(spec, sys, g, t.x, t.xh, t.u, modes, config);
        } catch (const Error& e) {
          cex[chunk].push_back({"concrete_failure", "tuple " + std::to_string(k) + ": " + e.what()});
          continue;
        }
        if (st.blocked) {
          cex[chunk].push_back({"blocked", "tuple " + std::to_string(k) + ": " + st.reason});
          continue;
        }
        recs[chunk].push_back({st.v_next, v_now, 0.0, unorm});
      }
    }
  });
  std::vector<FitRecord> out;
  for (std::size_t j = 0; j < jobs; ++j) {
    out.insert(out.end(), recs[j].begin(), recs[j].end());
    if (counterexamples)
      counterexamples->insert(counterexamples->end(), cex[j].begin(), cex[j].end());
  }
  return out;
}

Condition2Report verify_condition2_global(const NetworkSpec& spec, const ComposedSystem& sys,
                                          const GlobalSimFn& g, const IntegratorConfig& config,
                                          double rho_exp, const Condition2Options& opt) {
  Condition2Report rep;
  rep.seed = opt.seed;
  const auto tuples = sample_global_tuples(spec, sys, opt.global_tuples, opt.xh_radius, opt.seed);
  rep.tuples = tuples.size();
  rep.records =
      evaluate_global_tuples(spec, sys, g, tuples, config, opt.jobs, &rep.counterexamples);
  rep.transitions = rep.records.size();
  rep.fit = fit_max_form(rep.records, rho_exp);
  const auto fresh = sample_global_tuples(spec, sys, opt.global_tuples, opt.xh_radius,
                                          Rng::derive(opt.seed, 99));
  std::vector<Counterexample> fresh_cex;
  const auto fresh_records = evaluate_global_tuples(spec, sys, g, fresh, config, opt.jobs,
                                                    &fresh_cex);
  rep.fresh_excess = fit_excess(rep.fit, fresh_records, true);
  rep.stable = rep.fresh_excess <= opt.stability_slack * rep.fit.eps + 1e-12;
  rep.pass = rep.fit.finite && rep.fit.sigma < 1.0 && rep.counterexamples.empty();
  return rep;
}

// ---------------------------------------------------------------------------
// Trajectory bound

namespace {

struct RunResult {
  double max_ratio = 0.0;
  double max_dist = 0.0;
  std::size_t steps = 0;
  std::size_t violations = 0;
  std::size_t level_violations = 0;
  bool blocked = false;
  std::vector<double> time, dist;
  std::vector<std::vector<double>> xs, xhs;
  std::vector<std::vector<int>> cs;
};

RunResult run_one(const NetworkSpec& spec, const ComposedSystem& sys, const GlobalSimFn& g,
                  const IntegratorConfig& config, std::size_t horizon, double eps_hat,
                  double rmax, std::uint64_t seed) {
  Rng rng(seed);
  RunResult rr;
  const std::size_t N = sys.size();
  const double tau = spec.common_tau();
  ComposedState xh;
  for (std::size_t i = 0; i < N; ++i) xh.parts.push_back({rng.index(sys.table(i).num_cells()), 0});
  const auto xh0 = sys.point(xh);
  const std::vector<int> c0(N, 0);
  // Initial concrete state inside the level set {S <= eps}.
  std::vector<double> x = xh0;
  const double radius = g.eps > 0.0 ? g.alpha.inverse(g.eps) : 0.0;
  for (int attempt = 0; attempt < 100 && radius > 0.0; ++attempt) {
    std::vector<double> cand(xh0.size());
    std::size_t off = 0;
    bool inside = true;
    for (std::size_t i = 0; i < N; ++i) {
      const Box& b = spec.subsystems[i].state_bounds;
      for (std::size_t d = 0; d < b.dim(); ++d) {
        cand[off + d] = xh0[off + d] + rng.uniform(-radius, radius);
        inside = inside && cand[off + d] >= b.lower[d] && cand[off + d] <= b.upper[d];
      }
      off += b.dim();
    }
    if (inside && g(cand, xh0, c0) <= g.eps) {
      x = std::move(cand);
      break;
    }
  }
  const double s0 = g(x, xh0, c0);
  auto record = [&](std::size_t k, const std::vector<double>& xx, const ComposedState& s) {
    const auto p = sys.point(s);
    const double d = inf_diff(xx, p);
    const auto c = counters_of(s);
    rr.time.push_back(static_cast<double>(k) * tau);
    rr.xs.push_back(xx);
    rr.xhs.push_back(p);
    rr.cs.push_back(c);
    rr.dist.push_back(d);
    rr.max_dist = std::max(rr.max_dist, d);
    const double ratio = eps_hat > 0.0 ? d / eps_hat : (d > 0.0 ? kInf : 0.0);
    rr.max_ratio = std::max(rr.max_ratio, ratio);
    if (d > eps_hat * (1.0 + 1e-12) + 1e-15) ++rr.violations;
    const double rho = g.rho_u.is_zero() ? 0.0 : g.rho_u(rmax);
    const double env = std::max({std::pow(g.sigma, static_cast<double>(k)) * s0, rho, g.eps});
    if (g(xx, p, c) > env * (1.0 + 1e-9) + 1e-12) ++rr.level_violations;
  };
  record(0, x, xh);
  for (std::size_t k = 0; k < horizon; ++k) {
    std::vector<std::size_t> u(N);
    std::vector<Mode> modes(N);
    for (std::size_t i = 0; i < N; ++i) {
      const auto& t = sys.table(i);
      u[i] = rng.index(t.num_u());
      const int c = xh.parts[i].counter;
      const bool can_flow = mode_admissible(t.z_min, t.z_max, c, Mode::Flow);
      const bool can_jump = mode_admissible(t.z_min, t.z_max, c, Mode::Jump);
      modes[i] = can_flow && can_jump ? (rng.coin() ? Mode::Jump : Mode::Flow)
                                      : (can_jump ? Mode::Jump : Mode::Flow);
    }
    const MatchedStep st = matched_step(spec, sys, g, x, xh, u, modes, config);
    if (st.blocked) {
      rr.blocked = true;
      break;
    }
    x = st.x_next;
    xh = st.xh_next;
    ++rr.steps;
    record(k + 1, x, xh);
  }
  return rr;
}

}  // namespace

TrajectoryReport verify_trajectory_bound(const NetworkSpec& spec, const ComposedSystem& sys,
                                         const GlobalSimFn& g, const IntegratorConfig& config,
                                         const TrajectoryOptions& opt) {
  TrajectoryReport rep;
  rep.runs = opt.runs;
  double rmax = 0.0;
  for (std::size_t i = 0; i < sys.size(); ++i)
    for (std::size_t id = 0; id < sys.table(i).num_u(); ++id)
      rmax = std::max(rmax, inf_norm(sys.table(i).external_grid.point(id)));
  rep.input_norm = rmax;
  rep.eps_hat = deviation_bound(g.alpha, g.rho_u, g.eps, rmax);

  const std::size_t jobs = std::max<std::size_t>(1, opt.jobs);
  std::vector<RunResult> best(jobs);
  std::vector<std::size_t> best_run(jobs, 0);
  std::vector<bool> have(jobs, false);
  std::vector<std::size_t> steps(jobs, 0), viol(jobs, 0), lviol(jobs, 0), blocked(jobs, 0);
  parallel_chunks(opt.runs, jobs, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      RunResult rr = run_one(spec, sys, g, config, opt.horizon, rep.eps_hat, rmax,
                             Rng::derive(opt.seed, 1000 + r));
      steps[chunk] += rr.steps;
      viol[chunk] += rr.violations;
      lviol[chunk] += rr.level_violations;
      blocked[chunk] += rr.blocked ? 1 : 0;
      if (!have[chunk] || rr.max_ratio > best[chunk].max_ratio) {
        have[chunk] = true;
        best_run[chunk] = r;
        best[chunk] = std::move(rr);
      }
    }
  });
  const RunResult* worst = nullptr;
  for (std::size_t j = 0; j < jobs; ++j) {
    rep.steps += steps[j];
    rep.violations += viol[j];
    rep.level_set_violations += lviol[j];
    rep.blocked += blocked[j];
    if (have[j] && (!worst || best[j].max_ratio > worst->max_ratio)) {
      worst = &best[j];
      rep.worst_run = best_run[j];
    }
  }
  if (worst) {
    rep.max_ratio = worst->max_ratio;
    for (std::size_t j = 0; j < jobs; ++j)
      if (have[j]) rep.max_distance = std::max(rep.max_distance, best[j].max_dist);
    rep.trace_time = worst->time;
    rep.trace_x = worst->xs;
    rep.trace_xh = worst->xhs;
    rep.trace_c = worst->cs;
    rep.trace_dist = worst->dist;
  }
  rep.pass = rep.violations == 0 && rep.blocked == 0 && rep.max_ratio <= 1.0;
  return rep;
}

void write_trace_csv(std::ostream& os, const NetworkSpec& spec, const TrajectoryReport& rep) {
  os << "step,time";
  for (const auto& s : spec.subsystems)
    for (std::size_t k = 0; k < s.arity.n; ++k) os << ",x_" << s.name << '_' << (k + 1);
  for (const auto& s : spec.subsystems)
    for (std::size_t k = 0; k < s.arity.n; ++k) os << ",xh_" << s.name << '_' << (k + 1);
  for (const auto& s : spec.subsystems) os << ",c_" << s.name;
  os << ",distance,eps_hat\n";
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t k = 0; k < rep.trace_time.size(); ++k) {
    os << k << ',' << num(rep.trace_time[k]);
    for (double v : rep.trace_x[k]) os << ',' << num(v);
    for (double v : rep.trace_xh[k]) os << ',' << num(v);
    for (int c : rep.trace_c[k]) os << ',' << c;
    os << ',' << num(rep.trace_dist[k]) << ',' << num(rep.eps_hat) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Safety game

Game game_from_table(const TransitionTable& table) {
  Game g;
  g.num_states = table.num_states();
  g.num_inputs = table.num_u();
  g.offsets.assign(g.num_states * g.num_inputs + 1, 0);
  g.disabled.assign(g.num_states * g.num_inputs, 0);
  std::vector<std::uint64_t> ids;
  for (std::size_t s = 0; s < g.num_states; ++s) {
    const AbstractState a = table.state_of(s);
    for (std::size_t u = 0; u < g.num_inputs; ++u) {
      const std::size_t k = s * g.num_inputs + u;
      g.offsets[k] = g.succ.size();
      ids.clear();
      bool blocked = false;
      for (std::size_t w = 0; w < table.num_w() && !blocked; ++w) {
        const Successors succ = table.successors(a, w, u);
        if (succ.blocked || succ.any_blocked) blocked = true;
        for (const auto& t : succ.states) ids.push_back(table.state_id(t));
      }
      if (blocked) {
        g.disabled[k] = 1;
        continue;
      }
      std::sort(ids.begin(), ids.end());
      ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
      g.succ.insert(g.succ.end(), ids.begin(), ids.end());
    }
  }
  g.offsets[g.num_states * g.num_inputs] = g.succ.size();
  return g;
}

Game game_from_composed(const ComposedSystem& sys, std::size_t cap, std::size_t jobs) {
  Game g;
  g.num_states = sys.num_states();
  if (g.num_states > cap)
    throw InputError("composed state space has " + std::to_string(g.num_states) +
                     " states, above the cap of " + std::to_string(cap));
  g.num_inputs = sys.num_inputs();
  const std::size_t keys = g.num_states * g.num_inputs;
  g.offsets.assign(keys + 1, 0);
  g.disabled.assign(keys, 0);
  jobs = std::max<std::size_t>(1, jobs);
  std::vector<std::vector<std::uint64_t>> succ(jobs);
  std::vector<std::vector<std::uint64_t>> counts(jobs);
  parallel_chunks(g.num_states, jobs, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      const ComposedState cs = sys.state_of(s);
      for (std::size_t in = 0; in < g.num_inputs; ++in) {
        const auto u = sys.input_of(in);
        const ComposedStep step = sys.successors(cs, u);
        if (step.blocked || step.any_blocked) {
          g.disabled[s * g.num_inputs + in] = 1;
          counts[chunk].push_back(0);
          continue;
        }
        std::vector<std::uint64_t> ids;
        ids.reserve(step.states.size());
        for (const auto& t : step.states) ids.push_back(sys.id_of(t));
        std::sort(ids.begin(), ids.end());
        succ[chunk].insert(succ[chunk].end(), ids.begin(), ids.end());
        counts[chunk].push_back(ids.size());
      }
    }
  });
  std::size_t k = 0;
  std::uint64_t pos = 0;
  for (std::size_t j = 0; j < jobs; ++j) {
    for (std::uint64_t c : counts[j]) {
      g.offsets[k++] = pos;
      pos += c;
    }
    g.succ.insert(g.succ.end(), succ[j].begin(), succ[j].end());
  }
  g.offsets[keys] = pos;
  return g;
}

SafetyController safety_fixpoint(const Game& game, const std::vector<bool>& safe,
                                 std::size_t cap) {
  if (game.num_states > cap)
    throw InputError("safety game has " + std::to_string(game.num_states) +
                     " states, above the cap of " + std::to_string(cap));
  if (safe.size() != game.num_states)
    throw DimensionError("safe predicate must cover every state");
  SafetyController ctl;
  std::vector<bool> W = safe;
  std::size_t size = static_cast<std::size_t>(std::count(W.begin(), W.end(), true));
  ctl.sizes.push_back(size);
  auto input_ok = [&](const std::vector<bool>& set, std::size_t s, std::size_t u) {
    if (game.disabled[s * game.num_inputs + u]) return false;
    for (std::uint64_t t : game.successors(s, u))
      if (!set[t]) return false;
    return true;
  };
  while (true) {
    ++ctl.iterations;
    std::vector<bool> next(game.num_states, false);
    std::size_t nsize = 0;
    for (std::size_t s = 0; s < game.num_states; ++s) {
      if (!W[s]) continue;
      for (std::size_t u = 0; u < game.num_inputs; ++u)
        if (input_ok(W, s, u)) {
          next[s] = true;
          ++nsize;
          break;
        }
    }
    for (std::size_t s = 0; s < game.num_states; ++s)
      if (next[s] && !W[s]) ctl.monotone = false;
    ctl.sizes.push_back(nsize);
    const bool fixed = nsize == size;
    W = std::move(next);
    size = nsize;
    if (fixed) break;
  }
  ctl.winning = W;
  ctl.allowed.assign(game.num_states, {});
  for (std::size_t s = 0; s < game.num_states; ++s) {
    if (!W[s]) continue;
    for (std::size_t u = 0; u < game.num_inputs; ++u)
      if (input_ok(W, s, u)) ctl.allowed[s].push_back(u);
  }
  return ctl;
}

}  // namespace impsym
