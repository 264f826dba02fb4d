#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"

#include "impsym/abstraction.hpp"
#include "impsym/composer.hpp"
#include "impsym/error.hpp"
#include "impsym/verifier.hpp"
#include "support.hpp"

using namespace impsym;

namespace {

const IntegratorConfig kStep{1e-3, 1e6};

struct Demo {
  NetworkSpec spec = test::demo_spec();
  std::vector<Certificate> certs = test::demo_certs(spec);
  TransitionTable a, b;
  Demo() {
    a = build_abstraction(spec.subsystems[0], 0.05, 0.05, 0.25, kStep);
    b = build_abstraction(spec.subsystems[1], 0.05, 0.05, 0.25, kStep);
  }
  LocalSimFn simfn(std::size_t i) const { return build_local_simfn(certs[i], 0.5, 3.0, 2, 0.1); }
};

const Demo& demo() {
  static const Demo d;
  return d;
}

// Winning set by repeated backward elimination over explicit sets.
std::set<std::size_t> naive_winning(const Game& g, const std::vector<bool>& safe) {
  std::set<std::size_t> W;
  for (std::size_t s = 0; s < g.num_states; ++s)
    if (safe[s]) W.insert(s);
  for (bool changed = true; changed;) {
    changed = false;
    for (auto it = W.begin(); it != W.end();) {
      bool ok = false;
      for (std::size_t u = 0; u < g.num_inputs && !ok; ++u) {
        if (g.disabled[*it * g.num_inputs + u]) continue;
        const auto succ = g.successors(*it, u);
        ok = std::all_of(succ.begin(), succ.end(), [&](std::uint64_t t) { return W.count(t) > 0; });
      }
      if (ok) {
        ++it;
      } else {
        it = W.erase(it);
        changed = true;
      }
    }
  }
  return W;
}

Game random_game(std::mt19937& rng, std::size_t S, std::size_t U) {
  Game g;
  g.num_states = S;
  g.num_inputs = U;
  g.offsets.push_back(0);
  for (std::size_t k = 0; k < S * U; ++k) {
    const bool off = rng() % 6 == 0;
    g.disabled.push_back(off ? 1 : 0);
    if (!off) {
      const std::size_t deg = 1 + rng() % 3;
      std::set<std::uint64_t> t;
      while (t.size() < deg) t.insert(rng() % S);
      g.succ.insert(g.succ.end(), t.begin(), t.end());
    }
    g.offsets.push_back(g.succ.size());
  }
  return g;
}

}  // namespace

TEST_CASE("condition 1 on the demo subsystem") {
  const auto f = demo().simfn(0);
  CHECK(local_alpha(f)(0.3) == doctest::Approx(0.09));
  const auto ok = verify_condition1(f, KInfFn::power(1.0, 2.0), demo().a, 2048);
  CHECK(ok.pass);
  const auto bad = verify_condition1(f, KInfFn::power(2.0, 2.0), demo().a, 2048);
  CHECK_FALSE(bad.pass);
  CHECK(bad.worst_margin < 0.0);
  CHECK_FALSE(verify_condition1(f, KInfFn::zero(), demo().a, 16).pass);
}

TEST_CASE("global lower bound stays below every weighted local bound") {
  const std::vector<KInfFn> alphas{KInfFn::parse("2:1"), KInfFn::parse("1:2, 0.5:3")};
  const double R = 1.5;
  const std::vector<double> mu{1.0, 3.0};
  const KInfFn g = global_alpha(mu, alphas, R);
  REQUIRE(g.single_term());
  CHECK(g.single_term()->p == 3.0);
  for (int k = 0; k <= 300; ++k) {
    const double r = R * k / 300.0;
    CHECK(g(r) <= std::min(mu[0] * alphas[0](r), mu[1] * alphas[1](r)) * (1 + 1e-12));
  }
  CHECK(global_alpha({1.0, 1.0}, {KInfFn::power(1, 2), KInfFn::power(1, 2)}, 1.0)(0.5) == 0.25);
  CHECK(global_alpha({1.0, 0.0}, alphas, R).is_zero());
}

TEST_CASE("zero weight makes global condition 1 fail") {
  const ComposedSystem sys({&demo().a, &demo().b}, demo().spec.M, {0.0, 0.0});
  const GlobalSimFn g = compose_simfn({1.0, 0.0}, {demo().simfn(0), demo().simfn(1)});
  const auto alpha = global_alpha(g.mu, {local_alpha(g.locals[0]), local_alpha(g.locals[1])}, 1.0);
  const auto rep = verify_condition1_global(g, alpha, sys, 256, 3);
  CHECK_FALSE(rep.pass);
  CHECK_FALSE(rep.note.empty());

  const GlobalSimFn h = compose_simfn({1.0, 1.0}, {demo().simfn(0), demo().simfn(1)});
  CHECK(verify_condition1_global(h, KInfFn::power(1.0, 2.0), sys, 1024, 3).pass);
}

TEST_CASE("sigma grid") {
  const auto s = sigma_grid();
  CHECK(s.size() == 18);
  CHECK(s.front() == doctest::Approx(0.10));
  CHECK(s.back() == doctest::Approx(0.95));
}

TEST_CASE("fits cover their own records") {
  std::mt19937 rng(21);
  std::uniform_real_distribution<double> v(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<FitRecord> recs;
    const std::size_t n = 5 + rng() % 40;
    for (std::size_t k = 0; k < n; ++k) {
      const double u = (rng() % 3) * 0.25;
      recs.push_back({v(rng), v(rng), v(rng) - 0.5, u});
    }
    for (bool max_form : {false, true}) {
      const double p = 1.0 + (rng() % 2);
      const Fit fit = max_form ? fit_max_form(recs, p) : fit_sum_form(recs, p);
      REQUIRE(fit.finite);
      CHECK(fit.eps >= 0.0);
      CHECK(fit.rho_coef >= 0.0);
      CHECK_MESSAGE(fit_excess(fit, recs, max_form) <= 1e-12, "max_form=" << max_form);
    }
  }
}

TEST_CASE("sum-form fit recovers a planted bound") {
  // v_next = 0.5 v_now + 0.1 u^2 + 0.01. Every sigma >= 0.5 gives eps = 0.01
  // and coef = 0.1 (attained at v_now = 0), so the tie goes to 0.5.
  std::vector<FitRecord> recs;
  for (int i = 0; i <= 10; ++i)
    for (double u : {0.0, 0.25, 0.5}) {
      const double vn = 0.1 * i;
      recs.push_back({0.5 * vn + 0.1 * u * u + 0.01, vn, 0.0, u});
    }
  const Fit fit = fit_sum_form(recs, 2.0);
  CHECK(fit.sigma == doctest::Approx(0.5));
  CHECK(fit.eps <= 0.01 + 1e-12);
  CHECK(fit.rho_coef <= 0.1 + 1e-12);
  CHECK(fit.rho_exp == 2.0);

  // Max form: everything below 0.5 v_now needs neither eps nor rho.
  std::vector<FitRecord> contracting;
  for (int i = 1; i <= 10; ++i) contracting.push_back({0.05 * i, 0.1 * i, 0.0, 0.25});
  const Fit mf = fit_max_form(contracting, 1.0);
  CHECK(mf.eps == 0.0);
  CHECK(mf.rho_coef == 0.0);
}

TEST_CASE("single subsystem: global records equal local records") {
  const NetworkSpec spec = test::spec_from(test::scalar_system("-x1 + u1", "0.5*x1", 0.1, 1, 2, "0"));
  const TransitionTable t = build_abstraction(spec.subsystems[0], 0.05, 0.05, 0.25, kStep);
  Certificate cert = demo().certs[0];
  cert.subsystem = "s";
  const LocalSimFn f = build_local_simfn(cert, 0.5, 3.0, 2, 0.1);
  const GlobalSimFn g = compose_simfn({1.0}, {f});
  const ComposedSystem sys({&t}, spec.M, {0.0});
  std::mt19937 rng(6);
  std::uniform_real_distribution<double> x01(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    const double x = x01(rng);
    const AbstractState xh{t.state_grid.nearest(std::vector<double>{x}).id, static_cast<int>(rng() % 3)};
    const std::size_t u = rng() % 3;
    const LocalTuple lt{{x}, xh, u, {0.0}, 0};
    const GlobalTuple gt{{x}, ComposedState{{xh}}, {u}};
    std::vector<Counterexample> cl, cg;
    auto lr = evaluate_local_tuples(spec.subsystems[0], t, f, {lt}, 1, &cl);
    auto gr = evaluate_global_tuples(spec, sys, g, {gt}, kStep, 1, &cg);
    CHECK(cl.empty());
    CHECK(cg.empty());
    REQUIRE(lr.size() == gr.size());
    auto key = [](const FitRecord& r) { return std::make_pair(r.v_now, r.v_next); };
    std::vector<std::pair<double, double>> a, b;
    for (const auto& r : lr) a.push_back(key(r));
    for (const auto& r : gr) b.push_back(key(r));
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == doctest::Approx(b[i].first).epsilon(1e-12));
      CHECK(a[i].second == doctest::Approx(b[i].second).epsilon(1e-12));
    }
  }
}

TEST_CASE("local condition 2 on the demo subsystem") {
  Condition2Options opt;
  opt.seed = 5;
  const auto rep = verify_condition2_local(demo().spec.subsystems[0], demo().a, demo().simfn(0), opt);
  CHECK(rep.pass);
  CHECK(rep.fit.sigma < 1.0);
  CHECK(rep.strategy_inconsistencies == 0);
  CHECK(rep.counterexamples.empty());
  CHECK(fit_excess(rep.fit, rep.records, false) <= 1e-12);

  // A coarser grid cannot give a smaller additive constant.
  const TransitionTable coarse =
      build_abstraction(demo().spec.subsystems[0], 0.1, 0.1, 0.25, kStep);
  const auto crep = verify_condition2_local(demo().spec.subsystems[0], coarse, demo().simfn(0), opt);
  CHECK(crep.fit.eps >= rep.fit.eps);
}

TEST_CASE("trajectory bound with horizon zero") {
  const ComposedSystem sys({&demo().a, &demo().b}, demo().spec.M, {0.0, 0.0});
  GlobalSimFn g = compose_simfn({1.0, 1.0}, {demo().simfn(0), demo().simfn(1)});
  g.sigma = 0.95;
  g.eps = 0.002;
  g.rho_u = KInfFn::power(0.004, 2.0);
  g.alpha = KInfFn::power(1.0, 2.0);
  TrajectoryOptions opt;
  opt.runs = 20;
  opt.horizon = 0;
  const auto rep = verify_trajectory_bound(demo().spec, sys, g, kStep, opt);
  CHECK(rep.pass);
  CHECK(rep.steps == 0);
  CHECK(rep.max_distance <= rep.eps_hat);
  CHECK(rep.eps_hat == doctest::Approx(deviation_bound(g.alpha, g.rho_u, g.eps, 0.5)));
  std::ostringstream os;
  write_trace_csv(os, demo().spec, rep);
  const std::string csv = os.str();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("safety fixpoint agrees with naive elimination") {
  std::mt19937 rng(31);
  for (int t = 0; t < 100; ++t) {
    const std::size_t S = 5 + rng() % 40, U = 1 + rng() % 3;
    const Game g = random_game(rng, S, U);
    std::vector<bool> safe(S);
    for (std::size_t s = 0; s < S; ++s) safe[s] = rng() % 4 != 0;
    const auto ctl = safety_fixpoint(g, safe);
    const auto want = naive_winning(g, safe);
    for (std::size_t s = 0; s < S; ++s) {
      CHECK(ctl.winning[s] == (want.count(s) > 0));
      for (std::size_t u : ctl.allowed[s]) {
        CHECK_FALSE(g.disabled[s * U + u]);
        for (auto n : g.successors(s, u)) CHECK(want.count(n) > 0);
      }
      if (ctl.winning[s]) CHECK_FALSE(ctl.allowed[s].empty());
    }
    CHECK(ctl.monotone);
    CHECK(std::is_sorted(ctl.sizes.rbegin(), ctl.sizes.rend()));
  }
}

TEST_CASE("safety on the demo table") {
  const TransitionTable& t = demo().a;
  const Game g = game_from_table(t);
  CHECK(g.num_states == t.num_states());
  CHECK(g.num_inputs == t.num_u());
  auto safe_in = [&](double lo, double hi) {
    std::vector<bool> safe(t.num_states());
    for (std::size_t id = 0; id < safe.size(); ++id) {
      const double x = t.state_grid.point(t.state_of(id).cell)[0];
      safe[id] = x >= lo - 1e-12 && x <= hi + 1e-12;
    }
    return safe;
  };
  auto count = [](const SafetyController& c) {
    return static_cast<std::size_t>(std::count(c.winning.begin(), c.winning.end(), true));
  };
  CHECK(count(safety_fixpoint(g, safe_in(0.0, 1.0))) == t.num_states());
  CHECK(count(safety_fixpoint(g, safe_in(2.0, 3.0))) == 0);
  // Repeated halving jumps leave [0.2, 0.8] from every cell.
  CHECK(count(safety_fixpoint(g, safe_in(0.2, 0.8))) == 0);
  CHECK(count(safety_fixpoint(g, safe_in(0.0, 0.8))) == 17 * 3);
}

TEST_CASE("composed game sizes") {
  const ComposedSystem sys({&demo().a, &demo().b}, demo().spec.M, {0.0, 0.0});
  const Game g = game_from_composed(sys, 1'000'000, 2);
  CHECK(g.num_states == 63 * 63);
  CHECK(g.num_inputs == 9);
  CHECK_THROWS_AS(game_from_composed(sys, 100), InputError);
  const Game h = game_from_composed(sys, 1'000'000, 1);
  CHECK(h.succ == g.succ);
  CHECK(h.disabled == g.disabled);
}
