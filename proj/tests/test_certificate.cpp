#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "doctest.h"

#include "impsym/certificate.hpp"
#include "impsym/error.hpp"
#include "impsym/grid.hpp"
#include "support.hpp"

using namespace impsym;

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << "(" << v << ")";
  return os.str();
}

Eigen::MatrixXd mat2(double a, double b, double c, double d) {
  Eigen::MatrixXd m(2, 2);
  m << a, b, c, d;
  return m;
}

}  // namespace

TEST_CASE("comparison function text form") {
  const KInfFn f = KInfFn::parse("2:1, 1:2");
  CHECK(f(3.0) == 15.0);
  CHECK(f(0.0) == 0.0);
  CHECK(std::abs(f(f.inverse(7.5)) - 7.5) <= 1e-10);
  CHECK(KInfFn::parse(f.to_string())(1.7) == f(1.7));
  CHECK(KInfFn::parse("zero").is_zero());
  CHECK(KInfFn::parse("zero")(5.0) == 0.0);
  CHECK(KInfFn::parse("1:2").inverse(0.25) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(KInfFn::parse("0:2"), InputError);
  CHECK_THROWS_AS(KInfFn::parse("1:0.5"), InputError);
  CHECK_THROWS_AS(KInfFn::parse("abc"), InputError);
  CHECK_THROWS(KInfFn::zero().inverse(1.0));
}

TEST_CASE("inverse is monotone and exact on random sums") {
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> a(0.1, 3.0), p(1.0, 4.0), v(0.0, 50.0);
  for (int k = 0; k < 200; ++k) {
    const KInfFn f = KInfFn::from_terms({{a(rng), p(rng)}, {a(rng), p(rng)}});
    const double y = v(rng);
    const double r = f.inverse(y);
    CHECK(std::abs(f(r) - y) <= 1e-9 * std::max(1.0, y));
    CHECK(f.inverse(y + 1.0) > r);
  }
}

TEST_CASE("supply examples") {
  const Eigen::MatrixXd D = mat2(0.0, 0.5, 0.5, -1.0);
  const std::vector<double> dw{2.0}, dx{3.0};
  CHECK(supply(D, dw, dx) == 2.0 * 0.5 * 2.0 * 3.0 - 9.0);
}

TEST_CASE("demo certificates pass their sampled checks") {
  const NetworkSpec spec = test::demo_spec();
  const auto certs = test::demo_certs(spec);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    CHECK(check_sandwich(certs[i], spec.subsystems[i]).pass);
    CHECK(check_flow_dissipativity(certs[i], spec.subsystems[i]).pass);
    CHECK(check_jump_dissipativity(certs[i], spec.subsystems[i]).pass);
    CHECK(check_triangle(certs[i], spec.subsystems[i].state_bounds).pass);
  }
}

TEST_CASE("sampled checks catch wrong certificates") {
  const NetworkSpec spec = test::demo_spec();
  auto cert = test::demo_certs(spec)[0];
  const auto& a = spec.subsystems[0];

  auto lower = cert;
  lower.alpha_lower = KInfFn::power(2.0, 2.0);
  const auto sw = check_sandwich(lower, a);
  CHECK_FALSE(sw.pass);
  CHECK(sw.worst_margin < 0.0);

  auto tri = cert;
  tri.gamma_hat = KInfFn::power(0.5, 2.0);
  CHECK_FALSE(check_triangle(tri, a.state_bounds).pass);

  // Jump 0.5 x scales V by 0.25.
  auto jump = cert;
  jump.kappa_d = 0.2;
  CHECK_FALSE(check_jump_dissipativity(jump, a).pass);
  jump.kappa_d = 0.25;
  CHECK(check_jump_dissipativity(jump, a).pass);
}

TEST_CASE("scalar linear flows: sampled check agrees with the 2x2 criterion") {
  // f = a x + b w, V = (x - xh)^2. The condition is z^T L z <= 0 for
  // z = [dw; dx] with L = [[-D11, b - D12], [b - D12, 2a + kappa - D22]].
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> coef(-2.0, 2.0), kap(0.0, 1.0);
  const NetworkSpec demo = test::demo_spec();
  const Certificate base = test::demo_certs(demo)[0];
  int holds = 0, fails = 0;
  while (holds + fails < 60) {
    const double a = coef(rng), b = coef(rng), kappa = kap(rng);
    const double d11 = coef(rng) - 1.0, d12 = coef(rng), d22 = coef(rng);
    const double l11 = -d11, l12 = b - d12, l22 = 2 * a + kappa - d22;
    const double tr = l11 + l22, det = l11 * l22 - l12 * l12;
    const double lmax = 0.5 * (tr + std::sqrt(tr * tr - 4 * det));
    if (std::abs(lmax) < 0.05) continue;
    const bool want = lmax < 0.0;
    if (want && holds >= 30) continue;
    if (!want && fails >= 30) continue;

    const NetworkSpec spec =
        test::spec_from(test::scalar_system(num(a) + "*x1 + " + num(b) + "*w1", "x1"));
    Certificate cert = base;
    cert.subsystem = "s";
    cert.kappa_c = kappa;
    cert.D_c = mat2(d11, d12, d12, d22);
    cert.rho_uc = KInfFn::zero();
    const auto sampled = check_flow_dissipativity(cert, spec.subsystems[0], {1024});
    CHECK_MESSAGE(sampled.pass == want, "a=" << a << " b=" << b << " lmax=" << lmax);

    Eigen::MatrixXd P(1, 1), A(1, 1), B(1, 1);
    P << 1.0;
    A << a;
    B << b;
    const auto exact = quadratic_oracle(P, A, B, Eigen::MatrixXd(), kappa, cert.D_c);
    CHECK(exact.holds == want);
    CHECK(exact.max_eigenvalue == doctest::Approx(lmax).epsilon(1e-9));
    (want ? holds : fails)++;
  }
}

TEST_CASE("dwell time sweep matches the closed form") {
  for (double kc : {-0.5, 0.0, 0.4, 2.0})
    for (double kd : {0.1, 0.9, 1.0, 1.3, 3.0})
      for (int zmin = 1; zmin <= 3; ++zmin) {
        const auto r = check_dwell_time(kc, kd, 0.1, zmin, zmin + 2);
        const bool want = kd < std::exp(kc * 0.1 * zmin) && kd < std::exp(kc * 0.1 * (zmin + 2));
        CHECK(r.pass == want);
      }
  CHECK(check_dwell_time(0.4, 0.3, 0.1, 1, 2).pass);
  CHECK_FALSE(check_dwell_time(-0.1, 2.0, 0.1, 1, 2).pass);
  CHECK_THROWS_AS(check_dwell_time(0.4, 0.0, 0.1, 1, 2), InputError);
}

TEST_CASE("simulation function cases") {
  CHECK(classify_case(0.4, 0.3) == SimFnCase::A);
  CHECK(classify_case(0.4, 1.5) == SimFnCase::B);
  CHECK(classify_case(-0.1, 0.5) == SimFnCase::C);
  CHECK(classify_case(0.0, 0.5) == SimFnCase::C);
  CHECK_FALSE(classify_case(-0.1, 2.0).has_value());

  const NetworkSpec spec = test::demo_spec();
  auto cert = test::demo_certs(spec)[0];
  const auto a = build_local_simfn(cert, 0.5, 3.0, 2, 0.1);
  CHECK(a.kind == SimFnCase::A);
  CHECK(a.min_multiplier() == 1.0);

  cert.kappa_d = 1.5;
  const auto b = build_local_simfn(cert, 0.5, 3.0, 2, 0.1);
  CHECK(b.multiplier(2) == doctest::Approx(std::exp(0.4 * 0.1 * 0.5 * 2)));
  const std::vector<double> x{0.7}, xh{0.2};
  CHECK(b(x, xh, 1) == doctest::Approx(0.25 * std::exp(0.02)));

  cert.kappa_c = -0.2;
  cert.kappa_d = 0.5;
  const auto c = build_local_simfn(cert, 0.5, 3.0, 2, 0.1);
  CHECK(c.multiplier(3) == doctest::Approx(0.5));
  CHECK(c.min_multiplier() == doctest::Approx(std::pow(0.5, 2.0 / 3.0)));

  cert.kappa_d = 2.0;
  CHECK_THROWS_AS(build_local_simfn(cert, 0.5, 3.0, 2, 0.1), InputError);
}

TEST_CASE("two-subsystem compositionality example") {
  const Eigen::MatrixXd M = mat2(0.0, 1.0, 1.0, 0.0);
  const Eigen::MatrixXd D = mat2(0.0, 0.5, 0.5, -1.0);
  const std::vector<SupplyBlock> blocks{{1, 1, D}, {1, 1, D}};
  const auto r = check_compositionality(M, blocks, {1.0, 1.0});
  CHECK(r.pass);
  REQUIRE(r.eigenvalues.size() == 2);
  CHECK(std::abs(r.eigenvalues(0) + 2.0) <= 1e-10);
  CHECK(std::abs(r.eigenvalues(1)) <= 1e-10);
  CHECK((r.Q - mat2(-1.0, 1.0, 1.0, -1.0)).cwiseAbs().maxCoeff() <= 1e-12);

  const Eigen::MatrixXd flipped = mat2(0.0, 0.5, 0.5, 1.0);
  const auto bad = check_compositionality(M, {{1, 1, flipped}, {1, 1, flipped}}, {1.0, 1.0});
  CHECK_FALSE(bad.pass);
  CHECK(bad.max_eigenvalue == doctest::Approx(2.0));
}

TEST_CASE("assembled form equals the stacked quadratic") {
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 30; ++t) {
    // Subsystem dims: (q, n) = (1, 2) and (2, 1).
    std::vector<SupplyBlock> blocks{{1, 2, Eigen::MatrixXd(3, 3)}, {2, 1, Eigen::MatrixXd(3, 3)}};
    for (auto& b : blocks) {
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j <= i; ++j) b.D(i, j) = b.D(j, i) = u(rng);
    }
    Eigen::MatrixXd M(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) M(i, j) = u(rng);
    const std::vector<double> mu{0.5 + std::abs(u(rng)), 0.5 + std::abs(u(rng))};
    const auto r = check_compositionality(M, blocks, mu);
    for (int s = 0; s < 10; ++s) {
      const Eigen::Vector3d x(u(rng), u(rng), u(rng));
      const Eigen::Vector3d w = M * x;
      // Subsystem 1 sees w(0) and x(0..1); subsystem 2 sees w(1..2) and x(2).
      Eigen::Vector3d z1(w(0), x(0), x(1)), z2(w(1), w(2), x(2));
      const double want = mu[0] * z1.dot(blocks[0].D * z1) + mu[1] * z2.dot(blocks[1].D * z2);
      CHECK(std::abs(x.dot(r.Q * x) - want) <= 1e-12);
    }
  }
}

TEST_CASE("input inclusion matches enumeration") {
  Eigen::MatrixXd M = mat2(0.0, 1.0 / 3.0, 1.0, 0.0);
  const Grid sx = build_grid({{0.0}, {1.0}}, 0.05);
  const Grid sw = build_grid({{0.0}, {1.0}}, 0.05);
  const auto r = check_input_inclusion(M, {sx, sx}, {sw, sw});
  CHECK(r.checked == 441);
  std::size_t want = 0;
  for (int i = 0; i <= 20; ++i)
    for (int j = 0; j <= 20; ++j)
      if (j % 3 != 0) ++want;
  CHECK(r.violation_count == want);
  CHECK_FALSE(r.pass);
  REQUIRE_FALSE(r.violations.empty());
  CHECK(r.violations.front().subsystem == 0);

  CHECK(check_input_inclusion(mat2(0.0, 1.0, 1.0, 0.0), {sx, sx}, {sw, sw}).pass);
  CHECK(check_input_inclusion(mat2(1.0, 0.0, 0.0, 1.0), {sx, sx}, {sw, sw}).pass);
  // Range: 2 x leaves [0, 1].
  const auto range = check_input_inclusion(mat2(0.0, 2.0, 1.0, 0.0), {sx, sx}, {sw, sw});
  CHECK(range.violation_count == 21 * 10);
  CHECK_THROWS_AS(check_input_inclusion(M, {sx, sx}, {sw, sw}, 100), InputError);
}

TEST_CASE("mu grid and search") {
  CHECK(mu_grid({1.0, 2.0}, 2).size() == 4);
  CHECK(mu_grid({0.0, 1.0}, 2).size() == 3);
  CHECK(mu_grid({0.0, 1.0, 2.0}, 3).size() == 26);

  const Eigen::MatrixXd M = mat2(0.0, 1.0, 1.0, 0.0);
  const Eigen::MatrixXd D = mat2(0.0, 0.5, 0.5, -1.0);
  const std::vector<SupplyBlock> blocks{{1, 1, D}, {1, 1, D}};
  const auto r = search_mu(M, {blocks}, mu_grid({1.0, 2.0}, 2));
  REQUIRE(r.mu.has_value());
  CHECK(*r.mu == std::vector<double>{1.0, 1.0});
  CHECK(r.candidates == 4);

  // Unequal weights leave a positive eigenvalue: 2-1 mixing gives
  // Q = [[-2, 1.5], [1.5, -1]] / 3 with lambda_max > 0.
  const auto single = search_mu(M, {blocks}, {{2.0, 1.0}});
  CHECK_FALSE(single.mu.has_value());
  CHECK(single.best_score > 0.0);
}
