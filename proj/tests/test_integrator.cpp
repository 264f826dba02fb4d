#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "doctest.h"

#include "impsym/error.hpp"
#include "impsym/integrator.hpp"
#include "support.hpp"

using namespace impsym;

namespace {

// Matrix exponential by scaling and squaring of a truncated Taylor series.
Eigen::MatrixXd expm(const Eigen::MatrixXd& A) {
  int s = 0;
  double norm = A.cwiseAbs().rowwise().sum().maxCoeff();
  while (norm > 0.1) {
    norm /= 2.0;
    ++s;
  }
  const Eigen::MatrixXd B = A / std::pow(2.0, s);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(A.rows(), A.cols());
  Eigen::MatrixXd sum = term;
  for (int k = 1; k < 30; ++k) {
    term = term * B / k;
    sum += term;
  }
  for (int k = 0; k < s; ++k) sum = sum * sum;
  return sum;
}

VectorField field(std::vector<std::string> comps, Arity a) { return VectorField::parse(comps, a); }

}  // namespace

TEST_CASE("flow examples") {
  const std::vector<double> none;
  const VectorField decay = field({"-x1"}, {1, 0, 0});
  const auto x = integrate_flow(decay, std::vector<double>{1.0}, none, none, 0.1, {0.01, 1e6});
  CHECK(std::abs(x[0] - std::exp(-0.1)) <= 1e-7);

  const VectorField still = field({"0"}, {1, 0, 0});
  CHECK(integrate_flow(still, std::vector<double>{0.37}, none, none, 0.1, {})[0] == 0.37);

  const VectorField drift = field({"u1"}, {1, 0, 1});
  const auto y = integrate_flow(drift, std::vector<double>{0.0}, none, std::vector<double>{2.0},
                                0.5, {});
  CHECK(std::abs(y[0] - 1.0) <= 1e-12);
}

TEST_CASE("step must divide the period") {
  const IntegratorConfig cfg{0.003, 1e6};
  CHECK_THROWS_AS(cfg.steps_for(0.1), InputError);
  CHECK(IntegratorConfig{0.001, 1e6}.steps_for(0.1) == 100);
}

TEST_CASE("divergence and NaN are reported") {
  const std::vector<double> none;
  const VectorField blow = field({"x1^3"}, {1, 0, 0});
  CHECK_THROWS_AS(integrate_flow(blow, std::vector<double>{10.0}, none, none, 1.0, {1e-3, 1e3}),
                  IntegrationError);
  const VectorField nan = field({"x1 - x1/x1"}, {1, 0, 0});
  CHECK_THROWS_AS(integrate_flow(nan, std::vector<double>{0.0}, none, none, 0.1, {}),
                  IntegrationError);
}

TEST_CASE("jump examples") {
  const std::vector<double> none;
  CHECK(apply_jump(field({"0.5*x1"}, {1, 0, 0}), std::vector<double>{2.0}, none, none)[0] == 1.0);
  CHECK(apply_jump(field({"x1"}, {1, 0, 0}), std::vector<double>{0.7}, none, none)[0] == 0.7);
  CHECK(apply_jump(field({"x1 + u1"}, {1, 0, 1}), std::vector<double>{1.0}, none,
                   std::vector<double>{1.0})[0] == 2.0);
}

TEST_CASE("observed RK4 order") {
  const std::vector<double> none;
  const VectorField decay = field({"-x1"}, {1, 0, 0});
  const double exact = std::exp(-0.1);
  const double e2 =
      std::abs(integrate_flow(decay, std::vector<double>{1.0}, none, none, 0.1, {1e-2, 1e6})[0] - exact);
  const double e3 =
      std::abs(integrate_flow(decay, std::vector<double>{1.0}, none, none, 0.1, {1e-3, 1e6})[0] - exact);
  CHECK(std::log10(e2 / e3) >= 3.8);
  CHECK(e3 <= 1e-8);
}

TEST_CASE("linear flows match the matrix exponential") {
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(-2.0, 2.0), t(0.05, 0.5);
  const std::vector<double> none;
  int used = 0;
  while (used < 50) {
    Eigen::Matrix2d A;
    A << u(rng), u(rng), u(rng), u(rng);
    const Eigen::EigenSolver<Eigen::Matrix2d> es(A);
    if (es.eigenvalues().cwiseAbs().maxCoeff() > 5.0) continue;
    const double tau = std::round(t(rng) * 100.0) / 100.0;
    auto num = [](double v) {
      std::ostringstream os;
      os.precision(17);
      os << "(" << v << ")";
      return os.str();
    };
    const VectorField f = field({num(A(0, 0)) + "*x1 + " + num(A(0, 1)) + "*x2",
                                 num(A(1, 0)) + "*x1 + " + num(A(1, 1)) + "*x2"},
                                {2, 0, 0});
    const Eigen::Vector2d x0(u(rng), u(rng));
    const auto x = integrate_flow(f, std::vector<double>{x0(0), x0(1)}, none, none, tau,
                                  {tau / 100.0, 1e6});
    const Eigen::Vector2d want = expm(A * tau) * x0;
    CHECK(std::abs(x[0] - want(0)) <= 1e-8);
    CHECK(std::abs(x[1] - want(1)) <= 1e-8);
    ++used;
  }
}

TEST_CASE("schedules respect the dwell bounds") {
  const NetworkSpec spec = test::demo_spec();
  CHECK_NOTHROW(check_schedule(spec, {{1, 3, 5}, {2, 4}}, 6));
  CHECK_THROWS_AS(check_schedule(spec, {{3}, {2}}, 4), InputError);      // first gap 3
  CHECK_THROWS_AS(check_schedule(spec, {{1, 4}, {2}}, 4), InputError);   // gap 3
  CHECK_THROWS_AS(check_schedule(spec, {{2}, {2}}, 5), InputError);      // tail 3
  CHECK_NOTHROW(check_schedule(spec, {{}, {}}, 2));
}

TEST_CASE("identity jumps give pure decay") {
  const NetworkSpec spec = test::spec_from(test::scalar_system("-x1", "x1", 0.1, 1, 2));
  const std::vector<std::vector<double>> u(6, std::vector<double>{0.0});
  const auto traj = simulate_concrete(spec, std::vector<double>{1.0}, u, {{2, 3, 5}}, 6, {});
  REQUIRE(traj.samples.size() == 7);
  for (std::size_t k = 0; k < traj.samples.size(); ++k) {
    CHECK(traj.samples[k].time == doctest::Approx(0.1 * static_cast<double>(k)));
    CHECK(std::abs(traj.samples[k].x[0] - std::exp(-0.1 * static_cast<double>(k))) <= 1e-9);
  }
  traj.check_invariants(spec);
}

TEST_CASE("periodic halving follows the piecewise closed form") {
  const NetworkSpec spec = test::spec_from(test::scalar_system("-x1", "0.5*x1", 0.1, 2, 2));
  const std::size_t H = 8;
  const std::vector<std::vector<double>> u(H, std::vector<double>{0.0});
  const auto traj = simulate_concrete(spec, std::vector<double>{1.0}, u, {{2, 4, 6, 8}}, H, {});
  double want = 1.0;
  for (std::size_t k = 1; k <= H; ++k) {
    want *= std::exp(-0.1);
    if (k % 2 == 0) want *= 0.5;
    CHECK(std::abs(traj.samples[k].x[0] - want) <= 1e-9);
    CHECK(traj.samples[k].jumped[0] == (k % 2 == 0));
  }
  traj.check_invariants(spec);
}

TEST_CASE("horizon zero keeps only the initial sample") {
  const NetworkSpec spec = test::demo_spec();
  const auto traj = simulate_concrete(spec, std::vector<double>{0.3, 0.6}, {}, {{}, {}}, 0, {});
  REQUIRE(traj.samples.size() == 1);
  CHECK(traj.samples[0].x == std::vector<double>{0.3, 0.6});
}

TEST_CASE("coupled flow evaluates omega from the current state") {
  // x_a' = -x_a + 0.5 x_b, x_b' = -x_b + 0.5 x_a is linear; compare with expm.
  const NetworkSpec spec = test::demo_spec();
  const std::vector<double> x0{0.2, 0.9};
  const auto x = network_step(spec, x0, {false, false}, std::vector<double>{0.0, 0.0}, {});
  Eigen::Matrix2d A;
  A << -1.0, 0.5, 0.5, -1.0;
  const Eigen::Vector2d want = expm(A * 0.1) * Eigen::Vector2d(0.2, 0.9);
  CHECK(std::abs(x[0] - want(0)) <= 1e-10);
  CHECK(std::abs(x[1] - want(1)) <= 1e-10);

  // A jumping subsystem is frozen for the flowing one and jumps from x(0).
  const auto y = network_step(spec, x0, {true, false}, std::vector<double>{0.0, 0.0}, {});
  CHECK(y[0] == 0.5 * 0.2);
  const double b = 0.5 * 0.2 + (0.9 - 0.5 * 0.2) * std::exp(-0.1);
  CHECK(std::abs(y[1] - b) <= 1e-10);
}

TEST_CASE("trajectory CSV layout") {
  const NetworkSpec spec = test::demo_spec();
  const std::vector<std::vector<double>> u(2, std::vector<double>{0.0, 0.0});
  const auto traj = simulate_concrete(spec, std::vector<double>{0.3, 0.6}, u, {{1}, {2}}, 2, {});
  std::ostringstream os;
  write_trajectory_csv(os, spec, traj);
  const std::string text = os.str();
  CHECK(text.rfind("time,x_a_1,x_b_1,jump_a,jump_b\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
}
