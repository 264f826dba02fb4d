#include <random>
#include <string>

#include "doctest.h"

#include "impsym/error.hpp"
#include "impsym/system.hpp"
#include "support.hpp"

using namespace impsym;

namespace {

bool has_code(const ValidationReport& r, const std::string& code) {
  for (const auto& v : r.violations)
    if (v.code == code) return true;
  return false;
}

}  // namespace

TEST_CASE("demo network validates") {
  const NetworkSpec spec = test::demo_spec();
  CHECK(spec.size() == 2);
  CHECK(spec.total_n() == 2);
  CHECK(spec.total_q() == 2);
  CHECK(validate_network(spec).ok());
  CHECK(spec.common_tau() == 0.1);
  CHECK(spec.index_of("b") == 1);
  CHECK_THROWS_AS(spec.index_of("c"), InputError);
}

TEST_CASE("validation collects structural problems") {
  NetworkSpec spec = test::demo_spec();
  spec.M = Eigen::MatrixXd::Zero(1, 2);
  CHECK(has_code(validate_network(spec), "coupling_shape"));

  spec = test::demo_spec();
  spec.subsystems[0].z_min = 3;
  spec.subsystems[0].z_max = 2;
  CHECK(has_code(validate_network(spec), "dwell"));

  spec = test::demo_spec();
  spec.subsystems[1].tau = 0.2;
  CHECK(has_code(validate_network(spec), "tau_mismatch"));

  spec = test::demo_spec();
  spec.M(0, 1) = 3.0;
  CHECK(has_code(validate_network(spec), "coupling_range"));
  // Inflating the internal bounds by Phi absorbs the excess.
  CHECK(validate_network(spec, std::vector<double>{2.0, 0.0}).ok());
}

TEST_CASE("loader errors cite the line") {
  const std::string bad = test::scalar_system("-x1 + * 2", "0.5*x1");
  try {
    test::spec_from(bad);
    FAIL("expected an input error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("<test>:11") != std::string::npos);
  }
  CHECK_THROWS_AS(test::spec_from(test::scalar_system("-x1", "0.5*x1", 0.1, 1, 2, "0 1")),
                  InputError);
  CHECK_THROWS_AS(test::spec_from(test::scalar_system("-x2", "0.5*x1")), InputError);
}

TEST_CASE("coupling image examples") {
  NetworkSpec spec = test::demo_spec();
  const std::vector<double> x{3.0, 5.0};
  const auto w = coupling_image(spec, x);
  CHECK(w[0] == std::vector<double>{5.0});
  CHECK(w[1] == std::vector<double>{3.0});
  spec.M.setZero();
  const auto z = coupling_image(spec, x);
  CHECK(z[0][0] == 0.0);
  CHECK(z[1][0] == 0.0);

  const NetworkSpec one = test::spec_from(test::scalar_system("-x1", "x1", 0.1, 1, 2, "2"));
  CHECK(coupling_image(one, std::vector<double>{0.5})[0][0] == 1.0);
}

TEST_CASE("coupling image is linear") {
  NetworkSpec spec = test::demo_spec();
  spec.M << 0.3, -1.2, 2.5, 0.7;
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int k = 0; k < 200; ++k) {
    const double a = u(rng), b = u(rng);
    const std::vector<double> x{u(rng), u(rng)}, y{u(rng), u(rng)};
    const std::vector<double> z{a * x[0] + b * y[0], a * x[1] + b * y[1]};
    const auto wx = coupling_image(spec, x), wy = coupling_image(spec, y), wz = coupling_image(spec, z);
    for (std::size_t i = 0; i < 2; ++i)
      CHECK(std::abs(wz[i][0] - (a * wx[i][0] + b * wy[i][0])) <= 1e-12);
  }
}
