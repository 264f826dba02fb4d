#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "doctest.h"

#include "impsym/error.hpp"
#include "impsym/grid.hpp"

using namespace impsym;

namespace {

std::vector<std::vector<double>> points_of(const Grid& g) {
  std::vector<std::vector<double>> out;
  for (const auto& [id, p] : g.enumerate()) out.push_back(p);
  return out;
}

// Brute force over integer multiples, with bounds and eta given in
// thousandths so membership of k * eta is decided exactly.
std::vector<std::vector<double>> brute_grid(const std::vector<long>& lo,
                                            const std::vector<long>& hi, long eta_milli) {
  const double eta = static_cast<double>(eta_milli) / 1000.0;
  std::vector<std::vector<double>> axes(lo.size());
  for (std::size_t d = 0; d < lo.size(); ++d)
    for (long k = -10000; k <= 10000; ++k)
      if (k * eta_milli >= lo[d] && k * eta_milli <= hi[d])
        axes[d].push_back(static_cast<double>(k) * eta);
  std::vector<std::vector<double>> out{{}};
  for (const auto& axis : axes) {
    std::vector<std::vector<double>> next;
    for (const auto& prefix : out)
      for (double v : axis) {
        auto p = prefix;
        p.push_back(v);
        next.push_back(std::move(p));
      }
    out = std::move(next);
  }
  return out;
}

}  // namespace

TEST_CASE("grid examples") {
  const Grid g = build_grid({{0.0}, {1.0}}, 0.5);
  CHECK(g.size() == 3);
  CHECK(points_of(g) == std::vector<std::vector<double>>{{0.0}, {0.5}, {1.0}});
  const auto e = g.enumerate();
  CHECK(e[2].first == 2);

  CHECK(build_grid({{-1.0, -1.0}, {1.0, 1.0}}, 1.0).size() == 9);
  CHECK(build_grid({{0.0, 0.0}, {1.0, 1.0}}, 0.1).size() == 121);
  CHECK_THROWS_AS(build_grid({{0.0}, {1.0}}, 2.0), InputError);
  CHECK_THROWS_AS(build_grid({{0.0}, {1.0}}, 0.0), InputError);
  CHECK_THROWS_AS(build_grid({{0.0}, {0.0}}, 0.1), InputError);

  const Grid sq = build_grid({{0.0, 0.0}, {1.0, 1.0}}, 1.0);
  CHECK(points_of(sq) ==
        std::vector<std::vector<double>>{{0.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}, {1.0, 1.0}});
}

TEST_CASE("grid is anchored at the origin") {
  const Grid g = build_grid({{0.13}, {0.92}}, 0.25);
  CHECK(points_of(g) == std::vector<std::vector<double>>{{0.25}, {0.5}, {0.75}});
}

TEST_CASE("nearest point examples") {
  const Grid g = build_grid({{0.0}, {1.0}}, 0.25);
  const std::vector<double> a{0.26}, b{0.5}, c{0.125};
  CHECK(g.nearest(a).point[0] == 0.25);
  CHECK(g.nearest(b).point[0] == 0.5);
  CHECK(g.nearest(b).distance == 0.0);
  CHECK(g.nearest(c).point[0] == 0.0);
}

TEST_CASE("ball examples") {
  const Grid g = build_grid({{0.0}, {2.0}}, 0.5);
  const std::vector<double> on{1.0}, mid{0.75}, far{5.0};
  CHECK(g.ball(on, 0.0).size() == 1);
  std::vector<double> got;
  for (std::size_t id : g.ball(mid, 0.5)) got.push_back(g.point(id)[0]);
  CHECK(got == std::vector<double>{0.5, 1.0});
  CHECK(g.ball(far, 1.0).empty());
}

TEST_CASE("zero-dimensional box gives a single point") {
  const Grid g = build_grid({}, 0.1);
  CHECK(g.size() == 1);
  CHECK(g.point(0).empty());
}

TEST_CASE("random boxes match brute force and stay covered") {
  std::mt19937 rng(3);
  std::uniform_int_distribution<long> lo(-2000, 1000), width(400, 2000);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const long etas[] = {50, 100, 200, 250, 300};
  for (int t = 0; t < 40; ++t) {
    const std::size_t dim = 1 + static_cast<std::size_t>(t % 3);
    std::vector<long> lm, hm;
    Box b;
    for (std::size_t d = 0; d < dim; ++d) {
      lm.push_back(lo(rng));
      hm.push_back(lm.back() + width(rng));
      b.lower.push_back(static_cast<double>(lm.back()) / 1000.0);
      b.upper.push_back(static_cast<double>(hm.back()) / 1000.0);
    }
    const double eta = static_cast<double>(etas[t % 5]) / 1000.0;
    const Grid g = build_grid(b, eta);
    const auto pts = points_of(g);
    CHECK(pts == brute_grid(lm, hm, etas[t % 5]));

    for (int s = 0; s < 500; ++s) {
      std::vector<double> x(dim);
      for (std::size_t d = 0; d < dim; ++d)
        x[d] = b.lower[d] + unit(rng) * (b.upper[d] - b.lower[d]);
      const auto n = g.nearest(x);
      CHECK(n.distance <= eta);
      bool interior = true;
      for (std::size_t d = 0; d < dim; ++d)
        interior = interior && x[d] - b.lower[d] >= eta / 2 && b.upper[d] - x[d] >= eta / 2;
      if (interior) CHECK(n.distance <= eta / 2 + 1e-12);
      // Nearest agrees with an exhaustive scan.
      double best = 1e300;
      for (const auto& p : pts) best = std::min(best, inf_dist(p, x));
      CHECK(n.distance == doctest::Approx(best).epsilon(1e-12));

      const double r = unit(rng) * 2.0 * eta;
      std::vector<std::size_t> want;
      for (std::size_t id = 0; id < pts.size(); ++id)
        if (inf_dist(pts[id], x) <= r) want.push_back(id);
      CHECK(g.ball(x, r) == want);
    }
  }
}

TEST_CASE("ravel and unravel are inverse") {
  const Grid g = build_grid({{0.0, -1.0, 2.0}, {1.0, 1.0, 2.5}}, 0.25);
  for (std::size_t id = 0; id < g.size(); ++id) CHECK(g.ravel(g.unravel(id)) == id);
}
