#include "impsym/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "impsym/error.hpp"

namespace impsym {

double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double inf_dist(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool Box::contains(std::span<const double> x, double tol) const {
  if (x.size() != dim()) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i] >= lower[i] - tol && x[i] <= upper[i] + tol)) return false;
  return true;
}

double Box::min_width() const {
  double w = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < dim(); ++i) w = std::min(w, std::abs(upper[i] - lower[i]));
  return w;
}

void Box::validate(const std::string& what) const {
  if (lower.size() != upper.size())
    throw InputError(what + ": lower and upper bounds differ in length");
  if (lower.empty()) throw InputError(what + ": empty bounds");
  for (std::size_t i = 0; i < dim(); ++i) {
    if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) || !(lower[i] < upper[i]))
      throw InputError(what + ": degenerate interval in dimension " + std::to_string(i + 1));
  }
}

Grid build_grid(const Box& bounds, double eta) {
  if (bounds.lower.empty() && bounds.upper.empty()) {
    // Zero-dimensional set (no inputs): a single empty point.
    if (!(eta > 0.0) || !std::isfinite(eta))
      throw InputError("quantization parameter must be positive");
    Grid g;
    g.eta_ = eta;
    g.size_ = 1;
    return g;
  }
  bounds.validate("grid bounds");
  if (!(eta > 0.0) || !std::isfinite(eta))
    throw InputError("quantization parameter must be positive (eta = 0 describes the continuous set)");
  const double eta_max = bounds.min_width();
  if (eta > eta_max)
    throw InputError("quantization parameter " + std::to_string(eta) +
                     " exceeds the smallest box width " + std::to_string(eta_max));

  Grid g;
  g.bounds_ = bounds;
  g.eta_ = eta;
  g.size_ = 1;
  const double snap = kGridSnap * eta;
  for (std::size_t d = 0; d < bounds.dim(); ++d) {
    const double lo = bounds.lower[d];
    const double hi = bounds.upper[d];
    auto member = [&](std::int64_t k) {
      const double a = static_cast<double>(k) * eta;
      return a >= lo - snap && a <= hi + snap;
    };
    std::int64_t k_lo = static_cast<std::int64_t>(std::ceil(lo / eta));
    while (member(k_lo - 1)) --k_lo;
    while (!member(k_lo) && static_cast<double>(k_lo) * eta < hi) ++k_lo;
    std::int64_t k_hi = static_cast<std::int64_t>(std::floor(hi / eta));
    while (member(k_hi + 1)) ++k_hi;
    while (!member(k_hi) && static_cast<double>(k_hi) * eta > lo) --k_hi;
    if (k_hi < k_lo || !member(k_lo)) throw InputError("grid is empty in dimension " + std::to_string(d + 1));
    g.k_min_.push_back(k_lo);
    const auto count = static_cast<std::size_t>(k_hi - k_lo + 1);
    g.counts_.push_back(count);
    if (g.size_ > std::numeric_limits<std::size_t>::max() / count)
      throw InputError("grid cardinality overflows");
    g.size_ *= count;
  }
  return g;
}

std::vector<std::size_t> Grid::unravel(std::size_t id) const {
  std::vector<std::size_t> idx(dim());
  for (std::size_t d = dim(); d-- > 0;) {
    idx[d] = id % counts_[d];
    id /= counts_[d];
  }
  return idx;
}

std::size_t Grid::ravel(std::span<const std::size_t> idx) const {
  std::size_t id = 0;
  for (std::size_t d = 0; d < dim(); ++d) id = id * counts_[d] + idx[d];
  return id;
}

void Grid::point_into(std::size_t id, std::span<double> out) const {
  for (std::size_t d = dim(); d-- > 0;) {
    const std::size_t i = id % counts_[d];
    id /= counts_[d];
    out[d] = coord(k_min_[d] + static_cast<std::int64_t>(i));
  }
}

std::vector<double> Grid::point(std::size_t id) const {
  std::vector<double> p(dim());
  point_into(id, p);
  return p;
}

Grid::Nearest Grid::nearest(std::span<const double> x) const {
  if (x.size() != dim())
    throw DimensionError("nearest_point: expected a vector of length " + std::to_string(dim()));
  Nearest out;
  out.point.resize(dim());
  std::size_t id = 0;
  for (std::size_t d = 0; d < dim(); ++d) {
    const double half = 0.5 * eta_;
    if (!(x[d] >= bounds_.lower[d] - half - kGridSnap * eta_ &&
          x[d] <= bounds_.upper[d] + half + kGridSnap * eta_))
      throw InputError("point lies more than eta/2 outside the grid bounds in dimension " +
                       std::to_string(d + 1));
    // ceil(t - 1/2) rounds to nearest with ties toward the smaller integer.
    auto k = static_cast<std::int64_t>(std::ceil(x[d] / eta_ - 0.5));
    const std::int64_t k_hi = k_min_[d] + static_cast<std::int64_t>(counts_[d]) - 1;
    k = std::clamp(k, k_min_[d], k_hi);
    // Guard against rounding in the division: compare the neighbours directly.
    for (std::int64_t cand : {k - 1, k + 1}) {
      if (cand < k_min_[d] || cand > k_hi) continue;
      const double dc = std::abs(coord(cand) - x[d]);
      const double dk = std::abs(coord(k) - x[d]);
      if (dc < dk || (dc == dk && cand < k)) k = cand;
    }
    out.point[d] = coord(k);
    out.distance = std::max(out.distance, std::abs(out.point[d] - x[d]));
    id = id * counts_[d] + static_cast<std::size_t>(k - k_min_[d]);
  }
  out.id = id;
  return out;
}

std::vector<std::size_t> Grid::ball(std::span<const double> center, double radius) const {
  if (center.size() != dim())
    throw DimensionError("ball_points: expected a vector of length " + std::to_string(dim()));
  std::vector<std::vector<std::size_t>> per_dim(dim());
  for (std::size_t d = 0; d < dim(); ++d) {
    const std::int64_t k_hi = k_min_[d] + static_cast<std::int64_t>(counts_[d]) - 1;
    const double lo_f = std::floor((center[d] - radius) / eta_) - 1.0;
    const double hi_f = std::ceil((center[d] + radius) / eta_) + 1.0;
    if (!(hi_f >= static_cast<double>(k_min_[d])) || !(lo_f <= static_cast<double>(k_hi)))
      return {};
    const std::int64_t lo = std::max(k_min_[d], static_cast<std::int64_t>(lo_f));
    const std::int64_t hi = std::min(k_hi, static_cast<std::int64_t>(hi_f));
    for (std::int64_t k = lo; k <= hi; ++k)
      if (std::abs(coord(k) - center[d]) <= radius)
        per_dim[d].push_back(static_cast<std::size_t>(k - k_min_[d]));
    if (per_dim[d].empty()) return {};
  }
  std::vector<std::size_t> out;
  std::size_t total = 1;
  for (const auto& v : per_dim) total *= v.size();
  out.reserve(total);
  std::vector<std::size_t> pos(dim(), 0), idx(dim());
  for (std::size_t n = 0; n < total; ++n) {
    for (std::size_t d = 0; d < dim(); ++d) idx[d] = per_dim[d][pos[d]];
    out.push_back(ravel(idx));
    for (std::size_t d = dim(); d-- > 0;) {
      if (++pos[d] < per_dim[d].size()) break;
      pos[d] = 0;
    }
  }
  return out;
}

std::vector<std::pair<std::size_t, std::vector<double>>> Grid::enumerate() const {
  std::vector<std::pair<std::size_t, std::vector<double>>> out;
  out.reserve(size_);
  for (std::size_t id = 0; id < size_; ++id) out.emplace_back(id, point(id));
  return out;
}

std::vector<std::size_t> ball_points(const Grid& grid, std::span<const double> center,
                                     double radius) {
  return grid.ball(center, radius);
}

Grid::Nearest nearest_point(const Grid& grid, std::span<const double> x) {
  return grid.nearest(x);
}

}  // namespace impsym
