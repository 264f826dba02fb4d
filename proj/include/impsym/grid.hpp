#pragma once

// Uniform finite approximation [S]_eta of a hyper-rectangle S:
// the points a in S whose coordinates are integer multiples k_i * eta.
// The lattice is anchored at the origin, not at the box corner.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace impsym {

/// Axis-aligned box prod_i [lower_i, upper_i] with lower_i < upper_i.
struct Box {
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t dim() const noexcept { return lower.size(); }
  bool contains(std::span<const double> x, double tol = 0.0) const;
  /// min_i (upper_i - lower_i); the largest admissible quantization step.
  double min_width() const;
  /// Throws InputError on a shape mismatch or a degenerate interval.
  void validate(const std::string& what) const;
};

/// Lattice points farther than this fraction of eta outside the box are not
/// members; points within it are (absorbs rounding in k * eta).
inline constexpr double kGridSnap = 1e-9;

class Grid {
public:
  Grid() = default;

  const Box& bounds() const noexcept { return bounds_; }
  double eta() const noexcept { return eta_; }
  std::size_t dim() const noexcept { return bounds_.dim(); }
  std::span<const std::int64_t> origin_index() const noexcept { return k_min_; }
  std::span<const std::size_t> points_per_dim() const noexcept { return counts_; }
  std::size_t size() const noexcept { return size_; }

  /// Coordinate of lattice index k along any dimension.
  double coord(std::int64_t k) const noexcept { return static_cast<double>(k) * eta_; }

  std::vector<std::size_t> unravel(std::size_t id) const;
  std::size_t ravel(std::span<const std::size_t> idx) const;
  std::vector<double> point(std::size_t id) const;
  void point_into(std::size_t id, std::span<double> out) const;

  struct Nearest {
    std::size_t id = 0;
    std::vector<double> point;
    double distance = 0.0;  // infinity norm
  };
  /// Nearest grid point in the infinity norm; ties go to the smaller
  /// coordinate. Throws InputError when x lies more than eta/2 outside the box.
  Nearest nearest(std::span<const double> x) const;

  /// Ids of all points p with ||p - center||_inf <= radius, ascending.
  std::vector<std::size_t> ball(std::span<const double> center, double radius) const;

  /// Points in ascending id order (row-major, last dimension fastest).
  std::vector<std::pair<std::size_t, std::vector<double>>> enumerate() const;

  bool operator==(const Grid& o) const {
    return bounds_.lower == o.bounds_.lower && bounds_.upper == o.bounds_.upper &&
           eta_ == o.eta_;
  }

private:
  friend Grid build_grid(const Box& bounds, double eta);

  Box bounds_;
  double eta_ = 0.0;
  std::vector<std::int64_t> k_min_;
  std::vector<std::size_t> counts_;
  std::size_t size_ = 0;
};

/// Throws InputError when eta <= 0 or eta exceeds the smallest box width.
Grid build_grid(const Box& bounds, double eta);

std::vector<std::size_t> ball_points(const Grid& grid, std::span<const double> center,
                                     double radius);
Grid::Nearest nearest_point(const Grid& grid, std::span<const double> x);

double inf_norm(std::span<const double> v);
double inf_dist(std::span<const double> a, std::span<const double> b);

}  // namespace impsym
