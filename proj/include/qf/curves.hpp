#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

namespace qf {

/// Strictly increasing probability levels inside (0,1), together with the
/// rectangle-rule weights used for every L2 integral on (0,1).
class ProbGrid {
 public:
  explicit ProbGrid(std::vector<double> levels);

  /// p_i = (i - 0.5) / m, i = 1..m; every weight equals 1/m.
  static std::shared_ptr<const ProbGrid> uniform_midpoint(std::size_t m = 101);

  std::size_t size() const noexcept { return levels_.size(); }
  double operator[](std::size_t i) const { return levels_[i]; }
  std::span<const double> levels() const noexcept { return levels_; }
  std::span<const double> weights() const noexcept { return weights_; }

  friend bool operator==(const ProbGrid& a, const ProbGrid& b) { return a.levels_ == b.levels_; }

 private:
  std::vector<double> levels_;
  // Width of the cell around each level; cells split halfway between neighbours
  // and the outer cells extend to 0 and 1.
  std::vector<double> weights_;
};

using GridPtr = std::shared_ptr<const ProbGrid>;

/// A quantile function sampled on a probability grid.
class QuantileCurve {
 public:
  QuantileCurve(GridPtr grid, std::vector<double> values);

  const ProbGrid& grid() const noexcept { return *grid_; }
  const GridPtr& grid_ptr() const noexcept { return grid_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool same_grid(const QuantileCurve& other) const noexcept {
    return grid_ == other.grid_ || *grid_ == *other.grid_;
  }

 private:
  GridPtr grid_;
  std::vector<double> values_;
};

/// Weighted inner product <f, g> on (0,1).
double l2_inner(const QuantileCurve& f, const QuantileCurve& g);
double l2_norm(const QuantileCurve& f);
double l2_distance(const QuantileCurve& f, const QuantileCurve& g);

bool is_monotone(const QuantileCurve& f, double tol = 0.0);

/// Value at probability p; linear interpolation between levels, clamped outside the grid.
double eval_at(const QuantileCurve& f, double p);

/// Throws GridMismatchError if the curves live on different grids.
void require_same_grid(const QuantileCurve& f, const QuantileCurve& g);

/// CSV with header `p,value`.
void write_curve_csv(const std::filesystem::path& path, const QuantileCurve& f);
QuantileCurve read_curve_csv(const std::filesystem::path& path);

}  // namespace qf
