#pragma once

#include <compare>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "qf/rng.hpp"

namespace qf {

/// A point of the input space E, in raw (engineering) units.
struct InputPoint {
  std::vector<double> coords;

  std::size_t dim() const noexcept { return coords.size(); }
  double operator[](std::size_t i) const { return coords[i]; }

  friend auto operator<=>(const InputPoint&, const InputPoint&) = default;
  friend bool operator==(const InputPoint&, const InputPoint&) = default;
};

std::string to_string(const InputPoint& x);

/// Stable (platform independent) hash of the bit patterns of the coordinates.
std::uint64_t hash_input(const InputPoint& x) noexcept;

/// Axis-aligned box used to map raw inputs onto [0,1]^d before kriging.
struct InputBox {
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t dim() const noexcept { return lower.size(); }
  /// Dimensions with lower == upper map to 0.
  InputPoint normalize(const InputPoint& x) const;
};

/// Cartesian product of per-dimension discrete levels.
class InputSpace {
 public:
  InputSpace() = default;
  explicit InputSpace(std::vector<std::vector<double>> levels);

  std::size_t dimension() const noexcept { return levels_.size(); }
  const std::vector<double>& levels(std::size_t d) const { return levels_.at(d); }
  const std::vector<std::vector<double>>& all_levels() const noexcept { return levels_; }

  /// Number of grid points, saturating at SIZE_MAX.
  std::size_t cardinality() const noexcept;
  InputBox box() const;

  /// All points in lexicographic order. Throws ConfigError above `limit` points.
  std::vector<InputPoint> enumerate(std::size_t limit = 10'000'000) const;

  bool contains(const InputPoint& x, double tol = 1e-9) const;

  /// Uniform sample without replacement, skipping anything in `exclude`.
  std::vector<InputPoint> sample_distinct(std::size_t n, RandomStream& rng,
                                          const std::set<InputPoint>& exclude = {}) const;

 private:
  std::vector<std::vector<double>> levels_;
};

}  // namespace qf
