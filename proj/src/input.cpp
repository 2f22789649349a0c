#include "qf/input.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "qf/error.hpp"
#include "qf/format.hpp"

namespace qf {

std::string to_string(const InputPoint& x) {
  std::string s = "(";
  for (std::size_t i = 0; i < x.dim(); ++i) {
    if (i) s += ", ";
    s += format_double(x[i]);
  }
  return s + ")";
}

std::uint64_t hash_input(const InputPoint& x) noexcept {
  std::uint64_t h = mix64(x.dim());
  for (double c : x.coords) {
    // +0.0 and -0.0 must hash alike.
    const double v = c == 0.0 ? 0.0 : c;
    h = combine_seed(h, std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

InputPoint InputBox::normalize(const InputPoint& x) const {
  if (x.dim() != dim()) {
    throw DomainError("input " + to_string(x) + " has dimension " + std::to_string(x.dim()) +
                      ", expected " + std::to_string(dim()));
  }
  InputPoint out;
  out.coords.resize(dim());
  for (std::size_t i = 0; i < dim(); ++i) {
    const double span = upper[i] - lower[i];
    out.coords[i] = span > 0.0 ? (x[i] - lower[i]) / span : 0.0;
  }
  return out;
}

InputSpace::InputSpace(std::vector<std::vector<double>> levels) : levels_(std::move(levels)) {
  if (levels_.empty()) throw ConfigError("input space needs at least one dimension");
  for (std::size_t d = 0; d < levels_.size(); ++d) {
    auto& l = levels_[d];
    if (l.empty()) throw ConfigError("input dimension " + std::to_string(d) + " has no levels");
    for (double v : l) {
      if (!std::isfinite(v)) throw ConfigError("non-finite input level in dimension " + std::to_string(d));
    }
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
  }
}

std::size_t InputSpace::cardinality() const noexcept {
  std::size_t n = 1;
  for (const auto& l : levels_) {
    if (n > std::numeric_limits<std::size_t>::max() / l.size()) {
      return std::numeric_limits<std::size_t>::max();
    }
    n *= l.size();
  }
  return n;
}

InputBox InputSpace::box() const {
  InputBox b;
  for (const auto& l : levels_) {
    b.lower.push_back(l.front());
    b.upper.push_back(l.back());
  }
  return b;
}

std::vector<InputPoint> InputSpace::enumerate(std::size_t limit) const {
  const std::size_t n = cardinality();
  if (n > limit) {
    throw ConfigError("input space has " + std::to_string(n) + " points, above the enumeration limit " +
                      std::to_string(limit));
  }
  std::vector<InputPoint> out;
  out.reserve(n);
  std::vector<std::size_t> idx(dimension(), 0);
  for (std::size_t count = 0; count < n; ++count) {
    InputPoint x;
    x.coords.resize(dimension());
    for (std::size_t d = 0; d < dimension(); ++d) x.coords[d] = levels_[d][idx[d]];
    out.push_back(std::move(x));
    for (std::size_t d = dimension(); d-- > 0;) {
      if (++idx[d] < levels_[d].size()) break;
      idx[d] = 0;
    }
  }
  return out;
}

bool InputSpace::contains(const InputPoint& x, double tol) const {
  if (x.dim() != dimension()) return false;
  for (std::size_t d = 0; d < dimension(); ++d) {
    const auto& l = levels_[d];
    const bool hit = std::any_of(l.begin(), l.end(), [&](double v) { return std::abs(v - x[d]) <= tol; });
    if (!hit) return false;
  }
  return true;
}

std::vector<InputPoint> InputSpace::sample_distinct(std::size_t n, RandomStream& rng,
                                                    const std::set<InputPoint>& exclude) const {
  const std::size_t total = cardinality();
  std::size_t excluded_inside = 0;
  for (const auto& e : exclude) excluded_inside += contains(e, 0.0) ? 1 : 0;
  if (total != std::numeric_limits<std::size_t>::max() && n > total - excluded_inside) {
    throw ConfigError("cannot draw " + std::to_string(n) + " distinct inputs from a space of " +
                      std::to_string(total - excluded_inside) + " admissible points");
  }
  std::set<InputPoint> seen;
  std::vector<InputPoint> out;
  out.reserve(n);
  while (out.size() < n) {
    InputPoint x;
    x.coords.resize(dimension());
    for (std::size_t d = 0; d < dimension(); ++d) x.coords[d] = levels_[d][rng.below(levels_[d].size())];
    if (exclude.contains(x) || !seen.insert(x).second) continue;
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace qf
