#include "qf/curves.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qf/error.hpp"
#include "qf/format.hpp"

namespace qf {

ProbGrid::ProbGrid(std::vector<double> levels) : levels_(std::move(levels)) {
  const std::size_t m = levels_.size();
  if (m == 0) throw DomainError("probability grid is empty");
  for (std::size_t i = 0; i < m; ++i) {
    const double p = levels_[i];
    if (!(p > 0.0 && p < 1.0)) {
      throw DomainError("probability level " + format_double(p) + " is outside (0,1)");
    }
    if (i > 0 && !(p > levels_[i - 1])) throw DomainError("probability levels must be strictly increasing");
  }
  weights_.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double lo = i == 0 ? 0.0 : 0.5 * (levels_[i - 1] + levels_[i]);
    const double hi = i + 1 == m ? 1.0 : 0.5 * (levels_[i] + levels_[i + 1]);
    weights_[i] = hi - lo;
  }
  // Uniform midpoint grids get the exact 1/m weight, whichever way they were built.
  bool midpoint = true;
  for (std::size_t i = 0; i < m && midpoint; ++i) {
    midpoint = levels_[i] == (static_cast<double>(i) + 0.5) / static_cast<double>(m);
  }
  if (midpoint) std::fill(weights_.begin(), weights_.end(), 1.0 / static_cast<double>(m));
}

std::shared_ptr<const ProbGrid> ProbGrid::uniform_midpoint(std::size_t m) {
  std::vector<double> levels(m);
  for (std::size_t i = 0; i < m; ++i) levels[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
  return std::make_shared<ProbGrid>(std::move(levels));
}

QuantileCurve::QuantileCurve(GridPtr grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
  if (!grid_) throw DomainError("quantile curve without a grid");
  if (values_.size() != grid_->size()) {
    throw DomainError("quantile curve has " + std::to_string(values_.size()) + " values for a grid of " +
                      std::to_string(grid_->size()) + " levels");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw DomainError("quantile curve value is not finite");
  }
}

void require_same_grid(const QuantileCurve& f, const QuantileCurve& g) {
  if (!f.same_grid(g)) throw GridMismatchError("curves are defined on different probability grids");
}

double l2_inner(const QuantileCurve& f, const QuantileCurve& g) {
  require_same_grid(f, g);
  const auto w = f.grid().weights();
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += w[i] * f[i] * g[i];
  return s;
}

double l2_norm(const QuantileCurve& f) { return std::sqrt(l2_inner(f, f)); }

double l2_distance(const QuantileCurve& f, const QuantileCurve& g) {
  require_same_grid(f, g);
  const auto w = f.grid().weights();
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double d = f[i] - g[i];
    s += w[i] * d * d;
  }
  return std::sqrt(s);
}

bool is_monotone(const QuantileCurve& f, double tol) {
  for (std::size_t i = 1; i < f.size(); ++i) {
    if (f[i] < f[i - 1] - tol) return false;
  }
  return true;
}

double eval_at(const QuantileCurve& f, double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("probability " + format_double(p) + " is outside (0,1)");
  const auto levels = f.grid().levels();
  if (p <= levels.front()) return f[0];
  if (p >= levels.back()) return f[f.size() - 1];
  const auto it = std::lower_bound(levels.begin(), levels.end(), p);
  const auto hi = static_cast<std::size_t>(it - levels.begin());
  if (*it == p) return f[hi];
  const std::size_t lo = hi - 1;
  const double t = (p - levels[lo]) / (levels[hi] - levels[lo]);
  return f[lo] + t * (f[hi] - f[lo]);
}

void write_curve_csv(const std::filesystem::path& path, const QuantileCurve& f) {
  CsvTable t;
  t.header = {"p", "value"};
  for (std::size_t i = 0; i < f.size(); ++i) t.rows.push_back({f.grid()[i], f[i]});
  write_csv(path, t);
}

QuantileCurve read_curve_csv(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  if (t.header.size() != 2 || t.header[0] != "p" || t.header[1] != "value") {
    throw IoError(path.string() + ": expected header 'p,value'");
  }
  std::vector<double> levels, values;
  for (const auto& r : t.rows) {
    levels.push_back(r[0]);
    values.push_back(r[1]);
  }
  return QuantileCurve(std::make_shared<ProbGrid>(std::move(levels)), std::move(values));
}

}  // namespace qf
