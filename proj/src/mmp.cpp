#include "qf/mmp.hpp"

#include <cmath>
#include <string>

#include "json.hpp"

#include "qf/error.hpp"
#include "qf/format.hpp"

namespace qf {

Basis::Basis(std::vector<QuantileCurve> functions, std::vector<std::size_t> source_ids)
    : functions_(std::move(functions)), source_ids_(std::move(source_ids)) {
  const std::size_t k = functions_.size();
  if (k == 0) throw RankError("basis needs at least one function");
  if (source_ids_.size() != k) throw DomainError("basis source ids do not match the number of functions");
  for (const auto& f : functions_) require_same_grid(functions_.front(), f);
  gram_.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double g = l2_inner(functions_[i], functions_[j]);
      gram_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = g;
      gram_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = g;
    }
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram_, Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().maxCoeff();
  const double lmin = eig.eigenvalues().minCoeff();
  if (!(lmax > 0.0) || lmin <= 1e-13 * lmax) {
    throw RankError("basis functions are linearly dependent (Gram eigenvalues " + format_double(lmin) + " .. " +
                    format_double(lmax) + ")");
  }
  gram_llt_.compute(gram_);
  if (gram_llt_.info() != Eigen::Success) throw RankError("Gram matrix factorization failed");
}

Basis Basis::truncated(std::size_t k) const {
  if (k == 0 || k > size()) throw DomainError("cannot truncate a basis of size " + std::to_string(size()) +
                                              " to " + std::to_string(k));
  return Basis({functions_.begin(), functions_.begin() + static_cast<std::ptrdiff_t>(k)},
               {source_ids_.begin(), source_ids_.begin() + static_cast<std::ptrdiff_t>(k)});
}

bool CoeffVector::nonnegative() const noexcept {
  for (double v : psi) {
    if (v < 0.0) return false;
  }
  return true;
}

namespace {

double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) {
    // Flat curves: perfectly correlated only with an identical curve.
    bool equal = true;
    for (std::size_t i = 0; i < a.size() && equal; ++i) equal = a[i] == b[i];
    return equal ? 1.0 : 0.0;
  }
  return sab / std::sqrt(saa * sbb);
}

std::size_t most_correlated(std::span<const QuantileCurve> curves) {
  const std::size_t n = curves.size();
  if (n == 1) return 0;
  std::vector<double> total(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double r = pearson(curves[i].values(), curves[j].values());
      total[i] += r;
      total[j] += r;
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (total[i] > total[best]) best = i;
  }
  return best;
}

}  // namespace

Basis select_basis(std::span<const QuantileCurve> curves, std::size_t k) {
  if (k == 0) throw DomainError("basis size k must be at least 1");
  if (curves.empty()) throw DomainError("cannot select a basis from an empty curve set");
  for (const auto& c : curves) require_same_grid(curves.front(), c);

  const std::size_t n = curves.size();
  const std::size_t m = curves.front().size();
  const auto w = curves.front().grid().weights();
  const auto inner = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += w[i] * a[i] * b[i];
    return s;
  };

  double max_norm = 0.0;
  for (const auto& c : curves) max_norm = std::max(max_norm, l2_norm(c));

  std::vector<std::vector<double>> residual(n);
  for (std::size_t i = 0; i < n; ++i) residual[i].assign(curves[i].values().begin(), curves[i].values().end());

  std::vector<std::size_t> chosen;
  for (std::size_t step = 0; step < k; ++step) {
    std::size_t pick = 0;
    if (step == 0) {
      pick = most_correlated(curves);
      if (std::sqrt(inner(residual[pick], residual[pick])) <= 1e-12 * max_norm || max_norm == 0.0) {
        throw RankError("all learning curves are zero; achievable k = 0");
      }
    } else {
      double best = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = inner(residual[i], residual[i]);
        if (r > best) {
          best = r;
          pick = i;
        }
      }
      if (std::sqrt(std::max(best, 0.0)) <= 1e-10 * max_norm) {
        throw RankError("requested k = " + std::to_string(k) + " but the learning curves span only " +
                        std::to_string(step) + " dimensions; achievable k = " + std::to_string(step));
      }
    }
    chosen.push_back(pick);
    // Modified Gram-Schmidt: orthonormalise the picked residual, then deflate every residual.
    std::vector<double> q = residual[pick];
    const double qn = std::sqrt(inner(q, q));
    for (double& v : q) v /= qn;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = inner(residual[i], q);
      for (std::size_t t = 0; t < m; ++t) residual[i][t] -= c * q[t];
    }
    residual[pick].assign(m, 0.0);
  }

  std::vector<QuantileCurve> functions;
  for (std::size_t id : chosen) functions.push_back(curves[id]);
  return Basis(std::move(functions), std::move(chosen));
}

CoeffVector project(const QuantileCurve& curve, const Basis& basis) {
  const std::size_t k = basis.size();
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(k));
  for (std::size_t j = 0; j < k; ++j) rhs(static_cast<Eigen::Index>(j)) = l2_inner(curve, basis[j]);
  const Eigen::VectorXd psi = basis.solve_gram(rhs);
  if (!psi.allFinite()) throw RankError("projection produced non-finite coefficients");
  return CoeffVector{std::vector<double>(psi.data(), psi.data() + psi.size())};
}

QuantileCurve reconstruct(const CoeffVector& psi, const Basis& basis) {
  if (psi.size() != basis.size()) throw DomainError("coefficient vector does not match the basis size");
  std::vector<double> values(basis.grid().size(), 0.0);
  for (std::size_t j = 0; j < basis.size(); ++j) {
    const auto r = basis[j].values();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += psi[j] * r[i];
  }
  return QuantileCurve(basis.grid_ptr(), std::move(values));
}

double projection_error(std::span<const QuantileCurve> curves, const Basis& basis) {
  if (curves.empty()) throw DomainError("projection error over an empty curve set");
  double total = 0.0;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const double norm = l2_norm(curves[i]);
    if (norm == 0.0) throw DivisionByZeroError("curve " + std::to_string(i) + " has zero L2 norm");
    total += l2_distance(curves[i], reconstruct(project(curves[i], basis), basis)) / norm;
  }
  return total / static_cast<double>(curves.size());
}

std::size_t choose_k(std::span<const QuantileCurve> curves, double tol, std::size_t k_max) {
  std::size_t limit = k_max;
  Basis full = [&] {
    while (true) {
      try {
        return select_basis(curves, limit);
      } catch (const RankError&) {
        if (limit <= 1) throw;
        --limit;
      }
    }
  }();
  for (std::size_t k = 1; k < full.size(); ++k) {
    if (projection_error(curves, full.truncated(k)) <= tol) return k;
  }
  return full.size();
}

void save_basis(const std::filesystem::path& dir, const Basis& basis) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["k"] = basis.size();
  manifest["m"] = basis.grid().size();
  manifest["source_ids"] = basis.source_ids();
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t j = 0; j < basis.size(); ++j) {
    const std::string name = "R" + std::to_string(j + 1) + ".csv";
    write_curve_csv(dir / name, basis[j]);
    files.push_back(name);
  }
  manifest["files"] = files;
  write_text(dir / "basis.json", manifest.dump(2) + "\n");
}

Basis load_basis(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(read_text(dir / "basis.json"));
  std::vector<QuantileCurve> functions;
  GridPtr grid;
  for (const auto& name : manifest.at("files")) {
    auto c = read_curve_csv(dir / name.get<std::string>());
    if (!grid) grid = c.grid_ptr();
    if (!(*grid == c.grid())) throw GridMismatchError("basis files use different grids");
    functions.emplace_back(grid, std::vector<double>(c.values().begin(), c.values().end()));
  }
  return Basis(std::move(functions), manifest.at("source_ids").get<std::vector<std::size_t>>());
}

}  // namespace qf
