#pragma once

// Modified Magic Points: greedy selection of representative quantile curves and
// L2 projection of curves onto their span.

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "qf/curves.hpp"

namespace qf {

/// Ordered basis functions R_1..R_k with a cached factorization of their Gram matrix.
class Basis {
 public:
  /// Throws GridMismatchError for mixed grids and RankError for a singular Gram matrix.
  Basis(std::vector<QuantileCurve> functions, std::vector<std::size_t> source_ids);

  std::size_t size() const noexcept { return functions_.size(); }
  const std::vector<QuantileCurve>& functions() const noexcept { return functions_; }
  const QuantileCurve& operator[](std::size_t j) const { return functions_[j]; }
  const std::vector<std::size_t>& source_ids() const noexcept { return source_ids_; }
  const GridPtr& grid_ptr() const noexcept { return functions_.front().grid_ptr(); }
  const ProbGrid& grid() const noexcept { return functions_.front().grid(); }
  const Eigen::MatrixXd& gram() const noexcept { return gram_; }

  /// Solves gram * psi = rhs.
  Eigen::VectorXd solve_gram(const Eigen::VectorXd& rhs) const { return gram_llt_.solve(rhs); }

  /// First `k` functions, keeping their source ids.
  Basis truncated(std::size_t k) const;

 private:
  std::vector<QuantileCurve> functions_;
  std::vector<std::size_t> source_ids_;
  Eigen::MatrixXd gram_;
  Eigen::LLT<Eigen::MatrixXd> gram_llt_;
};

/// Projection coefficients psi_1..psi_k.
struct CoeffVector {
  std::vector<double> psi;

  std::size_t size() const noexcept { return psi.size(); }
  double operator[](std::size_t j) const { return psi[j]; }
  /// Membership in the constraint set {psi >= 0}; reported, never enforced.
  bool nonnegative() const noexcept;
};

/// Greedy selection. R_1 maximises the mean Pearson correlation with the other
/// curves; each following R_j is the curve farthest (in L2) from its projection on
/// the functions already chosen. Ties go to the smallest index.
Basis select_basis(std::span<const QuantileCurve> curves, std::size_t k);

/// Least-squares coefficients of `curve` in span(basis).
CoeffVector project(const QuantileCurve& curve, const Basis& basis);

/// sum_j psi_j R_j
QuantileCurve reconstruct(const CoeffVector& psi, const Basis& basis);

/// Mean over curves of ||Q - proj(Q)|| / ||Q||.
double projection_error(std::span<const QuantileCurve> curves, const Basis& basis);

/// Smallest k <= k_max whose greedy basis reaches projection_error <= tol; k_max
/// (or the achievable rank) when no smaller k does.
std::size_t choose_k(std::span<const QuantileCurve> curves, double tol, std::size_t k_max);

/// Directory with `basis.json` plus one `R<j>.csv` per function.
void save_basis(const std::filesystem::path& dir, const Basis& basis);
Basis load_basis(const std::filesystem::path& dir);

}  // namespace qf
