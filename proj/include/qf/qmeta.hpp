#pragma once

// Quantile-function metamodel: a greedy basis R_1..R_k of learning curves plus one
// kriging model per projection coefficient,
//   Q(x) ~ sum_j psi_j(x) R_j,   psi_j(x) ~ N(psi_hat_j(x), MSE_j(x)) independently.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qf/curves.hpp"
#include "qf/empirical.hpp"
#include "qf/gp.hpp"
#include "qf/input.hpp"
#include "qf/mmp.hpp"

namespace qf {

enum class CoeffTransform {
  Identity,
  LogShift,  ///< kriging on log(psi + 1), back-transformed with exp(.) - 1
};

std::string transform_name(CoeffTransform t);
CoeffTransform parse_transform(const std::string& name);

struct MetamodelConfig {
  std::size_t k = 4;
  CoeffTransform transform = CoeffTransform::Identity;
  GpConfig gp;
  std::size_t threads = 0;  // coefficient fits in parallel; 0 = hardware concurrency
};

/// Gaussian law of the projected quantile at one level p.
struct QuantileLaw {
  double mean = 0.0;
  double variance = 0.0;
  double level = 0.5;
};

/// H(q) = q(p).
class ObjectiveSpec {
 public:
  explicit ObjectiveSpec(double p);
  double p() const noexcept { return p_; }
  double operator()(const QuantileCurve& q) const { return eval_at(q, p_); }

 private:
  double p_;
};

class QuantileMetamodel {
 public:
  /// Basis selection, projection of every learning curve, and one GP per coefficient.
  static QuantileMetamodel fit(std::span<const InputPoint> design, std::span<const QuantileCurve> curves,
                               const InputBox& box, const MetamodelConfig& config);

  /// Same, with the basis supplied by the caller.
  static QuantileMetamodel fit_with_basis(std::span<const InputPoint> design, std::span<const QuantileCurve> curves,
                                          Basis basis, const InputBox& box, const MetamodelConfig& config);

  const Basis& basis() const noexcept { return basis_; }
  const ProbGrid& grid() const noexcept { return basis_.grid(); }
  const GridPtr& grid_ptr() const noexcept { return basis_.grid_ptr(); }
  std::size_t k() const noexcept { return basis_.size(); }
  const std::vector<GpModel>& coeff_models() const noexcept { return models_; }
  CoeffTransform transform() const noexcept { return transform_; }
  const InputBox& box() const noexcept { return box_; }
  const std::vector<InputPoint>& design() const noexcept { return design_; }
  /// psi(chi): projection coefficients of the learning curves, one row per design point.
  const std::vector<CoeffVector>& coefficients() const noexcept { return coefficients_; }
  /// Non-fatal findings from fitting (negative coefficients, non-monotone projections).
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  /// Kriging law of each psi_j(x) (after back-transformation under LogShift).
  std::vector<GaussianPrediction> predict_coefficients(const InputPoint& x) const;

  /// sum_j psi_hat_j(x) R_j. A non-monotone prediction is logged unless `monotone`
  /// is given, in which case the check result is stored there instead.
  QuantileCurve predict_curve(const InputPoint& x, bool* monotone = nullptr) const;

  /// N(sum_j psi_hat_j(x) R_j(p), sum_j R_j(p)^2 MSE_j(x)).
  QuantileLaw predict_law(const InputPoint& x, double p) const;

  /// Bundle directory: manifest.json, design.csv, basis/, gp_<j>.{json,csv}.
  void save(const std::filesystem::path& dir) const;
  static QuantileMetamodel load(const std::filesystem::path& dir);

 private:
  QuantileMetamodel(Basis basis) : basis_(std::move(basis)) {}

  Basis basis_;
  std::vector<GpModel> models_;
  CoeffTransform transform_ = CoeffTransform::Identity;
  InputBox box_;
  std::vector<InputPoint> design_;
  std::vector<CoeffVector> coefficients_;
  std::vector<std::string> warnings_;
};

/// Mean relative L2 error of predicted curves over `truth`.
double global_error(const QuantileMetamodel& meta, std::span<const LabeledCurve> truth);

/// Mean absolute error of the predicted p-quantile over `truth`, divided by the
/// range max Q_x(p) - min Q_x(p) of the true values.
double objective_error(const QuantileMetamodel& meta, std::span<const LabeledCurve> truth, double p);

}  // namespace qf
