#include "qf/qmeta.hpp"

#include <cmath>
#include <optional>

#include "json.hpp"

#include "qf/error.hpp"
#include "qf/format.hpp"
#include "qf/log.hpp"
#include "qf/parallel.hpp"

namespace qf {

std::string transform_name(CoeffTransform t) { return t == CoeffTransform::LogShift ? "log-shift" : "identity"; }

CoeffTransform parse_transform(const std::string& name) {
  if (name == "identity") return CoeffTransform::Identity;
  if (name == "log-shift") return CoeffTransform::LogShift;
  throw ConfigError("unknown coefficient transform '" + name + "' (expected identity or log-shift)");
}

ObjectiveSpec::ObjectiveSpec(double p) : p_(p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("objective level " + format_double(p) + " is outside (0,1)");
}

QuantileMetamodel QuantileMetamodel::fit(std::span<const InputPoint> design, std::span<const QuantileCurve> curves,
                                         const InputBox& box, const MetamodelConfig& config) {
  if (design.size() != curves.size()) {
    throw DomainError("design has " + std::to_string(design.size()) + " inputs but " +
                      std::to_string(curves.size()) + " curves");
  }
  return fit_with_basis(design, curves, select_basis(curves, config.k), box, config);
}

QuantileMetamodel QuantileMetamodel::fit_with_basis(std::span<const InputPoint> design,
                                                    std::span<const QuantileCurve> curves, Basis basis,
                                                    const InputBox& box, const MetamodelConfig& config) {
  const std::size_t n = design.size();
  if (curves.size() != n) {
    throw DomainError("design has " + std::to_string(n) + " inputs but " + std::to_string(curves.size()) +
                      " curves");
  }
  if (n == 0) throw DomainError("empty learning set");
  if (box.dim() != design.front().dim()) throw DomainError("input box does not match the design dimension");
  const std::size_t d = box.dim();
  if (n <= d + 1) {
    throw DomainError("learning set of " + std::to_string(n) + " points is too small for d = " + std::to_string(d));
  }

  QuantileMetamodel meta(std::move(basis));
  meta.transform_ = config.transform;
  meta.box_ = box;
  meta.design_.assign(design.begin(), design.end());
  const std::size_t k = meta.k();

  std::size_t negative = 0, non_monotone = 0;
  meta.coefficients_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto psi = project(curves[i], meta.basis_);
    if (!psi.nonnegative()) ++negative;
    if (!is_monotone(reconstruct(psi, meta.basis_), 0.0)) ++non_monotone;
    meta.coefficients_.push_back(std::move(psi));
  }
  if (negative > 0) {
    meta.warnings_.push_back(std::to_string(negative) + " of " + std::to_string(n) +
                             " learning curves have negative projection coefficients");
  }
  if (non_monotone > 0) {
    meta.warnings_.push_back(std::to_string(non_monotone) + " of " + std::to_string(n) +
                             " projected learning curves are not monotone");
  }

  std::vector<std::vector<double>> targets(k, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double psi = meta.coefficients_[i][j];
      if (config.transform == CoeffTransform::LogShift) {
        if (psi < 0.0) {
          throw FitError("log-shift transform needs nonnegative coefficients; psi_" + std::to_string(j + 1) + " = " +
                         format_double(psi) + " at input " + to_string(design[i]));
        }
        psi = std::log1p(psi);
      }
      targets[j][i] = psi;
    }
  }

  std::vector<InputPoint> normalized;
  normalized.reserve(n);
  for (const auto& x : design) normalized.push_back(box.normalize(x));

  std::vector<std::optional<GpModel>> fitted(k);
  parallel_for(
      k,
      [&](std::size_t j) {
        GpConfig gp = config.gp;
        gp.seed = combine_seed(config.gp.seed, j);
        fitted[j].emplace(GpModel::fit(normalized, targets[j], gp));
      },
      config.threads);
  for (auto& m : fitted) meta.models_.push_back(std::move(*m));
  return meta;
}

std::vector<GaussianPrediction> QuantileMetamodel::predict_coefficients(const InputPoint& x) const {
  const InputPoint z = box_.normalize(x);
  std::vector<GaussianPrediction> out;
  out.reserve(models_.size());
  for (const auto& m : models_) {
    auto g = m.predict(z);
    if (transform_ == CoeffTransform::LogShift) {
      // psi = exp(phi) - 1 with phi Gaussian: shifted log-normal moments; the mean
      // keeps the plug-in estimate exp(phi_hat) - 1.
      const double mean = std::expm1(g.mean);
      const double var = std::expm1(g.variance) * std::exp(2.0 * g.mean + g.variance);
      g = {mean, var};
    }
    out.push_back(g);
  }
  return out;
}

QuantileCurve QuantileMetamodel::predict_curve(const InputPoint& x, bool* monotone) const {
  const auto coeffs = predict_coefficients(x);
  std::vector<double> values(grid().size(), 0.0);
  for (std::size_t j = 0; j < k(); ++j) {
    const auto r = basis_[j].values();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += coeffs[j].mean * r[i];
  }
  QuantileCurve curve(grid_ptr(), std::move(values));
  const bool ok = is_monotone(curve, 0.0);
  if (monotone) {
    *monotone = ok;
  } else if (!ok) {
    log::warn("predicted quantile curve at " + to_string(x) + " is not monotone");
  }
  return curve;
}

QuantileLaw QuantileMetamodel::predict_law(const InputPoint& x, double p) const {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("probability " + format_double(p) + " is outside (0,1)");
  const auto coeffs = predict_coefficients(x);
  QuantileLaw law;
  law.level = p;
  for (std::size_t j = 0; j < k(); ++j) {
    const double r = eval_at(basis_[j], p);
    law.mean += coeffs[j].mean * r;
    law.variance += r * r * coeffs[j].variance;
  }
  return law;
}

void QuantileMetamodel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_basis(dir / "basis", basis_);
  nlohmann::json gps = nlohmann::json::array();
  for (std::size_t j = 0; j < models_.size(); ++j) {
    const std::string stem = "gp_" + std::to_string(j + 1);
    models_[j].save(dir, stem);
    gps.push_back(stem);
  }
  CsvTable design;
  for (std::size_t i = 0; i < box_.dim(); ++i) design.header.push_back("x" + std::to_string(i + 1));
  for (std::size_t j = 0; j < k(); ++j) design.header.push_back("psi" + std::to_string(j + 1));
  for (std::size_t i = 0; i < design_.size(); ++i) {
    std::vector<double> row = design_[i].coords;
    row.insert(row.end(), coefficients_[i].psi.begin(), coefficients_[i].psi.end());
    design.rows.push_back(std::move(row));
  }
  write_csv(dir / "design.csv", design);

  nlohmann::json manifest;
  manifest["k"] = k();
  manifest["m"] = grid().size();
  manifest["d"] = box_.dim();
  manifest["n"] = design_.size();
  manifest["transform"] = transform_name(transform_);
  manifest["kernel"] = models_.empty() ? "" : kernel_name(models_.front().kernel());
  manifest["input_lower"] = box_.lower;
  manifest["input_upper"] = box_.upper;
  manifest["basis"] = "basis";
  manifest["design"] = "design.csv";
  manifest["gps"] = gps;
  manifest["warnings"] = warnings_;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

QuantileMetamodel QuantileMetamodel::load(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
  QuantileMetamodel meta(load_basis(dir / manifest.at("basis").get<std::string>()));
  meta.transform_ = parse_transform(manifest.at("transform").get<std::string>());
  meta.box_.lower = manifest.at("input_lower").get<std::vector<double>>();
  meta.box_.upper = manifest.at("input_upper").get<std::vector<double>>();
  const std::size_t d = meta.box_.dim();
  const std::size_t k = meta.k();
  const auto design = read_csv(dir / manifest.at("design").get<std::string>());
  if (design.header.size() != d + k) throw IoError("bundle design table does not match d + k columns");
  for (const auto& row : design.rows) {
    meta.design_.push_back(InputPoint{std::vector<double>(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(d))});
    meta.coefficients_.push_back(CoeffVector{std::vector<double>(row.begin() + static_cast<std::ptrdiff_t>(d), row.end())});
  }
  for (const auto& stem : manifest.at("gps")) meta.models_.push_back(GpModel::load(dir, stem.get<std::string>()));
  if (meta.models_.size() != k) throw IoError("bundle has " + std::to_string(meta.models_.size()) +
                                              " coefficient models for k = " + std::to_string(k));
  if (manifest.contains("warnings")) meta.warnings_ = manifest["warnings"].get<std::vector<std::string>>();
  return meta;
}

double global_error(const QuantileMetamodel& meta, std::span<const LabeledCurve> truth) {
  if (truth.empty()) throw DomainError("global error over an empty truth set");
  double total = 0.0;
  for (const auto& t : truth) {
    const double norm = l2_norm(t.curve);
    if (norm == 0.0) throw DivisionByZeroError("true curve at " + to_string(t.x) + " has zero L2 norm");
    bool monotone = true;
    total += l2_distance(t.curve, meta.predict_curve(t.x, &monotone)) / norm;
  }
  return total / static_cast<double>(truth.size());
}

double objective_error(const QuantileMetamodel& meta, std::span<const LabeledCurve> truth, double p) {
  if (truth.empty()) throw DomainError("objective error over an empty truth set");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  double total = 0.0;
  for (const auto& t : truth) {
    const double q = eval_at(t.curve, p);
    lo = std::min(lo, q);
    hi = std::max(hi, q);
    total += std::abs(q - meta.predict_law(t.x, p).mean);
  }
  if (!(hi > lo)) throw DegenerateObjectiveError("true p-quantiles are constant over the truth set");
  return total / static_cast<double>(truth.size()) / (hi - lo);
}

}  // namespace qf
