#pragma once

// Quantile Function Expected Improvement: sequential enrichment of the design with
// the candidate maximising E[(U_x - max U_D)^+], where U_x = sum_j psi_j(x) R_j(p) is
// Gaussian under the coefficient kriging models.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "qf/empirical.hpp"
#include "qf/qmeta.hpp"
#include "qf/simulators.hpp"

namespace qf {

struct DesignEntry {
  InputPoint x;
  QuantileCurve curve;  // empirical curve observed at x
  CoeffVector psi;      // projection on the current basis
};

/// The evolving learning set D with the observed objective U_D.
struct Design {
  std::vector<DesignEntry> entries;
  std::vector<double> observed_obj;

  std::size_t size() const noexcept { return entries.size(); }
  bool contains(const InputPoint& x) const;
  std::vector<InputPoint> inputs() const;
  std::vector<QuantileCurve> curves() const;
};

struct Candidate {
  InputPoint x;
  double ei = 0.0;
  QuantileLaw law;
};

/// Which value stands for U at design points.
enum class BestRule {
  Projected,  ///< p-quantile of the projection on the current basis
  Raw,        ///< p-quantile of the empirical curve
};

struct QfeiConfig {
  double p = 0.4;
  std::size_t iterations = 20;
  std::size_t n_mc = 10'000;
  std::vector<InputPoint> candidate_set;  // the finite search set E
  std::uint64_t seed = 0;                 // master seed of simulator streams
  StreamPolicy streams = StreamPolicy::PerInput;
  MetamodelConfig meta;                   // k lives here
  std::size_t refit_every = 1;
  /// Stop once the best EI falls below rel_tol * (max U_D - min U_D).
  std::optional<double> stabilization_rel_tol;
  BestRule best_rule = BestRule::Projected;
  std::size_t threads = 0;  // candidate scoring workers
};

/// sigma (u Phi(u) + phi(u)), u = (mean - best) / sigma; max(mean - best, 0) when sigma = 0.
double expected_improvement(const QuantileLaw& law, double best);

/// Simulates every input and builds the design (psi and U_D are left empty).
Design collect_design(Simulator& sim, std::span<const InputPoint> inputs, const GridPtr& grid, std::size_t n_mc,
                      std::uint64_t seed, StreamPolicy streams);

/// Recomputes psi and U_D for every entry under the metamodel's basis.
void refresh_design(Design& design, const QuantileMetamodel& meta, double p, BestRule rule);

QuantileMetamodel fit_on_design(const Design& design, const InputBox& box, const MetamodelConfig& config);

/// EI for every candidate not already in the design, in candidate-set order.
std::vector<Candidate> score_candidates(const QuantileMetamodel& meta, const Design& design, const QfeiConfig& cfg);

struct StepResult {
  Candidate chosen;
  double observed = 0.0;      // U at the new point after the update
  double best_before = 0.0;
  double best_after = 0.0;
  bool refit = false;
  bool regression = false;    // best_after < best_before after a basis refit
};

/// One QFEI iteration: score, simulate x_new, extend D, refit (every `refit_every`
/// iterations) and refresh U_D. Returns nullopt when every candidate is in D.
std::optional<StepResult> step(Design& design, QuantileMetamodel& meta, const QfeiConfig& cfg, Simulator& sim,
                               std::size_t iteration = 1);

struct TrajectoryRow {
  std::size_t iter = 0;
  InputPoint x;
  double ei = 0.0;
  double obs_q = 0.0;
  double best_so_far = 0.0;
  bool regression = false;
};

struct QfeiReport {
  InputPoint x_hat;
  QuantileCurve curve_hat;  // observed curve at x_hat
  double u_hat = 0.0;
  double initial_best = 0.0;
  InputPoint initial_x_hat;
  std::vector<TrajectoryRow> trajectory;
  std::size_t simulator_calls = 0;
  std::size_t iterations_run = 0;
  bool exhausted = false;
  bool stabilized = false;
  std::vector<std::string> warnings;
  Design design;
  QuantileMetamodel meta;
};

/// Index of argmax_{x in D} U_D; ties go to the smallest input.
std::size_t best_design_index(const Design& design);

/// Runs `cfg.iterations` steps (or until exhaustion) from a design whose U_D matches `meta`.
QfeiReport run(const QfeiConfig& cfg, Simulator& sim, Design initial, QuantileMetamodel meta);

/// argmax over the candidates of the predicted p-quantile (no enrichment).
Candidate direct_argmax(const QuantileMetamodel& meta, std::span<const InputPoint> candidates, double p);

/// `trajectory.csv` (iter,x...,ei,obs_q,best_so_far) and `report.json`.
void write_report(const std::filesystem::path& dir, const QfeiReport& report, const QfeiConfig& cfg);

}  // namespace qf
