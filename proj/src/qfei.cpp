#include "qf/qfei.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "json.hpp"

#include "qf/error.hpp"
#include "qf/format.hpp"
#include "qf/log.hpp"
#include "qf/parallel.hpp"

namespace qf {

bool Design::contains(const InputPoint& x) const {
  return std::any_of(entries.begin(), entries.end(), [&](const DesignEntry& e) { return e.x == x; });
}

std::vector<InputPoint> Design::inputs() const {
  std::vector<InputPoint> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.x);
  return out;
}

std::vector<QuantileCurve> Design::curves() const {
  std::vector<QuantileCurve> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.curve);
  return out;
}

double expected_improvement(const QuantileLaw& law, double best) {
  if (law.variance < 0.0 || std::isnan(law.variance)) {
    throw DomainError("expected improvement needs a nonnegative variance, got " + format_double(law.variance));
  }
  const double delta = law.mean - best;
  const double sigma = std::sqrt(law.variance);
  if (sigma == 0.0) return std::max(delta, 0.0);
  const double u = delta / sigma;
  const double cdf = 0.5 * std::erfc(-u / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(0.0, sigma * (u * cdf + pdf));
}

Design collect_design(Simulator& sim, std::span<const InputPoint> inputs, const GridPtr& grid, std::size_t n_mc,
                      std::uint64_t seed, StreamPolicy streams) {
  Design d;
  std::set<InputPoint> seen;
  for (const auto& x : inputs) {
    if (!seen.insert(x).second) throw DuplicateInputError("input " + to_string(x) + " appears twice in the design");
    const auto batch = collect(sim, x, n_mc, derive_seed(seed, x, 0, streams));
    d.entries.push_back({x, empirical_quantile_curve(batch, grid), CoeffVector{}});
  }
  return d;
}

void refresh_design(Design& design, const QuantileMetamodel& meta, double p, BestRule rule) {
  design.observed_obj.resize(design.size());
  for (std::size_t i = 0; i < design.size(); ++i) {
    auto& e = design.entries[i];
    e.psi = project(e.curve, meta.basis());
    design.observed_obj[i] =
        rule == BestRule::Raw ? eval_at(e.curve, p) : eval_at(reconstruct(e.psi, meta.basis()), p);
  }
}

QuantileMetamodel fit_on_design(const Design& design, const InputBox& box, const MetamodelConfig& config) {
  const auto inputs = design.inputs();
  const auto curves = design.curves();
  return QuantileMetamodel::fit(inputs, curves, box, config);
}

std::vector<Candidate> score_candidates(const QuantileMetamodel& meta, const Design& design, const QfeiConfig& cfg) {
  if (design.observed_obj.empty()) throw DomainError("design has no observed objective values");
  const double best = *std::max_element(design.observed_obj.begin(), design.observed_obj.end());
  std::set<InputPoint> taken;
  for (const auto& e : design.entries) taken.insert(e.x);
  std::vector<const InputPoint*> open;
  for (const auto& x : cfg.candidate_set) {
    if (!taken.contains(x)) open.push_back(&x);
  }
  std::vector<Candidate> out(open.size());
  parallel_for(
      open.size(),
      [&](std::size_t i) {
        const auto law = meta.predict_law(*open[i], cfg.p);
        out[i] = Candidate{*open[i], expected_improvement(law, best), law};
      },
      cfg.threads);
  return out;
}

namespace {

const Candidate* pick_max(const std::vector<Candidate>& scored) {
  const Candidate* best = nullptr;
  for (const auto& c : scored) {
    if (!best || c.ei > best->ei || (c.ei == best->ei && c.x < best->x)) best = &c;
  }
  return best;
}

}  // namespace

std::size_t best_design_index(const Design& design) {
  if (design.observed_obj.empty()) throw DomainError("design has no observed objective values");
  std::size_t best = 0;
  for (std::size_t i = 1; i < design.observed_obj.size(); ++i) {
    const double v = design.observed_obj[i];
    const double b = design.observed_obj[best];
    if (v > b || (v == b && design.entries[i].x < design.entries[best].x)) best = i;
  }
  return best;
}

std::optional<StepResult> step(Design& design, QuantileMetamodel& meta, const QfeiConfig& cfg, Simulator& sim,
                               std::size_t iteration) {
  const auto scored = score_candidates(meta, design, cfg);
  const Candidate* chosen = pick_max(scored);
  if (!chosen) return std::nullopt;

  StepResult r;
  r.chosen = *chosen;
  r.best_before = design.observed_obj[best_design_index(design)];

  const auto batch = collect(sim, chosen->x, cfg.n_mc, derive_seed(cfg.seed, chosen->x, 0, cfg.streams));
  auto curve = empirical_quantile_curve(batch, meta.grid_ptr());
  design.entries.push_back({chosen->x, std::move(curve), CoeffVector{}});

  const std::size_t every = std::max<std::size_t>(cfg.refit_every, 1);
  r.refit = iteration % every == 0;
  if (r.refit) {
    meta = fit_on_design(design, meta.box(), cfg.meta);
  } else {
    // Frozen basis and GPs; only the new point's projection is added.
    auto& e = design.entries.back();
    e.psi = project(e.curve, meta.basis());
  }
  refresh_design(design, meta, cfg.p, cfg.best_rule);
  r.observed = design.observed_obj.back();
  r.best_after = design.observed_obj[best_design_index(design)];
  r.regression = r.best_after < r.best_before;
  if (r.regression) {
    log::info("iteration " + std::to_string(iteration) + ": basis refit lowered max U_D from " +
              format_double(r.best_before) + " to " + format_double(r.best_after));
  }
  return r;
}

QfeiReport run(const QfeiConfig& cfg, Simulator& sim, Design initial, QuantileMetamodel meta) {
  if (!(cfg.p > 0.0 && cfg.p < 1.0)) throw ConfigError("p must lie in (0,1)");
  if (initial.observed_obj.size() != initial.size()) refresh_design(initial, meta, cfg.p, cfg.best_rule);

  const std::size_t start = best_design_index(initial);
  QfeiReport report{initial.entries[start].x,
                    initial.entries[start].curve,
                    initial.observed_obj[start],
                    initial.observed_obj[start],
                    initial.entries[start].x,
                    {},
                    cfg.n_mc * initial.size(),
                    0,
                    false,
                    false,
                    {},
                    std::move(initial),
                    std::move(meta)};

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    auto r = step(report.design, report.meta, cfg, sim, it);
    if (!r) {
      report.exhausted = true;
      report.warnings.push_back("candidate set exhausted after " + std::to_string(it - 1) + " iterations");
      break;
    }
    report.simulator_calls += cfg.n_mc;
    report.iterations_run = it;
    report.trajectory.push_back({it, r->chosen.x, r->chosen.ei, r->observed, r->best_after, r->regression});
    if (r->regression) {
      report.warnings.push_back("iteration " + std::to_string(it) + ": max U_D decreased from " +
                                format_double(r->best_before) + " to " + format_double(r->best_after) +
                                " after the basis refit");
    }
    if (cfg.stabilization_rel_tol) {
      const auto [lo, hi] = std::minmax_element(report.design.observed_obj.begin(), report.design.observed_obj.end());
      if (r->chosen.ei < *cfg.stabilization_rel_tol * (*hi - *lo)) {
        report.stabilized = true;
        break;
      }
    }
  }

  const std::size_t best = best_design_index(report.design);
  report.x_hat = report.design.entries[best].x;
  report.curve_hat = report.design.entries[best].curve;
  report.u_hat = report.design.observed_obj[best];
  for (const auto& w : report.meta.warnings()) report.warnings.push_back("final metamodel: " + w);
  return report;
}

Candidate direct_argmax(const QuantileMetamodel& meta, std::span<const InputPoint> candidates, double p) {
  if (candidates.empty()) throw DomainError("direct argmax over an empty candidate set");
  std::optional<Candidate> best;
  for (const auto& x : candidates) {
    const auto law = meta.predict_law(x, p);
    if (!best || law.mean > best->law.mean || (law.mean == best->law.mean && x < best->x)) {
      best = Candidate{x, 0.0, law};
    }
  }
  return *best;
}

void write_report(const std::filesystem::path& dir, const QfeiReport& report, const QfeiConfig& cfg) {
  std::filesystem::create_directories(dir);
  const std::size_t d = report.x_hat.dim();
  CsvTable t;
  t.header.push_back("iter");
  for (std::size_t i = 0; i < d; ++i) t.header.push_back("x" + std::to_string(i + 1));
  for (const char* h : {"ei", "obs_q", "best_so_far"}) t.header.push_back(h);
  for (const auto& row : report.trajectory) {
    std::vector<double> r{static_cast<double>(row.iter)};
    r.insert(r.end(), row.x.coords.begin(), row.x.coords.end());
    r.push_back(row.ei);
    r.push_back(row.obs_q);
    r.push_back(row.best_so_far);
    t.rows.push_back(std::move(r));
  }
  write_csv(dir / "trajectory.csv", t);

  nlohmann::json j;
  j["p"] = cfg.p;
  j["seed"] = cfg.seed;
  j["streams"] = stream_policy_name(cfg.streams);
  j["n_mc"] = cfg.n_mc;
  j["k"] = cfg.meta.k;
  j["iterations_requested"] = cfg.iterations;
  j["iterations_run"] = report.iterations_run;
  j["candidates"] = cfg.candidate_set.size();
  j["x_hat"] = report.x_hat.coords;
  j["u_hat"] = report.u_hat;
  j["q_hat_empirical"] = eval_at(report.curve_hat, cfg.p);
  j["initial_x_hat"] = report.initial_x_hat.coords;
  j["initial_best"] = report.initial_best;
  j["simulator_calls"] = report.simulator_calls;
  j["design_size"] = report.design.size();
  j["exhausted"] = report.exhausted;
  j["stabilized"] = report.stabilized;
  j["warnings"] = report.warnings;
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& row : report.trajectory) {
    traj.push_back({{"iter", row.iter},
                    {"x", row.x.coords},
                    {"ei", row.ei},
                    {"obs_q", row.obs_q},
                    {"best_so_far", row.best_so_far},
                    {"regression", row.regression}});
  }
  j["trajectory"] = traj;
  write_text(dir / "report.json", j.dump(2) + "\n");
}

}  // namespace qf
