#include "qf/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <map>
#include <numeric>
#include <set>

#include "json.hpp"

#include "qf/error.hpp"
#include "qf/format.hpp"
#include "qf/log.hpp"
#include "qf/parallel.hpp"

namespace qf::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Stream tags keep the random draws of different purposes apart under one master seed.
constexpr std::uint64_t kDesignTag = 0x64657369676eULL;     // initial design
constexpr std::uint64_t kCandidateTag = 0x63616e64ULL;      // restricted candidate set
constexpr std::uint64_t kGpTag = 0x6770ULL;                 // GP multi-starts
constexpr std::uint64_t kRepTag = 0x726570ULL;              // toy-experiment repetitions

constexpr std::size_t kEnumerateLimit = 1'000'000;

// Reference values of the toy study reported next to the computed ones.
const json kToyReference = {{"err1", 0.0009},        {"err2", 0.0013},      {"err3", 0.0142},
                            {"objective_error_p05", 0.054}, {"q_star", 0.884}, {"q_second", 0.878},
                            {"x_star", {1.0, 0.1, 0.5}},    {"x_second", {1.0, 0.1, 0.2}},
                            {"mean_q", -0.277},   {"var_q", 0.071},      {"direct_q", 0.739},
                            {"exact_hits", 22},   {"top2_hits", 30},     {"reps", 30}};

StreamPolicy streams_of(const RunConfig& cfg) { return parse_stream_policy(cfg.streams); }

GpConfig gp_config(const RunConfig& cfg, std::uint64_t seed) {
  GpConfig gp;
  gp.kernel = parse_kernel(cfg.kernel);
  gp.starts = cfg.gp_starts;
  gp.seed = seed;
  return gp;
}

MetamodelConfig meta_config(const RunConfig& cfg, std::uint64_t gp_seed, std::size_t threads) {
  MetamodelConfig mc;
  mc.k = cfg.k;
  mc.transform = parse_transform(cfg.transform);
  mc.gp = gp_config(cfg, gp_seed);
  mc.threads = threads;
  return mc;
}

bool is_toy(const RunConfig& cfg) { return cfg.sim == "toy"; }

// The finite set E, enumerated when small enough.
struct Universe {
  InputSpace space;
  std::vector<InputPoint> points;  // empty when E is too large to enumerate

  std::vector<InputPoint> sample(std::size_t n, RandomStream& rng, const std::set<InputPoint>& exclude) const {
    if (points.empty()) return space.sample_distinct(n, rng, exclude);
    std::vector<std::size_t> idx;
    idx.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!exclude.contains(points[i])) idx.push_back(i);
    }
    if (n > idx.size()) {
      throw ConfigError("requested " + std::to_string(n) + " distinct inputs but only " + std::to_string(idx.size()) +
                        " are available");
    }
    std::vector<InputPoint> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
      std::swap(idx[i], idx[j]);
      out.push_back(points[idx[i]]);
    }
    return out;
  }
};

Universe universe_of(Simulator& sim) {
  Universe u{sim.input_space(), {}};
  if (auto* replay = dynamic_cast<ReplaySimulator*>(&sim)) {
    u.points = replay->inputs();
  } else if (u.space.cardinality() <= kEnumerateLimit) {
    u.points = u.space.enumerate();
  }
  return u;
}

InputBox box_of(const Universe& u) {
  if (u.points.empty()) return u.space.box();
  const std::size_t d = u.points.front().dim();
  InputBox box{u.points.front().coords, u.points.front().coords};
  for (const auto& x : u.points) {
    for (std::size_t i = 0; i < d; ++i) {
      box.lower[i] = std::min(box.lower[i], x[i]);
      box.upper[i] = std::max(box.upper[i], x[i]);
    }
  }
  return box;
}

void require_design_size(std::size_t n, std::size_t d) {
  if (n <= d + 1) {
    throw ConfigError("n=" + std::to_string(n) + " learning inputs cannot fit a linear-trend GP in dimension " +
                      std::to_string(d) + "; need n > d+1 = " + std::to_string(d + 1));
  }
}

std::vector<InputPoint> read_design_file(const fs::path& path, std::size_t d) {
  const auto t = read_csv(path);
  if (t.header.size() != d) {
    throw ConfigError(path.string() + ": expected " + std::to_string(d) + " columns x1,...,xd, got " +
                      std::to_string(t.header.size()));
  }
  std::vector<InputPoint> out;
  for (const auto& row : t.rows) out.push_back(InputPoint{row});
  return out;
}

std::vector<InputPoint> initial_inputs(const RunConfig& cfg, const Universe& u) {
  const std::size_t d = u.space.dimension();
  std::vector<InputPoint> xs;
  if (!cfg.design_file.empty()) {
    xs = read_design_file(cfg.design_file, d);
  } else {
    RandomStream rng(combine_seed(cfg.seed, kDesignTag));
    xs = u.sample(cfg.n, rng, {});
  }
  require_design_size(xs.size(), d);
  std::set<InputPoint> seen;
  for (const auto& x : xs) {
    if (!seen.insert(x).second) throw DuplicateInputError("initial design lists " + to_string(x) + " twice");
  }
  return xs;
}

std::vector<InputPoint> candidate_set(const RunConfig& cfg, const Universe& u, const std::vector<InputPoint>& design) {
  if (!u.points.empty() && u.points.size() <= cfg.candidates) return u.points;
  std::set<InputPoint> in_design(design.begin(), design.end());
  RandomStream rng(combine_seed(cfg.seed, kCandidateTag));
  const std::size_t extra = cfg.candidates > design.size() ? cfg.candidates - design.size() : 0;
  auto out = u.sample(extra, rng, in_design);
  out.insert(out.end(), design.begin(), design.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<SampleBatch> collect_batches(Simulator& sim, const std::vector<InputPoint>& xs, std::size_t n_mc,
                                         std::uint64_t seed, StreamPolicy streams) {
  std::vector<SampleBatch> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = collect(sim, xs[i], n_mc, derive_seed(seed, xs[i], 0, streams));
  return out;
}

std::vector<LabeledCurve> curves_of(const std::vector<SampleBatch>& batches, const GridPtr& grid) {
  std::vector<LabeledCurve> out;
  out.reserve(batches.size());
  for (const auto& b : batches) out.push_back({b.input, empirical_quantile_curve(b, grid)});
  return out;
}

std::vector<QuantileCurve> only_curves(std::span<const LabeledCurve> lc) {
  std::vector<QuantileCurve> out;
  out.reserve(lc.size());
  for (const auto& c : lc) out.push_back(c.curve);
  return out;
}

std::vector<InputPoint> only_inputs(std::span<const LabeledCurve> lc) {
  std::vector<InputPoint> out;
  out.reserve(lc.size());
  for (const auto& c : lc) out.push_back(c.x);
  return out;
}

json config_json(const RunConfig& cfg) {
  json j;
  j["sim"] = cfg.sim;
  j["seed"] = cfg.seed;
  j["n"] = cfg.n;
  j["k"] = cfg.k;
  j["m"] = cfg.m;
  j["n_mc"] = cfg.n_mc;
  j["p"] = cfg.p;
  j["validate_p"] = cfg.validate_p;
  j["iterations"] = cfg.iterations;
  j["reps"] = cfg.reps;
  j["streams"] = cfg.streams;
  j["kernel"] = cfg.kernel;
  j["transform"] = cfg.transform;
  j["candidates"] = cfg.candidates;
  j["refit_every"] = cfg.refit_every;
  j["stop_rel_tol"] = cfg.stop_rel_tol ? json(*cfg.stop_rel_tol) : json(nullptr);
  j["raw_best"] = cfg.raw_best;
  j["gp_starts"] = cfg.gp_starts;
  return j;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Timings live apart from the data files so those stay byte-identical across runs.
class Metadata {
 public:
  explicit Metadata(std::string command) : command_(std::move(command)), started_(utc_now()) {}

  void write(const fs::path& dir) const {
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0_;
    json j{{"command", command_}, {"started_utc", started_}, {"elapsed_seconds", elapsed.count()},
           {"threads", default_threads()}};
    write_text(dir / "metadata.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::string started_;
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::vector<std::string> tail_level_warnings(const ProbGrid& grid, double p) {
  const auto& lv = grid.levels();
  if (p >= lv.front() && p <= lv.back()) return {};
  const std::string w = "p=" + format_double(p) + " lies outside the grid levels [" + format_double(lv.front()) +
                        ", " + format_double(lv.back()) + "]; quantiles at p are extrapolated from the boundary level";
  log::warn(w);
  return {w};
}

Design design_from(std::span<const LabeledCurve> curves) {
  Design d;
  for (const auto& c : curves) d.entries.push_back({c.x, c.curve, {}});
  return d;
}

QfeiConfig qfei_config(const RunConfig& cfg, std::vector<InputPoint> candidates, const MetamodelConfig& mc,
                       std::size_t threads) {
  QfeiConfig q;
  q.p = cfg.p;
  q.iterations = cfg.iterations;
  q.n_mc = cfg.n_mc;
  q.candidate_set = std::move(candidates);
  q.seed = cfg.seed;
  q.streams = streams_of(cfg);
  q.meta = mc;
  q.refit_every = cfg.refit_every;
  q.stabilization_rel_tol = cfg.stop_rel_tol;
  q.best_rule = cfg.raw_best ? BestRule::Raw : BestRule::Projected;
  q.threads = threads;
  return q;
}

template <class T>
void read_key(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

RunConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path.string() + ": top level must be a JSON object");
  static const std::set<std::string> known{
      "sim",        "input_grids", "seed",          "out",         "n",          "k",          "m",
      "n_mc",       "p",           "validate_p",    "iterations",  "reps",       "streams",    "kernel",
      "transform",  "candidates",  "refit_every",   "stop_rel_tol", "raw_best",  "design_file", "bundle",
      "truth",      "truth_cache", "worst",         "threads",     "external_timeout_ms", "external_pool",
      "gp_starts",  "save_draws"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError(path.string() + ": unknown key '" + key + "'");
  }
  RunConfig cfg;
  try {
    read_key(j, "sim", cfg.sim);
    read_key(j, "input_grids", cfg.input_grids);
    read_key(j, "seed", cfg.seed);
    if (j.contains("out")) cfg.out = j.at("out").get<std::string>();
    read_key(j, "n", cfg.n);
    read_key(j, "k", cfg.k);
    read_key(j, "m", cfg.m);
    read_key(j, "n_mc", cfg.n_mc);
    read_key(j, "p", cfg.p);
    read_key(j, "validate_p", cfg.validate_p);
    read_key(j, "iterations", cfg.iterations);
    read_key(j, "reps", cfg.reps);
    read_key(j, "streams", cfg.streams);
    read_key(j, "kernel", cfg.kernel);
    read_key(j, "transform", cfg.transform);
    read_key(j, "candidates", cfg.candidates);
    read_key(j, "refit_every", cfg.refit_every);
    if (j.contains("stop_rel_tol") && !j.at("stop_rel_tol").is_null()) cfg.stop_rel_tol = j.at("stop_rel_tol").get<double>();
    read_key(j, "raw_best", cfg.raw_best);
    for (auto [key, field] : {std::pair{"design_file", &cfg.design_file}, std::pair{"bundle", &cfg.bundle},
                              std::pair{"truth", &cfg.truth}, std::pair{"truth_cache", &cfg.truth_cache}}) {
      if (j.contains(key)) *field = j.at(key).get<std::string>();
    }
    read_key(j, "worst", cfg.worst);
    read_key(j, "threads", cfg.threads);
    read_key(j, "external_timeout_ms", cfg.external_timeout_ms);
    read_key(j, "external_pool", cfg.external_pool);
    read_key(j, "gp_starts", cfg.gp_starts);
    read_key(j, "save_draws", cfg.save_draws);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return cfg;
}

void validate_config(const RunConfig& cfg) {
  const auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(cfg.n, "n");
  positive(cfg.k, "k");
  positive(cfg.m, "m");
  positive(cfg.n_mc, "n_mc");
  positive(cfg.reps, "reps");
  positive(cfg.candidates, "candidates");
  positive(cfg.refit_every, "refit_every");
  positive(cfg.gp_starts, "gp_starts");
  positive(cfg.external_pool, "external_pool");
  positive(cfg.external_timeout_ms, "external_timeout_ms");
  if (!(cfg.p > 0.0 && cfg.p < 1.0)) throw ConfigError("p must lie in (0,1), got " + format_double(cfg.p));
  if (!(cfg.validate_p > 0.0 && cfg.validate_p < 1.0)) {
    throw ConfigError("validate_p must lie in (0,1), got " + format_double(cfg.validate_p));
  }
  if (cfg.design_file.empty() && cfg.k > cfg.n) {
    throw ConfigError("k=" + std::to_string(cfg.k) + " exceeds the number of learning curves n=" +
                      std::to_string(cfg.n));
  }
  if (cfg.stop_rel_tol && !(*cfg.stop_rel_tol >= 0.0)) throw ConfigError("stop_rel_tol must be nonnegative");
  parse_stream_policy(cfg.streams);
  parse_kernel(cfg.kernel);
  parse_transform(cfg.transform);
  if (cfg.sim != "toy" && !cfg.sim.starts_with("replay:") && !cfg.sim.starts_with("external:")) {
    throw ConfigError("unknown simulator '" + cfg.sim + "'; expected toy, replay:<path> or external:<command>");
  }
  if (cfg.sim.starts_with("external:") && cfg.input_grids.empty()) {
    throw ConfigError("an external simulator needs input_grids (one list of levels per dimension)");
  }
}

std::unique_ptr<Simulator> make_simulator(const RunConfig& cfg) {
  if (cfg.sim == "toy") return std::make_unique<ToySimulator>();
  if (cfg.sim.starts_with("replay:")) {
    const fs::path path = cfg.sim.substr(7);
    if (!fs::exists(path)) throw ConfigError("replay table " + path.string() + " does not exist");
    return std::make_unique<ReplaySimulator>(ReplaySimulator::read_table(path));
  }
  if (cfg.sim.starts_with("external:")) {
    const std::string command = cfg.sim.substr(9);
    if (command.empty()) throw ConfigError("external simulator command is empty");
    return std::make_unique<ExternalSimulator>(command, InputSpace(cfg.input_grids),
                                               std::chrono::milliseconds(cfg.external_timeout_ms), cfg.external_pool);
  }
  throw ConfigError("unknown simulator '" + cfg.sim + "'");
}

FitResult cmd_fit(const RunConfig& cfg) {
  validate_config(cfg);
  const Metadata meta_info("fit");
  auto sim = make_simulator(cfg);
  const auto u = universe_of(*sim);
  const auto xs = initial_inputs(cfg, u);
  const auto grid = ProbGrid::uniform_midpoint(cfg.m);

  const auto batches = collect_batches(*sim, xs, cfg.n_mc, cfg.seed, streams_of(cfg));
  const auto learning = curves_of(batches, grid);
  const auto curves = only_curves(learning);
  const auto meta = QuantileMetamodel::fit(xs, curves, box_of(u), meta_config(cfg, combine_seed(cfg.seed, kGpTag), cfg.threads));

  FitResult r;
  r.err1 = projection_error(curves, meta.basis());
  r.n = xs.size();
  r.k = meta.k();
  r.warnings = meta.warnings();
  for (const auto& gp : meta.coeff_models()) r.theta.push_back(gp.theta());

  fs::create_directories(cfg.out);
  meta.save(cfg.out / "bundle");
  write_curve_table(cfg.out / "bundle" / "learning_curves.csv", learning);
  if (cfg.save_draws) write_batches_csv(cfg.out / "learning_batches.csv", batches);

  json j;
  j["config"] = config_json(cfg);
  j["err1"] = r.err1;
  j["n"] = r.n;
  j["k"] = r.k;
  j["basis_sources"] = meta.basis().source_ids();
  json gps = json::array();
  for (const auto& gp : meta.coeff_models()) {
    gps.push_back({{"theta", gp.theta()},
                   {"sigma2", gp.sigma2()},
                   {"nugget", gp.nugget()},
                   {"criterion", gp.criterion()},
                   {"beta", std::vector<double>(gp.beta().data(), gp.beta().data() + gp.beta().size())}});
  }
  j["gps"] = gps;
  j["warnings"] = r.warnings;
  if (is_toy(cfg)) j["reference"] = {{"err1", kToyReference["err1"]}};
  write_text(cfg.out / "fit_report.json", j.dump(2) + "\n");
  meta_info.write(cfg.out);
  return r;
}

ValidateResult cmd_validate(const RunConfig& cfg) {
  validate_config(cfg);
  const Metadata meta_info("validate");
  const fs::path bundle = cfg.bundle.empty() ? cfg.out / "bundle" : cfg.bundle;
  const auto meta = QuantileMetamodel::load(bundle);

  std::vector<LabeledCurve> truth;
  if (!cfg.truth.empty()) {
    truth = read_curve_table(cfg.truth);
  } else if (is_toy(cfg)) {
    truth = toy_truth_table(cfg.seed, cfg.n_mc, meta.grid().size(), streams_of(cfg), cfg.truth_cache);
  } else {
    auto sim = make_simulator(cfg);
    const auto u = universe_of(*sim);
    if (u.points.empty()) throw ConfigError("input space too large to simulate a full truth table; pass truth");
    truth = curves_of(collect_batches(*sim, u.points, cfg.n_mc, cfg.seed, streams_of(cfg)), meta.grid_ptr());
  }
  if (truth.empty()) throw ConfigError("truth table is empty");
  if (!(truth.front().curve.grid() == meta.grid())) {
    throw GridMismatchError("truth curves and metamodel use different probability grids");
  }

  const fs::path learning_path = bundle / "learning_curves.csv";
  ValidateResult r;
  const auto truth_curves = only_curves(truth);
  r.err2 = projection_error(truth_curves, meta.basis());
  r.err3 = global_error(meta, truth);
  r.objective_error = objective_error(meta, truth, cfg.validate_p);
  if (fs::exists(learning_path)) r.err3_learning = global_error(meta, read_curve_table(learning_path));
  r.truth_points = truth.size();

  struct PointError {
    InputPoint x;
    double rel;
    double q_true;
    double q_pred;
  };
  std::vector<PointError> errs;
  errs.reserve(truth.size());
  for (const auto& t : truth) {
    bool monotone = true;
    const auto pred = meta.predict_curve(t.x, &monotone);
    if (!monotone) ++r.non_monotone;
    const double norm = l2_norm(t.curve);
    errs.push_back({t.x, norm > 0.0 ? l2_distance(pred, t.curve) / norm : l2_distance(pred, t.curve),
                    eval_at(t.curve, cfg.validate_p), eval_at(pred, cfg.validate_p)});
  }

  const std::size_t d = truth.front().x.dim();
  CsvTable t;
  for (std::size_t i = 0; i < d; ++i) t.header.push_back("x" + std::to_string(i + 1));
  for (const char* h : {"rel_l2_error", "q_true", "q_pred"}) t.header.push_back(h);
  for (const auto& e : errs) {
    auto row = e.x.coords;
    row.insert(row.end(), {e.rel, e.q_true, e.q_pred});
    t.rows.push_back(std::move(row));
  }
  fs::create_directories(cfg.out);
  write_csv(cfg.out / "validate_points.csv", t);

  std::stable_sort(errs.begin(), errs.end(), [](const auto& a, const auto& b) { return a.rel > b.rel; });
  json worst = json::array();
  for (std::size_t i = 0; i < std::min(cfg.worst, errs.size()); ++i) {
    worst.push_back({{"x", errs[i].x.coords}, {"rel_l2_error", errs[i].rel}});
  }

  json j;
  j["config"] = config_json(cfg);
  j["err2"] = r.err2;
  j["err3"] = r.err3;
  j["objective_error"] = r.objective_error;
  j["objective_p"] = cfg.validate_p;
  j["err3_learning"] = r.err3_learning;
  j["truth_points"] = r.truth_points;
  j["non_monotone_predictions"] = r.non_monotone;
  j["worst"] = worst;
  if (is_toy(cfg)) {
    j["reference"] = {{"err2", kToyReference["err2"]},
                      {"err3", kToyReference["err3"]},
                      {"objective_error_p05", kToyReference["objective_error_p05"]}};
  }
  write_text(cfg.out / "validate_report.json", j.dump(2) + "\n");
  meta_info.write(cfg.out);
  return r;
}

OptimizeResult cmd_optimize(const RunConfig& cfg) {
  validate_config(cfg);
  const Metadata meta_info("optimize");
  auto sim = make_simulator(cfg);
  const auto u = universe_of(*sim);
  const auto mc = meta_config(cfg, combine_seed(cfg.seed, kGpTag), cfg.threads);

  std::vector<LabeledCurve> learning;
  std::optional<QuantileMetamodel> meta;
  if (!cfg.bundle.empty()) {
    meta = QuantileMetamodel::load(cfg.bundle);
    learning = read_curve_table(cfg.bundle / "learning_curves.csv");
  } else {
    const auto xs = initial_inputs(cfg, u);
    learning = curves_of(collect_batches(*sim, xs, cfg.n_mc, cfg.seed, streams_of(cfg)),
                         ProbGrid::uniform_midpoint(cfg.m));
    meta = QuantileMetamodel::fit(xs, only_curves(learning), box_of(u), mc);
  }

  auto design = design_from(learning);
  auto qcfg = qfei_config(cfg, candidate_set(cfg, u, only_inputs(learning)), mc, cfg.threads);
  refresh_design(design, *meta, qcfg.p, qcfg.best_rule);
  const auto tail = tail_level_warnings(meta->grid(), cfg.p);
  auto report = run(qcfg, *sim, std::move(design), std::move(*meta));
  report.warnings.insert(report.warnings.begin(), tail.begin(), tail.end());
  write_report(cfg.out, report, qcfg);
  meta_info.write(cfg.out);

  return {report.x_hat,          report.u_hat,          eval_at(report.curve_hat, cfg.p),
          report.simulator_calls, report.iterations_run, report.exhausted};
}

std::vector<LabeledCurve> toy_truth_table(std::uint64_t seed, std::size_t n_mc, std::size_t m, StreamPolicy streams,
                                          const fs::path& cache) {
  const json key{{"seed", seed}, {"n_mc", n_mc}, {"m", m}, {"streams", stream_policy_name(streams)}};
  const fs::path sidecar = fs::path(cache).concat(".json");
  if (!cache.empty() && fs::exists(cache) && fs::exists(sidecar)) {
    try {
      if (json::parse(read_text(sidecar)) == key) return read_curve_table(cache);
    } catch (const std::exception& e) {
      log::warn("ignoring unreadable truth cache " + cache.string() + ": " + e.what());
    }
  }

  const auto grid = ProbGrid::uniform_midpoint(m);
  ToySimulator sim;
  const auto xs = sim.input_space().enumerate();
  std::vector<std::optional<LabeledCurve>> slots(xs.size());
  parallel_for(xs.size(), [&](std::size_t i) {
    const auto batch = collect(sim, xs[i], n_mc, derive_seed(seed, xs[i], 0, streams));
    slots[i] = LabeledCurve{xs[i], empirical_quantile_curve(batch, grid)};
  });
  std::vector<LabeledCurve> out;
  out.reserve(xs.size());
  for (auto& s : slots) out.push_back(std::move(*s));

  if (!cache.empty()) {
    write_curve_table(cache, out);
    write_text(sidecar, key.dump(2) + "\n");
  }
  return out;
}

ToyTruthStats toy_truth_stats(const std::vector<LabeledCurve>& truth, double p) {
  if (truth.size() < 2) throw DomainError("truth table needs at least two inputs");
  std::vector<std::pair<double, const InputPoint*>> q;
  q.reserve(truth.size());
  for (const auto& t : truth) q.emplace_back(eval_at(t.curve, p), &t.x);
  std::sort(q.begin(), q.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : *a.second < *b.second;
  });
  ToyTruthStats s;
  s.x_star = *q[0].second;
  s.q_star = q[0].first;
  s.x_second = *q[1].second;
  s.q_second = q[1].first;
  double sum = 0.0;
  for (const auto& [v, x] : q) sum += v;
  s.mean = sum / static_cast<double>(q.size());
  double ss = 0.0;
  for (const auto& [v, x] : q) ss += (v - s.mean) * (v - s.mean);
  s.variance = ss / static_cast<double>(q.size());
  return s;
}

ToyExperimentResult cmd_toy_experiment(const RunConfig& cfg) {
  validate_config(cfg);
  if (!is_toy(cfg)) throw ConfigError("toy-experiment runs on the built-in toy simulator only");
  const Metadata meta_info("toy-experiment");
  const auto streams = streams_of(cfg);
  const auto truth = toy_truth_table(cfg.seed, cfg.n_mc, cfg.m, streams, cfg.truth_cache);
  const auto grid = truth.front().curve.grid_ptr();

  ToyExperimentResult result;
  result.truth = toy_truth_stats(truth, cfg.p);
  result.warnings = tail_level_warnings(*grid, cfg.p);

  // True rank of every input at level p, 0 = best.
  std::map<InputPoint, std::pair<double, std::size_t>> truth_q;
  {
    std::vector<std::pair<double, InputPoint>> order;
    for (const auto& t : truth) order.emplace_back(eval_at(t.curve, cfg.p), t.x);
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t i = 0; i < order.size(); ++i) truth_q[order[i].second] = {order[i].first, i};
  }
  std::map<InputPoint, const QuantileCurve*> truth_curve;
  for (const auto& t : truth) truth_curve[t.x] = &t.curve;
  const auto all_inputs = only_inputs(truth);
  const auto truth_curves = only_curves(truth);
  const Universe u{toy_input_space(), all_inputs};
  const InputBox box = box_of(u);

  const std::size_t outer = std::min(cfg.reps, cfg.threads == 0 ? default_threads() : cfg.threads);
  const std::size_t inner = outer > 1 ? 1 : cfg.threads;

  std::vector<RepetitionResult> reps(cfg.reps);
  std::vector<std::vector<std::string>> rep_warnings(cfg.reps);
  parallel_for(
      cfg.reps,
      [&](std::size_t r) {
        const std::uint64_t rep_seed = combine_seed(combine_seed(cfg.seed, kRepTag), r);
        RandomStream rng(rep_seed);
        const auto chi = u.sample(cfg.n, rng, {result.truth.x_star});
        require_design_size(chi.size(), box.dim());

        std::vector<LabeledCurve> learning;
        for (const auto& x : chi) learning.push_back({x, *truth_curve.at(x)});
        const auto curves = only_curves(learning);
        const auto mc = meta_config(cfg, combine_seed(rep_seed, kGpTag), inner);
        auto meta = QuantileMetamodel::fit(chi, curves, box, mc);

        RepetitionResult rr;
        rr.rep = r;
        rr.err1 = projection_error(curves, meta.basis());
        rr.err2 = projection_error(truth_curves, meta.basis());
        rr.err3 = global_error(meta, truth);
        rr.objective_error = objective_error(meta, truth, cfg.validate_p);
        const auto direct = direct_argmax(meta, all_inputs, cfg.p);
        rr.direct_x = direct.x;

        auto design = design_from(learning);
        const auto qcfg = qfei_config(cfg, all_inputs, mc, inner);
        refresh_design(design, meta, qcfg.p, qcfg.best_rule);
        ToySimulator sim;
        const auto report = run(qcfg, sim, std::move(design), std::move(meta));
        rr.initial_x = report.initial_x_hat;
        rr.final_x = report.x_hat;

        std::tie(rr.direct_q, rr.direct_rank) = truth_q.at(rr.direct_x);
        std::tie(rr.initial_q, rr.initial_rank) = truth_q.at(rr.initial_x);
        std::tie(rr.final_q, rr.final_rank) = truth_q.at(rr.final_x);
        rr.exact_hit = rr.final_rank == 0;
        rr.top2_hit = rr.final_rank <= 1;
        rr.beats_baseline = rr.final_q > rr.initial_q;
        rr.direct_below = rr.direct_q < rr.final_q;
        reps[r] = std::move(rr);
        for (const auto& w : report.warnings) rep_warnings[r].push_back("rep " + std::to_string(r) + ": " + w);
      },
      outer);

  for (const auto& rr : reps) {
    result.exact_hits += rr.exact_hit;
    result.top2_hits += rr.top2_hit;
    result.beats_baseline += rr.beats_baseline;
    result.direct_below += rr.direct_below;
  }
  for (auto& w : rep_warnings) result.warnings.insert(result.warnings.end(), w.begin(), w.end());
  result.reps = std::move(reps);

  const std::size_t d = box.dim();
  CsvTable t;
  t.header = {"rep", "err1", "err2", "err3", "objective_error"};
  for (const char* which : {"direct", "initial", "final"}) {
    for (std::size_t i = 0; i < d; ++i) t.header.push_back(std::string(which) + "_x" + std::to_string(i + 1));
    t.header.push_back(std::string(which) + "_q");
    t.header.push_back(std::string(which) + "_rank");
  }
  for (const char* h : {"exact_hit", "top2_hit", "beats_baseline", "direct_below"}) t.header.push_back(h);
  for (const auto& rr : result.reps) {
    std::vector<double> row{static_cast<double>(rr.rep), rr.err1, rr.err2, rr.err3, rr.objective_error};
    for (const auto& [x, q, rank] : {std::tuple{&rr.direct_x, rr.direct_q, rr.direct_rank},
                                     std::tuple{&rr.initial_x, rr.initial_q, rr.initial_rank},
                                     std::tuple{&rr.final_x, rr.final_q, rr.final_rank}}) {
      row.insert(row.end(), x->coords.begin(), x->coords.end());
      row.push_back(q);
      row.push_back(static_cast<double>(rank));
    }
    for (bool b : {rr.exact_hit, rr.top2_hit, rr.beats_baseline, rr.direct_below}) row.push_back(b ? 1.0 : 0.0);
    t.rows.push_back(std::move(row));
  }
  fs::create_directories(cfg.out);
  write_csv(cfg.out / "reps.csv", t);

  const auto summary_of = [&](auto field) {
    std::vector<double> v;
    for (const auto& rr : result.reps) v.push_back(rr.*field);
    std::sort(v.begin(), v.end());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    const double median = v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
    return json{{"min", v.front()}, {"median", median}, {"mean", mean}, {"max", v.back()}};
  };

  json j;
  j["config"] = config_json(cfg);
  j["truth"] = {{"x_star", result.truth.x_star.coords}, {"q_star", result.truth.q_star},
                {"x_second", result.truth.x_second.coords}, {"q_second", result.truth.q_second},
                {"mean_q", result.truth.mean},          {"var_q", result.truth.variance}};
  j["reps"] = result.reps.size();
  j["exact_hits"] = result.exact_hits;
  j["top2_hits"] = result.top2_hits;
  j["beats_baseline"] = result.beats_baseline;
  j["direct_below"] = result.direct_below;
  j["err1"] = summary_of(&RepetitionResult::err1);
  j["err2"] = summary_of(&RepetitionResult::err2);
  j["err3"] = summary_of(&RepetitionResult::err3);
  j["objective_error"] = summary_of(&RepetitionResult::objective_error);
  j["reference"] = kToyReference;
  j["warnings"] = result.warnings;
  write_text(cfg.out / "summary.json", j.dump(2) + "\n");
  meta_info.write(cfg.out);
  return result;
}

int exit_code_for(const std::exception& e) {
  const auto* err = dynamic_cast<const Error*>(&e);
  if (!err) return 1;
  switch (err->kind()) {
    case ErrorKind::Config:
    case ErrorKind::Io:
      return 2;
    case ErrorKind::Simulator:
      return 3;
    case ErrorKind::Numerical:
    case ErrorKind::Domain:
      return 4;
  }
  return 1;
}

}  // namespace qf::cli
