#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"
#include "qf/cli/commands.hpp"
#include "qf/error.hpp"
#include "qf/format.hpp"

using namespace qf;
using namespace qf::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("qf_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig small(const fs::path& out) {
  RunConfig c;
  c.out = out;
  c.n = 20;
  c.k = 2;
  c.m = 21;
  c.n_mc = 300;
  c.iterations = 3;
  c.reps = 1;
  c.gp_starts = 2;
  c.threads = 2;
  c.seed = 7;
  return c;
}

// Every file under dir except the timing sidecar.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == "metadata.json") continue;
    out[fs::relative(e.path(), dir).string()] = read_text(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("config files") {
  const auto dir = scratch("config");
  write_text(dir / "ok.json", R"({"sim": "toy", "n": 40, "k": 3, "p": 0.3, "stop_rel_tol": 0.01, "out": "x"})");
  const auto c = load_config(dir / "ok.json");
  CHECK(c.n == 40);
  CHECK(c.k == 3);
  CHECK(c.p == 0.3);
  CHECK(c.stop_rel_tol == 0.01);
  CHECK(c.out == "x");
  CHECK(c.m == 101);

  write_text(dir / "typo.json", R"({"nmc": 10})");
  CHECK_THROWS_WITH_AS(load_config(dir / "typo.json"), doctest::Contains("unknown key 'nmc'"), ConfigError);
  write_text(dir / "bad.json", R"({"n": "many"})");
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  write_text(dir / "broken.json", "{");
  CHECK_THROWS_AS(load_config(dir / "broken.json"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("config validation") {
  const auto base = small("unused");
  CHECK_NOTHROW(validate_config(base));
  const auto rejects = [&](auto mutate) {
    auto c = base;
    mutate(c);
    CHECK_THROWS_AS(validate_config(c), ConfigError);
  };
  rejects([](RunConfig& c) { c.p = 0.0; });
  rejects([](RunConfig& c) { c.p = 1.0; });
  rejects([](RunConfig& c) { c.validate_p = 1.5; });
  rejects([](RunConfig& c) { c.k = 0; });
  rejects([](RunConfig& c) { c.k = 21; });
  rejects([](RunConfig& c) { c.n_mc = 0; });
  rejects([](RunConfig& c) { c.streams = "shared"; });
  rejects([](RunConfig& c) { c.kernel = "cubic"; });
  rejects([](RunConfig& c) { c.transform = "sqrt"; });
  rejects([](RunConfig& c) { c.sim = "lab"; });
  rejects([](RunConfig& c) { c.sim = "external:./model"; });
  rejects([](RunConfig& c) { c.stop_rel_tol = -1.0; });
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(DuplicateInputError("x")) == 2);
  CHECK(exit_code_for(IoError("x")) == 2);
  CHECK(exit_code_for(SimulatorError("x")) == 3);
  CHECK(exit_code_for(ReplayError("x")) == 3);
  CHECK(exit_code_for(RankError("x")) == 4);
  CHECK(exit_code_for(IllConditionedError("x")) == 4);
  CHECK(exit_code_for(DomainError("x")) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("too few learning inputs fail before any simulation") {
  const auto dir = scratch("small_n");
  auto c = small(dir);
  c.n = 4;
  c.k = 2;
  CHECK_THROWS_WITH_AS(cmd_fit(c), doctest::Contains("n > d+1"), ConfigError);
  CHECK_FALSE(fs::exists(dir / "bundle"));

  write_text(dir / "design.csv", "x1,x2,x3\n0.1,0.1,0.1\n0.2,0.2,0.2\n0.1,0.1,0.1\n0.3,0.3,0.3\n0.4,0.4,0.4\n");
  c.design_file = dir / "design.csv";
  CHECK_THROWS_AS(cmd_fit(c), DuplicateInputError);
  fs::remove_all(dir);
}

TEST_CASE("fit, validate and optimize are reproducible") {
  const auto a = scratch("pipeline_a");
  const auto b = scratch("pipeline_b");
  FitResult fits[2];
  ValidateResult vals[2];
  OptimizeResult opts[2];
  for (int i = 0; i < 2; ++i) {
    auto c = small(i == 0 ? a : b);
    c.truth_cache = c.out / "truth.csv";
    c.save_draws = true;
    fits[i] = cmd_fit(c);
    vals[i] = cmd_validate(c);
    c.bundle = c.out / "bundle";
    c.out = c.out / "optimize";
    opts[i] = cmd_optimize(c);
  }
  CHECK(snapshot(a) == snapshot(b));
  CHECK(fits[0].err1 == fits[1].err1);
  CHECK(vals[0].err3 == vals[1].err3);
  CHECK(opts[0].x_hat == opts[1].x_hat);

  CHECK(fits[0].n == 20);
  CHECK(fits[0].k == 2);
  CHECK(fits[0].err1 > 0.0);
  CHECK(fits[0].err1 < 0.2);
  CHECK(vals[0].truth_points == 1000);
  CHECK(vals[0].err2 >= 0.0);
  CHECK(opts[0].simulator_calls == 300 * (20 + 3));
  CHECK(opts[0].iterations_run == 3);

  for (const char* f : {"fit_report.json", "metadata.json", "bundle/learning_curves.csv", "learning_batches.csv",
                        "validate_report.json", "validate_points.csv", "truth.csv", "truth.csv.json",
                        "optimize/trajectory.csv", "optimize/report.json"}) {
    CHECK_MESSAGE(fs::exists(a / f), f);
  }
  const auto report = nlohmann::json::parse(read_text(a / "validate_report.json"));
  CHECK(report["worst"].size() == 10);
  CHECK(report["err3"].get<double>() == vals[0].err3);

  // replay the recorded draws
  RunConfig r = small(a / "replay");
  r.sim = "replay:" + (a / "learning_batches.csv").string();
  const auto f1 = cmd_fit(r);
  r.out = a / "replay2";
  const auto f2 = cmd_fit(r);
  CHECK(f1.err1 == f2.err1);
  CHECK(read_text(a / "replay" / "fit_report.json") == read_text(a / "replay2" / "fit_report.json"));

  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("the truth cache is reused only for a matching configuration") {
  const auto dir = scratch("cache");
  const auto t1 = toy_truth_table(3, 200, 11, StreamPolicy::PerInput, dir / "t.csv");
  const auto stamp = fs::last_write_time(dir / "t.csv");
  const auto t2 = toy_truth_table(3, 200, 11, StreamPolicy::PerInput, dir / "t.csv");
  CHECK(fs::last_write_time(dir / "t.csv") == stamp);
  REQUIRE(t1.size() == t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) {
    CHECK(t1[i].x == t2[i].x);
    CHECK(std::ranges::equal(t1[i].curve.values(), t2[i].curve.values()));
  }
  const auto t3 = toy_truth_table(4, 200, 11, StreamPolicy::PerInput, dir / "t.csv");
  CHECK_FALSE(std::ranges::equal(t3.front().curve.values(), t1.front().curve.values()));
  fs::remove_all(dir);
}

TEST_CASE("toy truth statistics") {
  const auto g = ProbGrid::uniform_midpoint(1);
  std::vector<LabeledCurve> t{{InputPoint{{0.3}}, QuantileCurve(g, {1.0})},
                              {InputPoint{{0.1}}, QuantileCurve(g, {3.0})},
                              {InputPoint{{0.2}}, QuantileCurve(g, {3.0})},
                              {InputPoint{{0.4}}, QuantileCurve(g, {1.0})}};
  const auto s = toy_truth_stats(t, 0.5);
  CHECK(s.x_star == InputPoint{{0.1}});
  CHECK(s.x_second == InputPoint{{0.2}});
  CHECK(s.q_star == 3.0);
  CHECK(s.mean == 2.0);
  CHECK(s.variance == 1.0);
}

TEST_CASE("toy experiment is reproducible and flags tail levels") {
  const auto a = scratch("toy_a");
  const auto b = scratch("toy_b");
  ToyExperimentResult res[2];
  for (int i = 0; i < 2; ++i) {
    auto c = small(i == 0 ? a : b);
    c.reps = 2;
    c.p = 0.999;
    res[i] = cmd_toy_experiment(c);
  }
  CHECK(snapshot(a) == snapshot(b));
  REQUIRE(res[0].reps.size() == 2);
  const auto& r = res[0].reps[0];
  CHECK(r.initial_x != res[0].truth.x_star);
  CHECK(r.exact_hit == (r.final_rank == 0));
  CHECK(r.top2_hit == (r.final_rank <= 1));
  CHECK(r.beats_baseline == (r.final_q > r.initial_q));
  bool tail = false;
  for (const auto& w : res[0].warnings) tail |= w.find("0.999") != std::string::npos;
  CHECK(tail);
  const auto reps = read_csv(a / "reps.csv");
  CHECK(reps.rows.size() == 2);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("zero iterations keep the initial-design argmax") {
  const auto dir = scratch("zero_iter");
  auto c = small(dir);
  c.iterations = 0;
  const auto r = cmd_optimize(c);
  CHECK(r.iterations_run == 0);
  CHECK(r.simulator_calls == 300 * 20);
  const auto report = nlohmann::json::parse(read_text(dir / "report.json"));
  CHECK(report["x_hat"] == report["initial_x_hat"]);
  fs::remove_all(dir);
}

TEST_CASE("toy experiment requires the toy simulator") {
  auto c = small("unused");
  c.sim = "replay:/nonexistent.csv";
  CHECK_THROWS_AS(cmd_toy_experiment(c), ConfigError);
}
