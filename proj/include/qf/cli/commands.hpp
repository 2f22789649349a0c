#pragma once

// Command implementations behind the `qfopt` executable. Each command writes its
// data files under `out`; wall-clock timings go to a separate metadata.json so the
// data files are byte-identical across runs with the same configuration.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qf/qfei.hpp"

namespace qf::cli {

struct RunConfig {
  std::string sim = "toy";  // toy | replay:<path> | external:<command>
  std::vector<std::vector<double>> input_grids;  // required for external simulators
  std::uint64_t seed = 1;
  std::filesystem::path out = "out";
  std::size_t n = 150;
  std::size_t k = 4;
  std::size_t m = 101;
  std::size_t n_mc = 10'000;
  double p = 0.4;
  double validate_p = 0.5;
  std::size_t iterations = 20;
  std::size_t reps = 30;
  std::string streams = "per-input";
  std::string kernel = "matern52";
  std::string transform = "identity";
  std::size_t candidates = 2000;  // size of the restricted search set when E is larger
  std::size_t refit_every = 1;
  std::optional<double> stop_rel_tol;
  bool raw_best = false;
  std::filesystem::path design_file;  // optional CSV x1,...,xd of initial inputs
  std::filesystem::path bundle;       // metamodel bundle (validate, optimize)
  std::filesystem::path truth;        // curve table x1,...,xd,p,value (validate)
  std::filesystem::path truth_cache;  // toy truth table cache (toy-experiment)
  std::size_t worst = 10;             // worst points listed by validate
  std::size_t threads = 0;
  std::size_t external_timeout_ms = 60'000;
  std::size_t external_pool = 1;
  std::size_t gp_starts = 10;
  bool save_draws = false;  // fit: also write the raw learning draws (replay format)
};

/// Reads a JSON config; unknown keys are rejected.
RunConfig load_config(const std::filesystem::path& path);
/// Throws ConfigError with an actionable message.
void validate_config(const RunConfig& cfg);

std::unique_ptr<Simulator> make_simulator(const RunConfig& cfg);

struct FitResult {
  double err1 = 0.0;
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::vector<double>> theta;
  std::vector<std::string> warnings;
};

struct ValidateResult {
  double err2 = 0.0;
  double err3 = 0.0;
  double objective_error = 0.0;
  double err3_learning = 0.0;
  std::size_t truth_points = 0;
  std::size_t non_monotone = 0;
};

struct OptimizeResult {
  InputPoint x_hat;
  double u_hat = 0.0;
  double q_hat = 0.0;
  std::size_t simulator_calls = 0;
  std::size_t iterations_run = 0;
  bool exhausted = false;
};

struct RepetitionResult {
  std::size_t rep = 0;
  double err1 = 0.0, err2 = 0.0, err3 = 0.0, objective_error = 0.0;
  InputPoint direct_x, initial_x, final_x;
  double direct_q = 0.0, initial_q = 0.0, final_q = 0.0;  // true p-quantiles
  std::size_t direct_rank = 0, initial_rank = 0, final_rank = 0;  // 0 = best in E
  bool exact_hit = false, top2_hit = false, beats_baseline = false, direct_below = false;
};

struct ToyTruthStats {
  InputPoint x_star;
  double q_star = 0.0;
  InputPoint x_second;
  double q_second = 0.0;
  double mean = 0.0;
  double variance = 0.0;
};

struct ToyExperimentResult {
  ToyTruthStats truth;
  std::vector<RepetitionResult> reps;
  std::size_t exact_hits = 0, top2_hits = 0, beats_baseline = 0, direct_below = 0;
  std::vector<std::string> warnings;
};

FitResult cmd_fit(const RunConfig& cfg);
ValidateResult cmd_validate(const RunConfig& cfg);
OptimizeResult cmd_optimize(const RunConfig& cfg);
ToyExperimentResult cmd_toy_experiment(const RunConfig& cfg);

/// Full-E toy truth table at the given seed, read from / written to `cache` when set.
std::vector<LabeledCurve> toy_truth_table(std::uint64_t seed, std::size_t n_mc, std::size_t m, StreamPolicy streams,
                                          const std::filesystem::path& cache = {});

ToyTruthStats toy_truth_stats(const std::vector<LabeledCurve>& truth, double p);

/// Process exit code for an exception: 2 config, 3 simulator, 4 numerical, 1 otherwise.
int exit_code_for(const std::exception& e);

}  // namespace qf::cli
