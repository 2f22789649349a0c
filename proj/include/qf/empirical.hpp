#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qf/curves.hpp"
#include "qf/input.hpp"
#include "qf/simulators.hpp"

namespace qf {

/// Raw replications of the simulator at one input.
struct SampleBatch {
  InputPoint input;
  std::vector<double> draws;
};

/// A quantile curve attached to the input that produced it.
struct LabeledCurve {
  InputPoint x;
  QuantileCurve curve;
};

/// How batch streams are keyed.
enum class StreamPolicy {
  PerInput,  ///< key = f(master, input, counter): independent streams per input
  Common,    ///< key = f(master, counter): common random numbers across inputs
};

std::string stream_policy_name(StreamPolicy policy);
StreamPolicy parse_stream_policy(const std::string& name);

/// Order-statistic estimator: the value at level p is the ceil(p N)-th smallest draw.
QuantileCurve empirical_quantile_curve(const SampleBatch& batch, const GridPtr& grid);

/// Per-input stream key derived from (master seed, input, call counter), so that a
/// batch does not depend on the order in which inputs are evaluated.
std::uint64_t derive_seed(std::uint64_t master, const InputPoint& x, std::uint64_t counter,
                          StreamPolicy policy = StreamPolicy::PerInput) noexcept;

/// Runs the simulator `n_mc` times at x. Simulator errors are rethrown with the input attached.
SampleBatch collect(Simulator& sim, const InputPoint& x, std::size_t n_mc, std::uint64_t seed);

/// Long-format CSV `x1,...,xd,draw`; this is also the replay table format.
void write_batches_csv(const std::filesystem::path& path, std::span<const SampleBatch> batches);
std::vector<SampleBatch> read_batches_csv(const std::filesystem::path& path);

/// Long-format curve table `x1,...,xd,p,value`.
void write_curve_table(const std::filesystem::path& path, std::span<const LabeledCurve> curves);
std::vector<LabeledCurve> read_curve_table(const std::filesystem::path& path);

}  // namespace qf
