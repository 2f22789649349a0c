#include "qf/empirical.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "qf/error.hpp"
#include "qf/format.hpp"
#include "qf/log.hpp"

namespace qf {

QuantileCurve empirical_quantile_curve(const SampleBatch& batch, const GridPtr& grid) {
  const std::size_t n = batch.draws.size();
  if (n == 0) throw EmptySampleError("no draws at input " + to_string(batch.input));
  if (n < grid->size()) {
    log::warn("only " + std::to_string(n) + " draws at " + to_string(batch.input) + " for a grid of " +
              std::to_string(grid->size()) + " levels");
  }
  std::vector<double> sorted = batch.draws;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> values(grid->size());
  for (std::size_t i = 0; i < grid->size(); ++i) {
    // ceil(p N) can land one rank too high when p N is an integer but p is not exactly representable.
    double rank = std::ceil((*grid)[i] * static_cast<double>(n) - 1e-9);
    rank = std::clamp(rank, 1.0, static_cast<double>(n));
    values[i] = sorted[static_cast<std::size_t>(rank) - 1];
  }
  return QuantileCurve(grid, std::move(values));
}

std::string stream_policy_name(StreamPolicy policy) {
  return policy == StreamPolicy::Common ? "common" : "per-input";
}

StreamPolicy parse_stream_policy(const std::string& name) {
  if (name == "common") return StreamPolicy::Common;
  if (name == "per-input") return StreamPolicy::PerInput;
  throw ConfigError("unknown stream policy '" + name + "' (expected common or per-input)");
}

std::uint64_t derive_seed(std::uint64_t master, const InputPoint& x, std::uint64_t counter,
                          StreamPolicy policy) noexcept {
  const std::uint64_t base = policy == StreamPolicy::Common ? mix64(master) : combine_seed(master, hash_input(x));
  return combine_seed(base, counter);
}

SampleBatch collect(Simulator& sim, const InputPoint& x, std::size_t n_mc, std::uint64_t seed) {
  if (n_mc == 0) throw ConfigError("n_mc must be at least 1");
  SampleBatch batch{x, {}};
  try {
    batch.draws = sim.draw_batch(x, n_mc, seed);
  } catch (const SimulatorError& e) {
    throw SimulatorError(std::string(e.what()) + " [input " + to_string(x) + "]");
  } catch (const ReplayError& e) {
    throw ReplayError(std::string(e.what()) + " [input " + to_string(x) + "]");
  }
  if (batch.draws.size() != n_mc) {
    throw SimulatorError(sim.name() + " simulator returned " + std::to_string(batch.draws.size()) +
                         " draws instead of " + std::to_string(n_mc) + " [input " + to_string(x) + "]");
  }
  return batch;
}

void write_batches_csv(const std::filesystem::path& path, std::span<const SampleBatch> batches) {
  if (batches.empty()) throw IoError("no batches to write to " + path.string());
  const std::size_t d = batches.front().input.dim();
  std::string out;
  for (std::size_t i = 0; i < d; ++i) out += "x" + std::to_string(i + 1) + ",";
  out += "draw\n";
  for (const auto& b : batches) {
    if (b.input.dim() != d) throw IoError("batches mix input dimensions");
    std::string prefix;
    for (double c : b.input.coords) prefix += format_double(c) + ",";
    for (double v : b.draws) {
      out += prefix;
      out += format_double(v);
      out += '\n';
    }
  }
  write_text(path, out);
}

std::vector<SampleBatch> read_batches_csv(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  if (t.header.size() < 2 || t.header.back() != "draw") {
    throw IoError(path.string() + ": expected header x1,...,xd,draw");
  }
  const std::size_t d = t.header.size() - 1;
  std::vector<SampleBatch> out;
  std::map<InputPoint, std::size_t> index;
  for (const auto& row : t.rows) {
    InputPoint x{std::vector<double>(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(d))};
    auto [it, inserted] = index.emplace(x, out.size());
    if (inserted) out.push_back({x, {}});
    out[it->second].draws.push_back(row[d]);
  }
  return out;
}

void write_curve_table(const std::filesystem::path& path, std::span<const LabeledCurve> curves) {
  if (curves.empty()) throw IoError("no curves to write to " + path.string());
  const std::size_t d = curves.front().x.dim();
  std::string out;
  for (std::size_t i = 0; i < d; ++i) out += "x" + std::to_string(i + 1) + ",";
  out += "p,value\n";
  for (const auto& c : curves) {
    if (c.x.dim() != d) throw IoError("curve table mixes input dimensions");
    std::string prefix;
    for (double v : c.x.coords) prefix += format_double(v) + ",";
    for (std::size_t i = 0; i < c.curve.size(); ++i) {
      out += prefix;
      out += format_double(c.curve.grid()[i]);
      out += ',';
      out += format_double(c.curve[i]);
      out += '\n';
    }
  }
  write_text(path, out);
}

std::vector<LabeledCurve> read_curve_table(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  const std::size_t cols = t.header.size();
  if (cols < 3 || t.header[cols - 2] != "p" || t.header[cols - 1] != "value") {
    throw IoError(path.string() + ": expected header x1,...,xd,p,value");
  }
  const std::size_t d = cols - 2;
  std::vector<InputPoint> order;
  std::map<InputPoint, std::pair<std::vector<double>, std::vector<double>>> rows;
  for (const auto& row : t.rows) {
    InputPoint x{std::vector<double>(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(d))};
    auto [it, inserted] = rows.try_emplace(x);
    if (inserted) order.push_back(x);
    it->second.first.push_back(row[d]);
    it->second.second.push_back(row[d + 1]);
  }
  std::vector<LabeledCurve> out;
  GridPtr grid;
  for (const auto& x : order) {
    auto& [levels, values] = rows[x];
    if (!grid || !(grid->levels().size() == levels.size() &&
                   std::equal(levels.begin(), levels.end(), grid->levels().begin()))) {
      grid = std::make_shared<ProbGrid>(levels);
    }
    out.push_back({x, QuantileCurve(grid, std::move(values))});
  }
  return out;
}

}  // namespace qf
