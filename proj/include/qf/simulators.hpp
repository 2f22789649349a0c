#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "qf/input.hpp"
#include "qf/rng.hpp"

namespace qf {

/// A stochastic simulator G(x, w). Implementations must be reproducible: the same
/// (input, seed) always yields the same batch.
class Simulator {
 public:
  virtual ~Simulator() = default;

  virtual const InputSpace& input_space() const = 0;
  virtual std::string name() const = 0;

  /// `n` independent draws of G(x, .) taken from the stream identified by `seed`.
  virtual std::vector<double> draw_batch(const InputPoint& x, std::size_t n, std::uint64_t seed) = 0;
};

// ---------------------------------------------------------------------------
// Toy function: G(x) = sin(x1 + U1) + cos(x2 + U2) + x3 * U3 on {0.1, ..., 1.0}^3,
// U1 ~ N(0,1), U2 ~ Exp(1), U3 ~ U[-0.5, 0.5], all independent.

struct ToyNoise {
  double u1;  // standard normal
  double u2;  // unit-rate exponential
  double u3;  // uniform on [-0.5, 0.5]
};

/// Consumes four uniforms from the stream, in the order normal (2), exponential, uniform.
ToyNoise toy_noise(RandomStream& stream);
double toy_response(const InputPoint& x, const ToyNoise& noise);

/// One draw; throws DomainError when x is not on the toy grid.
double toy_draw(const InputPoint& x, RandomStream& stream);

InputSpace toy_input_space();

class ToySimulator final : public Simulator {
 public:
  ToySimulator();
  const InputSpace& input_space() const override { return space_; }
  std::string name() const override { return "toy"; }
  std::vector<double> draw_batch(const InputPoint& x, std::size_t n, std::uint64_t seed) override;

 private:
  InputSpace space_;
};

// ---------------------------------------------------------------------------
// Replay: serves stored draws in order, one cursor per input. Seeds are ignored.

class ReplaySimulator final : public Simulator {
 public:
  explicit ReplaySimulator(std::map<InputPoint, std::vector<double>> table);
  /// Loads the long-format batch CSV `x1,...,xd,draw`.
  static ReplaySimulator from_csv(const std::filesystem::path& path);
  static std::map<InputPoint, std::vector<double>> read_table(const std::filesystem::path& path);

  const InputSpace& input_space() const override { return space_; }
  std::string name() const override { return "replay"; }

  double replay_draw(const InputPoint& x);
  std::vector<double> draw_batch(const InputPoint& x, std::size_t n, std::uint64_t seed) override;

  /// Inputs present in the table, in lexicographic order.
  std::vector<InputPoint> inputs() const;

  /// Rewinds every cursor to the first stored draw.
  void rewind();

 private:
  struct Entry {
    std::vector<double> draws;
    std::size_t cursor = 0;
  };
  std::vector<double>::const_iterator take(const InputPoint& x, std::size_t n, Entry*& entry);

  std::map<InputPoint, Entry> table_;
  InputSpace space_;
  std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// External process speaking newline-delimited JSON on stdin/stdout:
//   request  {"x":[...],"n":<int>,"seed":<uint64>}\n
//   response {"draws":[...]}\n

/// Bit-exact request line, including the trailing newline.
std::string external_request_line(const InputPoint& x, std::size_t n, std::uint64_t seed);

/// Parses one response line; throws SimulatorError unless it holds exactly `n` finite draws.
std::vector<double> parse_external_response(const std::string& line, std::size_t n);

class ExternalProcess {
 public:
  /// Runs `command` through /bin/sh -c.
  explicit ExternalProcess(std::string command);
  ~ExternalProcess();
  ExternalProcess(const ExternalProcess&) = delete;
  ExternalProcess& operator=(const ExternalProcess&) = delete;

  /// Writes `line`, waits for one response line. Throws SimulatorError on exit, timeout or I/O failure.
  std::string roundtrip(const std::string& line, std::chrono::milliseconds timeout);

 private:
  void start();
  void stop();
  std::string diagnostics();

  std::string command_;
  int pid_ = -1;
  int stdin_fd_ = -1;
  int stdout_fd_ = -1;
  int stderr_fd_ = -1;
  std::string pending_;
  std::string stderr_tail_;
};

class ExternalSimulator final : public Simulator {
 public:
  ExternalSimulator(std::string command, InputSpace space,
                    std::chrono::milliseconds timeout = std::chrono::seconds(60), std::size_t pool_size = 1);

  const InputSpace& input_space() const override { return space_; }
  std::string name() const override { return "external"; }

  std::vector<double> external_draw_batch(const InputPoint& x, std::size_t n, std::uint64_t seed);
  std::vector<double> draw_batch(const InputPoint& x, std::size_t n, std::uint64_t seed) override {
    return external_draw_batch(x, n, seed);
  }

 private:
  std::string command_;
  InputSpace space_;
  std::chrono::milliseconds timeout_;
  std::vector<std::unique_ptr<ExternalProcess>> idle_;
  std::size_t live_ = 0;
  std::size_t pool_size_;
  std::mutex mutex_;
  std::condition_variable available_;
};

}  // namespace qf
