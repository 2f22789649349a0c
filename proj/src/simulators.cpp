#include "qf/simulators.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>

#include "json.hpp"

#include "qf/error.hpp"
#include "qf/format.hpp"

namespace qf {

// ---------------------------------------------------------------------------
// Toy

InputSpace toy_input_space() {
  std::vector<double> levels;
  for (int i = 1; i <= 10; ++i) levels.push_back(i / 10.0);
  return InputSpace({levels, levels, levels});
}

ToyNoise toy_noise(RandomStream& stream) {
  ToyNoise n{};
  n.u1 = stream.normal();
  n.u2 = stream.exponential();
  n.u3 = stream.uniform() - 0.5;
  return n;
}

double toy_response(const InputPoint& x, const ToyNoise& noise) {
  return std::sin(x[0] + noise.u1) + std::cos(x[1] + noise.u2) + x[2] * noise.u3;
}

namespace {

void require_toy_input(const InputPoint& x) {
  static const InputSpace space = toy_input_space();
  if (!space.contains(x, 1e-9)) {
    throw DomainError("input " + to_string(x) + " is not on the toy grid {0.1, ..., 1.0}^3");
  }
}

}  // namespace

double toy_draw(const InputPoint& x, RandomStream& stream) {
  require_toy_input(x);
  return toy_response(x, toy_noise(stream));
}

ToySimulator::ToySimulator() : space_(toy_input_space()) {}

std::vector<double> ToySimulator::draw_batch(const InputPoint& x, std::size_t n, std::uint64_t seed) {
  require_toy_input(x);
  RandomStream stream(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = toy_response(x, toy_noise(stream));
  return out;
}

// ---------------------------------------------------------------------------
// Replay

namespace {

InputSpace space_from_table(const std::map<InputPoint, std::vector<double>>& table) {
  if (table.empty()) throw ReplayError("replay table is empty");
  const std::size_t d = table.begin()->first.dim();
  std::vector<std::vector<double>> levels(d);
  for (const auto& [x, draws] : table) {
    if (x.dim() != d) throw ReplayError("replay table mixes input dimensions");
    for (std::size_t i = 0; i < d; ++i) levels[i].push_back(x[i]);
  }
  return InputSpace(std::move(levels));
}

}  // namespace

ReplaySimulator::ReplaySimulator(std::map<InputPoint, std::vector<double>> table)
    : space_(space_from_table(table)) {
  for (auto& [x, draws] : table) table_.emplace(x, Entry{std::move(draws), 0});
}

ReplaySimulator ReplaySimulator::from_csv(const std::filesystem::path& path) {
  return ReplaySimulator(read_table(path));
}

std::map<InputPoint, std::vector<double>> ReplaySimulator::read_table(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  if (t.header.size() < 2 || t.header.back() != "draw") {
    throw IoError(path.string() + ": expected header x1,...,xd,draw");
  }
  const std::size_t d = t.header.size() - 1;
  std::map<InputPoint, std::vector<double>> table;
  for (const auto& row : t.rows) {
    InputPoint x{std::vector<double>(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(d))};
    table[x].push_back(row[d]);
  }
  return table;
}

std::vector<double>::const_iterator ReplaySimulator::take(const InputPoint& x, std::size_t n, Entry*& entry) {
  const auto it = table_.find(x);
  if (it == table_.end()) throw ReplayError("replay table has no draws for input " + to_string(x));
  entry = &it->second;
  const std::size_t left = entry->draws.size() - entry->cursor;
  if (n > left) {
    throw ReplayError("replay draws exhausted for input " + to_string(x) + ": requested " + std::to_string(n) +
                      ", " + std::to_string(left) + " left");
  }
  const auto begin = entry->draws.cbegin() + static_cast<std::ptrdiff_t>(entry->cursor);
  entry->cursor += n;
  return begin;
}

double ReplaySimulator::replay_draw(const InputPoint& x) {
  std::lock_guard lock(mutex_);
  Entry* e = nullptr;
  return *take(x, 1, e);
}

std::vector<double> ReplaySimulator::draw_batch(const InputPoint& x, std::size_t n, std::uint64_t) {
  std::lock_guard lock(mutex_);
  Entry* e = nullptr;
  const auto begin = take(x, n, e);
  return std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(n));
}

std::vector<InputPoint> ReplaySimulator::inputs() const {
  std::vector<InputPoint> out;
  out.reserve(table_.size());
  for (const auto& [x, e] : table_) out.push_back(x);
  return out;
}

void ReplaySimulator::rewind() {
  std::lock_guard lock(mutex_);
  for (auto& [x, e] : table_) e.cursor = 0;
}

// ---------------------------------------------------------------------------
// External process protocol

std::string external_request_line(const InputPoint& x, std::size_t n, std::uint64_t seed) {
  std::string line = "{\"x\":[";
  for (std::size_t i = 0; i < x.dim(); ++i) {
    if (i) line += ',';
    line += format_double(x[i]);
  }
  line += "],\"n\":" + std::to_string(n) + ",\"seed\":" + std::to_string(seed) + "}\n";
  return line;
}

std::vector<double> parse_external_response(const std::string& line, std::size_t n) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw SimulatorError(std::string("malformed simulator response: ") + e.what());
  }
  if (!j.is_object() || !j.contains("draws") || !j["draws"].is_array()) {
    throw SimulatorError("malformed simulator response: missing \"draws\" array");
  }
  const auto& arr = j["draws"];
  if (arr.size() != n) {
    throw SimulatorError("malformed simulator response: expected " + std::to_string(n) + " draws, got " +
                         std::to_string(arr.size()));
  }
  std::vector<double> out;
  out.reserve(n);
  for (const auto& v : arr) {
    if (!v.is_number()) throw SimulatorError("malformed simulator response: non-numeric draw");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw SimulatorError("malformed simulator response: non-finite draw");
    out.push_back(d);
  }
  return out;
}

namespace {

void close_fd(int& fd) {
  if (fd >= 0) ::close(fd);
  fd = -1;
}

}  // namespace

ExternalProcess::ExternalProcess(std::string command) : command_(std::move(command)) {
  // Writes to a dead child must surface as EPIPE, not kill the host.
  ::signal(SIGPIPE, SIG_IGN);
}

ExternalProcess::~ExternalProcess() { stop(); }

void ExternalProcess::start() {
  int in_pipe[2], out_pipe[2], err_pipe[2];
  if (::pipe(in_pipe) != 0) throw SimulatorError(std::string("pipe: ") + std::strerror(errno));
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw SimulatorError(std::string("pipe: ") + std::strerror(errno));
  }
  if (::pipe(err_pipe) != 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    throw SimulatorError(std::string("pipe: ") + std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw SimulatorError(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::dup2(err_pipe[1], STDERR_FILENO);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1]}) ::close(fd);
    ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);
  pid_ = pid;
  stdin_fd_ = in_pipe[1];
  stdout_fd_ = out_pipe[0];
  stderr_fd_ = err_pipe[0];
  for (int fd : {stdin_fd_, stdout_fd_, stderr_fd_}) ::fcntl(fd, F_SETFD, FD_CLOEXEC);
  ::fcntl(stderr_fd_, F_SETFL, ::fcntl(stderr_fd_, F_GETFL) | O_NONBLOCK);
  pending_.clear();
  stderr_tail_.clear();
}

void ExternalProcess::stop() {
  close_fd(stdin_fd_);
  close_fd(stdout_fd_);
  close_fd(stderr_fd_);
  if (pid_ > 0) {
    ::kill(pid_, SIGKILL);
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }
  pid_ = -1;
}

std::string ExternalProcess::diagnostics() {
  if (stderr_fd_ >= 0) {
    char buf[4096];
    ssize_t got;
    while ((got = ::read(stderr_fd_, buf, sizeof(buf))) > 0) stderr_tail_.append(buf, static_cast<std::size_t>(got));
  }
  if (stderr_tail_.size() > 4096) stderr_tail_.erase(0, stderr_tail_.size() - 4096);
  std::string out = "command '" + command_ + "'";
  if (!stderr_tail_.empty()) out += "; stderr: " + stderr_tail_;
  return out;
}

std::string ExternalProcess::roundtrip(const std::string& line, std::chrono::milliseconds timeout) {
  if (pid_ <= 0) start();
  const auto fail = [&](const std::string& why) -> SimulatorError {
    SimulatorError err("external simulator " + why + " (" + diagnostics() + ")");
    stop();
    return err;
  };

  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t w = ::write(stdin_fd_, line.data() + written, line.size() - written);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw fail(std::string("write failed: ") + std::strerror(errno));
    }
    written += static_cast<std::size_t>(w);
  }

  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    const auto nl = pending_.find('\n');
    if (nl != std::string::npos) {
      std::string response = pending_.substr(0, nl);
      pending_.erase(0, nl + 1);
      return response;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw fail("timed out after " + std::to_string(timeout.count()) + " ms");
    pollfd fds[2] = {{stdout_fd_, POLLIN, 0}, {stderr_fd_, POLLIN, 0}};
    const int rc = ::poll(fds, 2, static_cast<int>(left.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw fail(std::string("poll failed: ") + std::strerror(errno));
    }
    if (rc == 0) continue;
    char buf[65536];
    if (fds[1].revents & POLLIN) {
      const ssize_t got = ::read(stderr_fd_, buf, sizeof(buf));
      if (got > 0) {
        stderr_tail_.append(buf, static_cast<std::size_t>(got));
        if (stderr_tail_.size() > 8192) stderr_tail_.erase(0, stderr_tail_.size() - 4096);
      }
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      const ssize_t got = ::read(stdout_fd_, buf, sizeof(buf));
      if (got < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw fail(std::string("read failed: ") + std::strerror(errno));
      }
      if (got == 0) {
        int status = 0;
        std::string how = "exited before answering";
        if (::waitpid(pid_, &status, WNOHANG) == pid_) {
          pid_ = -1;
          if (WIFEXITED(status)) how += " with status " + std::to_string(WEXITSTATUS(status));
          if (WIFSIGNALED(status)) how += " on signal " + std::to_string(WTERMSIG(status));
        }
        throw fail(how);
      }
      pending_.append(buf, static_cast<std::size_t>(got));
    }
  }
}

ExternalSimulator::ExternalSimulator(std::string command, InputSpace space, std::chrono::milliseconds timeout,
                                     std::size_t pool_size)
    : command_(std::move(command)), space_(std::move(space)), timeout_(timeout),
      pool_size_(pool_size == 0 ? 1 : pool_size) {}

std::vector<double> ExternalSimulator::external_draw_batch(const InputPoint& x, std::size_t n,
                                                           std::uint64_t seed) {
  std::unique_ptr<ExternalProcess> proc;
  {
    std::unique_lock lock(mutex_);
    available_.wait(lock, [&] { return !idle_.empty() || live_ < pool_size_; });
    if (!idle_.empty()) {
      proc = std::move(idle_.back());
      idle_.pop_back();
    } else {
      proc = std::make_unique<ExternalProcess>(command_);
      ++live_;
    }
  }
  const auto release = [&] {
    std::lock_guard lock(mutex_);
    idle_.push_back(std::move(proc));
    available_.notify_one();
  };
  try {
    const std::string response = proc->roundtrip(external_request_line(x, n, seed), timeout_);
    auto draws = parse_external_response(response, n);
    release();
    return draws;
  } catch (...) {
    release();
    throw;
  }
}

}  // namespace qf
