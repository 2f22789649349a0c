#include "qf/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace qf::log {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

Sink& current_sink() {
  static Sink sink;
  return sink;
}

std::atomic<Level>& current_level() {
  static std::atomic<Level> lvl{Level::Warn};
  return lvl;
}

const char* tag(Level l) {
  switch (l) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warning";
    default: return "";
  }
}

}  // namespace

void set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  current_sink() = std::move(sink);
}

void set_level(Level l) { current_level().store(l); }
Level level() { return current_level().load(); }

void write(Level l, const std::string& message) {
  if (l < current_level().load() || l == Level::Off) return;
  std::lock_guard lock(sink_mutex());
  if (current_sink()) {
    current_sink()(l, message);
  } else {
    std::cerr << "[" << tag(l) << "] " << message << '\n';
  }
}

}  // namespace qf::log
