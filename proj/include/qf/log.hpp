#pragma once

#include <functional>
#include <string>

namespace qf::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Off = 3 };

using Sink = std::function<void(Level, const std::string&)>;

/// Replaces the global sink (default: stderr). Pass nullptr to restore the default.
void set_sink(Sink sink);
void set_level(Level level);
Level level();

void write(Level level, const std::string& message);
inline void debug(const std::string& m) { write(Level::Debug, m); }
inline void info(const std::string& m) { write(Level::Info, m); }
inline void warn(const std::string& m) { write(Level::Warn, m); }

}  // namespace qf::log
