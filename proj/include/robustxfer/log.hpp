#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>

namespace rx {

enum class LogLevel { debug, info, warn, error };

inline const char* level_name(LogLevel l) {
  switch (l) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warn: return "warn";
    case LogLevel::error: return "error";
  }
  return "?";
}

using LogSink = std::function<void(LogLevel, const std::string&)>;

namespace detail {
struct LogState {
  std::mutex mu;
  LogLevel threshold = LogLevel::info;
  LogSink sink;
};
inline LogState& log_state() {
  static LogState s;
  return s;
}
}  // namespace detail

// Replaces the stderr sink; pass an empty function to restore it.
inline void set_log_sink(LogSink sink) {
  auto& s = detail::log_state();
  std::lock_guard lk(s.mu);
  s.sink = std::move(sink);
}

inline void set_log_level(LogLevel l) {
  auto& s = detail::log_state();
  std::lock_guard lk(s.mu);
  s.threshold = l;
}

inline void log(LogLevel l, const std::string& msg) {
  auto& s = detail::log_state();
  std::lock_guard lk(s.mu);
  if (l < s.threshold) return;
  if (s.sink)
    s.sink(l, msg);
  else
    std::cerr << "[" << level_name(l) << "] " << msg << "\n";
}

}  // namespace rx
