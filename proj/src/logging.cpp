#include "clasp/logging.hpp"

#include <atomic>
#include <iostream>
#include <mutex>
#include <set>
#include <string>

namespace clasp {

namespace {
std::atomic<LogLevel> g_level{LogLevel::warning};
std::mutex g_sink_mutex;
std::mutex g_once_mutex;
std::set<std::string, std::less<>> g_warned;

const char* level_tag(LogLevel level) {
  switch (level) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warning: return "warning";
    case LogLevel::error: return "error";
    case LogLevel::off: break;
  }
  return "";
}
}  // namespace

void set_log_level(LogLevel level) { g_level.store(level); }
LogLevel log_level() { return g_level.load(); }

void log_message(LogLevel level, std::string_view message) {
  if (level < g_level.load() || level == LogLevel::off) return;
  std::lock_guard lock(g_sink_mutex);
  std::clog << "[clasp " << level_tag(level) << "] " << message << '\n';
}

void log_warning_once(std::string_view key, std::string_view message) {
  bool first = false;
  {
    std::lock_guard lock(g_once_mutex);
    first = g_warned.emplace(key).second;
  }
  if (first) {
    log_message(LogLevel::warning, std::string(message) + " (repeats logged at debug level)");
  } else {
    log_message(LogLevel::debug, message);
  }
}

}  // namespace clasp
