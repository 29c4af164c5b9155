#pragma once

#include <string_view>

namespace clasp {

enum class LogLevel { debug = 0, info = 1, warning = 2, error = 3, off = 4 };

void set_log_level(LogLevel level);
LogLevel log_level();

void log_message(LogLevel level, std::string_view message);
inline void log_info(std::string_view message) { log_message(LogLevel::info, message); }
inline void log_warning(std::string_view message) { log_message(LogLevel::warning, message); }
// Warns the first time `key` is seen in this process; repeats go to debug.
void log_warning_once(std::string_view key, std::string_view message);

}  // namespace clasp
