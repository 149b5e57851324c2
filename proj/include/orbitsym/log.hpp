#pragma once

#include <string>

namespace orbitsym {

enum class LogLevel { debug = 0, info = 1, warning = 2, error = 3, silent = 4 };

void set_log_level(LogLevel level);
LogLevel log_level();

/// Writes "[level] message" to stderr when `level` is at or above the threshold.
void log(LogLevel level, const std::string& message);
inline void log_info(const std::string& message) { log(LogLevel::info, message); }
inline void log_warning(const std::string& message) { log(LogLevel::warning, message); }

}  // namespace orbitsym
