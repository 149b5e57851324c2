#include "orbitsym/log.hpp"

#include <atomic>
#include <iostream>

namespace orbitsym {

namespace {
std::atomic<LogLevel> g_level{LogLevel::warning};

const char* label(LogLevel level) {
  switch (level) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warning: return "warning";
    case LogLevel::error: return "error";
    case LogLevel::silent: return "";
  }
  return "";
}
}  // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log(LogLevel level, const std::string& message) {
  if (level < g_level.load() || level == LogLevel::silent) return;
  std::cerr << '[' << label(level) << "] " << message << '\n';
}

}  // namespace orbitsym
