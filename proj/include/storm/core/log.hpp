#pragma once

#include <functional>
#include <string>
#include <string_view>

#include "storm/core/error.hpp"

namespace storm::inline STORM_PREC_NS {

enum class LogLevel { kDebug, kInfo, kWarn, kError };

const char* log_level_name(LogLevel level);

// Records go to stderr unless a sink is installed. Not synchronized.
using LogSink = std::function<void(LogLevel, std::string_view)>;
void set_log_sink(LogSink sink);
void set_log_level(LogLevel level);
LogLevel log_level();
void log_message(LogLevel level, std::string_view message);

template <class... Args>
void log(LogLevel level, const Args&... args) {
  if (level < log_level()) return;
  std::ostringstream os;
  detail::append(os, args...);
  log_message(level, os.str());
}

}  // namespace storm::inline STORM_PREC_NS
