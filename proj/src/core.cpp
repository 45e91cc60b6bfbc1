#include <cmath>
#include <iostream>
#include <numbers>

#include "storm/core/error.hpp"
#include "storm/core/log.hpp"
#include "storm/core/rng.hpp"

namespace storm::inline STORM_PREC_NS {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kData: return "data";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kUnsupported: return "unsupported";
    case ErrorKind::kLength: return "length";
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kTraining: return "training";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kInternal: return "internal";
  }
  return "unknown";
}

namespace {
LogSink& log_sink() {
  static LogSink sink;
  return sink;
}
LogLevel& level_ref() {
  static LogLevel level = LogLevel::kInfo;
  return level;
}
}  // namespace

const char* log_level_name(LogLevel level) {
  switch (level) {
    case LogLevel::kDebug: return "debug";
    case LogLevel::kInfo: return "info";
    case LogLevel::kWarn: return "warn";
    case LogLevel::kError: return "error";
  }
  return "unknown";
}

void set_log_sink(LogSink sink) { log_sink() = std::move(sink); }
void set_log_level(LogLevel level) { level_ref() = level; }
LogLevel log_level() { return level_ref(); }

void log_message(LogLevel level, std::string_view message) {
  if (level < level_ref()) return;
  if (log_sink()) {
    log_sink()(level, message);
    return;
  }
  std::cerr << "[" << log_level_name(level) << "] " << message << '\n';
}

// splitmix64 finalizer
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : key_(mix64(mix64(seed) ^ (stream * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull))) {}

Rng Rng::split(std::uint64_t stream) const { return Rng(key_, stream + 1); }

std::uint64_t Rng::next_u64() {
  const std::uint64_t c = counter_++;
  return mix64(key_ ^ mix64(c));
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Lemire-style rejection keeps the draw unbiased.
  const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace storm::inline STORM_PREC_NS
