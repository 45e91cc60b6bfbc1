#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

#include "storm/core/precision.hpp"

namespace storm::inline STORM_PREC_NS {

enum class ErrorKind {
  kConfig,
  kData,
  kFormat,
  kUnsupported,
  kLength,
  kDimension,
  kTraining,
  kContract,
  kInternal,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

namespace detail {
inline void append(std::ostringstream&) {}
template <class T, class... Rest>
void append(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  append(os, rest...);
}
}  // namespace detail

template <class... Args>
[[noreturn]] void fail(ErrorKind kind, const Args&... args) {
  std::ostringstream os;
  detail::append(os, args...);
  throw Error(kind, os.str());
}

#define STORM_CHECK(cond, kind, ...)                  \
  do {                                                \
    if (!(cond)) ::storm::fail((kind), __VA_ARGS__);  \
  } while (0)

}  // namespace storm::inline STORM_PREC_NS
