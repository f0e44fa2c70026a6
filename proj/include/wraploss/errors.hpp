#pragma once

#include <stdexcept>
#include <string>

namespace wraploss {

// Error categories. The CLI maps them onto process exit codes.
enum class ErrorKind {
  kArchitecture,
  kShape,
  kNumeric,
  kDomain,
  kLabel,
  kProbability,
  kDegenerateClass,
  kConfig,
  kParse,
  kIo,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kArchitecture: return "invalid-architecture";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kLabel: return "label";
    case ErrorKind::kProbability: return "probability";
    case ErrorKind::kDegenerateClass: return "degenerate-class";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// 0 success, 1 validation, 2 numeric/assertion failure, 3 I/O.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNumeric: return 2;
    case ErrorKind::kIo: return 3;
    default: return 1;
  }
}

namespace detail {

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

}  // namespace detail
}  // namespace wraploss
