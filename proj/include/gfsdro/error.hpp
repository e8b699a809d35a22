#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gfsdro {

enum class ErrorKind {
  kInvalidArgument,
  kInvalidConfig,
  kDegenerateWeights,
  kDivergedSampler,
  kOptimizerFailure,
  kRejectionStall,
  kParseError,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kInvalidConfig: return "invalid-config";
    case ErrorKind::kDegenerateWeights: return "degenerate-weights";
    case ErrorKind::kDivergedSampler: return "diverged-sampler";
    case ErrorKind::kOptimizerFailure: return "optimizer-failure";
    case ErrorKind::kRejectionStall: return "rejection-stall";
    case ErrorKind::kParseError: return "parse-error";
  }
  return "unknown";
}

/// Single exception type for the library; `kind()` tells callers what failed.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised when an inner sampler produces a non-finite coordinate.
class DivergedSampler : public Error {
 public:
  DivergedSampler(std::size_t iteration, const std::string& where)
      : Error(ErrorKind::kDivergedSampler,
              where + " produced a non-finite value at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}

  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Raised by file loaders; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorKind::kParseError, "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

}  // namespace gfsdro
