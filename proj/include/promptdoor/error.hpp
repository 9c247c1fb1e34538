#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace promptdoor {

enum class ErrorKind {
  kInvalidArgument,
  kDegenerateInput,
  kState,
  kNumericFault,
  kParse,
  kLabel,
  kEmptySample,
  kInsufficientData,
  kInvalidSpec,
  kConfig,
  kUndefinedMetric,
  kIo,
  kDependency,
  kPrecondition,
};

constexpr std::string_view kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kDegenerateInput: return "degenerate-input";
    case ErrorKind::kState: return "state";
    case ErrorKind::kNumericFault: return "numeric-fault";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kLabel: return "label";
    case ErrorKind::kEmptySample: return "empty-sample";
    case ErrorKind::kInsufficientData: return "insufficient-data";
    case ErrorKind::kInvalidSpec: return "invalid-spec";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kUndefinedMetric: return "undefined-metric";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kDependency: return "dependency";
    case ErrorKind::kPrecondition: return "precondition";
  }
  return "unknown";
}

// Every failure the library reports carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace promptdoor
