#pragma once

#include <stdexcept>
#include <string>

namespace clustercam {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kNonFiniteValue,
  kTooFewMaps,
  kQTooLarge,
  kEmptyInput,
  kConvergenceFailure,
  kParseError,
  kUnknownLayer,
  kShapeMismatch,
  kUnsupportedSplit,
  kUnsupportedOperator,
  kDecodeError,
  kUnsupportedFormat,
  kIoError,
  kZeroOriginalScore,
  kPartitionMismatch,
};

const char* to_string(ErrorCode code);

/// Base exception for every failure raised by the library. The code lets
/// callers (the CLI in particular) map failures onto exit statuses without
/// parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace clustercam
