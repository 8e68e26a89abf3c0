#pragma once

#include <stdexcept>
#include <string>

namespace drw {

enum class ErrorKind {
  kInvalidArgument,
  kInvalidDimension,
  kOutOfVocabulary,
  kInvalidProbability,
  kCorruptFile,
  kDimensionMismatch,
  kTooFewProbes,
  kWindowOutsideGrid,
  kLengthMismatch,
  kDivergence,
  kIo,
};

const char* to_string(ErrorKind kind);

/// Every failure raised by the library. `kind()` lets front ends map
/// errors to exit codes or HTTP statuses without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace drw
