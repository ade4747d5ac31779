#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dmc {

enum class ErrorKind {
  ZeroVector,
  DimensionMismatch,
  LengthMismatch,
  DegenerateInput,
  TokenOutOfRange,
  ShapeMismatch,
  BatchExceedsCapacity,
  NonUnitKey,
  NonUnitInput,
  NonPositiveTemperature,
  BatchLengthMismatch,
  InvalidLabel,
  EmptyCorpus,
  ConfigInvalid,
  ParseError,
  IoError,
  KTooLarge,
  ZeroDenominator,
  EmptySide,
  NoGold,
  NumericalFailure,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Single exception type for the library; `kind()` identifies the failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  // The message without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace dmc
