#pragma once

#include <stdexcept>
#include <string>

namespace cbwk {

enum class ErrorKind {
  MissingField,
  NormViolation,
  RangeViolation,
  NullActionNonzero,
  ShapeMismatch,
  MissingDistribution,
  NullActionConversion,
  HorizonExceeded,
  NoConvergence,
  NumericalInstability,
  TooLarge,
  CoefficientMismatch,
  SchemaError,
  EmptyAfterFiltering,
  IoError,
  InvalidArgument,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingField: return "MissingField";
    case ErrorKind::NormViolation: return "NormViolation";
    case ErrorKind::RangeViolation: return "RangeViolation";
    case ErrorKind::NullActionNonzero: return "NullActionNonzero";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::MissingDistribution: return "MissingDistribution";
    case ErrorKind::NullActionConversion: return "NullActionConversion";
    case ErrorKind::HorizonExceeded: return "HorizonExceeded";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::NumericalInstability: return "NumericalInstability";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::CoefficientMismatch: return "CoefficientMismatch";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::EmptyAfterFiltering: return "EmptyAfterFiltering";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above so
/// callers (and tests) can dispatch on it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace cbwk
