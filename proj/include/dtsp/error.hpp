#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dtsp {

enum class ErrorCode {
  InvalidArg,
  InvalidTour,
  TooLarge,
  UnknownMethod,
  IoError,
  ParseError,
  InvariantViolation,
  ShapeError,
  ContextOverflow,
  AllVisited,
  TargetVisited,
  DatasetMismatch,
  NonFiniteLoss,
  NonFiniteOutput,
  Mismatch,
  ConfigError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArg: return "InvalidArg";
    case ErrorCode::InvalidTour: return "InvalidTour";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::UnknownMethod: return "UnknownMethod";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::ContextOverflow: return "ContextOverflow";
    case ErrorCode::AllVisited: return "AllVisited";
    case ErrorCode::TargetVisited: return "TargetVisited";
    case ErrorCode::DatasetMismatch: return "DatasetMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::NonFiniteOutput: return "NonFiniteOutput";
    case ErrorCode::Mismatch: return "Mismatch";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable code;
/// what() is "<Code>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) { throw Error(code, detail); }

}  // namespace dtsp
