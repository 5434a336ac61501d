#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dra {

enum class ErrorCode {
  InvalidArgument,
  SchemaMismatch,
  IrregularInterval,
  EmptyData,
  InsufficientHistory,
  UndefinedMetric,
  DegenerateControl,
  InfeasibleComfort,
  ParseError,
  NotFound,
  IoError,
};

inline constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::IrregularInterval: return "IrregularInterval";
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::InsufficientHistory: return "InsufficientHistory";
    case ErrorCode::UndefinedMetric: return "UndefinedMetric";
    case ErrorCode::DegenerateControl: return "DegenerateControl";
    case ErrorCode::InfeasibleComfort: return "InfeasibleComfort";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Library-wide exception. Every failure path throws this with a stable code
/// so the CLI and HTTP layers can map it to exit statuses and response codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace dra
