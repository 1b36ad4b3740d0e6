#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lrstereo {

enum class ErrorCode {
  NonFiniteResult,
  NoConvergence,
  BehindCamera,
  SingularNormalEquations,
  NonFiniteResidual,
  DegenerateConfiguration,
  NonPositiveDefinite,
  DimensionMismatch,
  NonFiniteLoss,
  DegenerateGeometry,
  DivergentDepth,
  LengthMismatch,
  ConfigError,
  FormatError,
  IoError,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteResult: return "NonFiniteResult";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::SingularNormalEquations: return "SingularNormalEquations";
    case ErrorCode::NonFiniteResidual: return "NonFiniteResidual";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::NonPositiveDefinite: return "NonPositiveDefinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::DivergentDepth: return "DivergentDepth";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Domain error raised by every module. The code names the failure class;
/// the message carries context for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace lrstereo
