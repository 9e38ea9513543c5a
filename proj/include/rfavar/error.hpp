#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rfavar {

enum class ErrorCode {
  UnknownCode,
  NonPositiveForLog,
  SeriesTooShort,
  ZeroVarianceSeries,
  MissingSeries,
  MissingValue,
  RaggedCsv,
  WindowTooShort,
  IoError,
  ConfigInvalid,
  UnstableVar,
  RankDeficient,
  SingularGram,
  NoConvergence,
  NotPositiveDefinite,
  SingularWeightedGram,
  EmptyGrid,
  DimensionMismatch,
  InsufficientObservations,
  SingularRegressors,
  SingularOmegaGg,
  SingularNamingBlock,
  BadShockIndex,
  CodeLengthMismatch,
  BadScale,
  DegenerateBands,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownCode: return "UnknownCode";
    case ErrorCode::NonPositiveForLog: return "NonPositiveForLog";
    case ErrorCode::SeriesTooShort: return "SeriesTooShort";
    case ErrorCode::ZeroVarianceSeries: return "ZeroVarianceSeries";
    case ErrorCode::MissingSeries: return "MissingSeries";
    case ErrorCode::MissingValue: return "MissingValue";
    case ErrorCode::RaggedCsv: return "RaggedCsv";
    case ErrorCode::WindowTooShort: return "WindowTooShort";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::UnstableVar: return "UnstableVar";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::SingularGram: return "SingularGram";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::SingularWeightedGram: return "SingularWeightedGram";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InsufficientObservations: return "InsufficientObservations";
    case ErrorCode::SingularRegressors: return "SingularRegressors";
    case ErrorCode::SingularOmegaGg: return "SingularOmegaGg";
    case ErrorCode::SingularNamingBlock: return "SingularNamingBlock";
    case ErrorCode::BadShockIndex: return "BadShockIndex";
    case ErrorCode::CodeLengthMismatch: return "CodeLengthMismatch";
    case ErrorCode::BadScale: return "BadScale";
    case ErrorCode::DegenerateBands: return "DegenerateBands";
  }
  return "Unknown";
}

// Exception carrying a machine-readable code alongside the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rfavar
