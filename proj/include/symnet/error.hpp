#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace symnet {

enum class ErrorCode {
  MissingFile,
  ParseError,
  InvariantViolation,
  BadMagic,
  VersionMismatch,
  DimensionMismatch,
  NonFiniteValue,
  RowCountMismatch,
  DimMismatch,
  NoNegativeAvailable,
  ShapeMismatch,
  DegenerateBatch,
  UnregisteredParameter,
  NonFiniteGradient,
  KeyMismatch,
  ToleranceExceeded,
  IdenticalAttrIndices,
  LabelOutOfRange,
  NonPositiveGamma,
  EmptyCandidateSet,
  UnknownProfile,
  EmptyTrainSplit,
  NonFiniteLoss,
  MissingParameter,
  EmptyGrid,
  UnknownSampleId,
  AttrOutOfRange,
  InfeasibleSplit,
  InvalidConfig,
  IoError,
};

// Stable identifiers surfaced by the CLI in machine-readable errors.
constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::RowCountMismatch: return "RowCountMismatch";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NoNegativeAvailable: return "NoNegativeAvailable";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateBatch: return "DegenerateBatch";
    case ErrorCode::UnregisteredParameter: return "UnregisteredParameter";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::KeyMismatch: return "KeyMismatch";
    case ErrorCode::ToleranceExceeded: return "ToleranceExceeded";
    case ErrorCode::IdenticalAttrIndices: return "IdenticalAttrIndices";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::NonPositiveGamma: return "NonPositiveGamma";
    case ErrorCode::EmptyCandidateSet: return "EmptyCandidateSet";
    case ErrorCode::UnknownProfile: return "UnknownProfile";
    case ErrorCode::EmptyTrainSplit: return "EmptyTrainSplit";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::MissingParameter: return "MissingParameter";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::UnknownSampleId: return "UnknownSampleId";
    case ErrorCode::AttrOutOfRange: return "AttrOutOfRange";
    case ErrorCode::InfeasibleSplit: return "InfeasibleSplit";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace symnet
