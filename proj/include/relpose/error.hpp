#pragma once

#include <stdexcept>
#include <string>

namespace relpose {

enum class ErrorKind {
  DegenerateInput,
  EmptyCandidates,
  NonMonotoneFrameId,
  MissingContextEdges,
  BridgeTooShort,
  BridgeTooLong,
  NonPositiveDepth,
  NonFiniteObjective,
  InvalidConfig,
  UnknownFrame,
  InvalidCounts,
  EmptyPairSet,
  TooFewPoses,
  MismatchedIds,
  MissingScene,
  TooFewSamples,
  PlanMismatch,
  InvalidProblem,
  ParseError,
  IoError,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::EmptyCandidates: return "EmptyCandidates";
    case ErrorKind::NonMonotoneFrameId: return "NonMonotoneFrameId";
    case ErrorKind::MissingContextEdges: return "MissingContextEdges";
    case ErrorKind::BridgeTooShort: return "BridgeTooShort";
    case ErrorKind::BridgeTooLong: return "BridgeTooLong";
    case ErrorKind::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorKind::NonFiniteObjective: return "NonFiniteObjective";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::UnknownFrame: return "UnknownFrame";
    case ErrorKind::InvalidCounts: return "InvalidCounts";
    case ErrorKind::EmptyPairSet: return "EmptyPairSet";
    case ErrorKind::TooFewPoses: return "TooFewPoses";
    case ErrorKind::MismatchedIds: return "MismatchedIds";
    case ErrorKind::MissingScene: return "MissingScene";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::PlanMismatch: return "PlanMismatch";
    case ErrorKind::InvalidProblem: return "InvalidProblem";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace relpose
