#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace reviewlens {

enum class ErrorKind {
  MalformedRecord,
  GatingViolation,
  DuplicateRecord,
  InsufficientAnnotators,
  DegenerateStratum,
  InsufficientPopulation,
  ZeroVariance,
  OutOfRangeScore,
  ModelNotFound,
  OfflineCacheMiss,
  NonFiniteLoss,
  EmptyGroup,
  MissingCategoryPrediction,
  ParseFailure,
  ClientUnavailable,
  PanelTooSmall,
  UnknownRound,
  NotInPanel,
  NotAssigned,
  DuplicateSubmission,
  RoundClosed,
  InvalidArgument,
  Io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedRecord: return "MalformedRecord";
    case ErrorKind::GatingViolation: return "GatingViolation";
    case ErrorKind::DuplicateRecord: return "DuplicateRecord";
    case ErrorKind::InsufficientAnnotators: return "InsufficientAnnotators";
    case ErrorKind::DegenerateStratum: return "DegenerateStratum";
    case ErrorKind::InsufficientPopulation: return "InsufficientPopulation";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::OutOfRangeScore: return "OutOfRangeScore";
    case ErrorKind::ModelNotFound: return "ModelNotFound";
    case ErrorKind::OfflineCacheMiss: return "OfflineCacheMiss";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyGroup: return "EmptyGroup";
    case ErrorKind::MissingCategoryPrediction: return "MissingCategoryPrediction";
    case ErrorKind::ParseFailure: return "ParseFailure";
    case ErrorKind::ClientUnavailable: return "ClientUnavailable";
    case ErrorKind::PanelTooSmall: return "PanelTooSmall";
    case ErrorKind::UnknownRound: return "UnknownRound";
    case ErrorKind::NotInPanel: return "NotInPanel";
    case ErrorKind::NotAssigned: return "NotAssigned";
    case ErrorKind::DuplicateSubmission: return "DuplicateSubmission";
    case ErrorKind::RoundClosed: return "RoundClosed";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace reviewlens
