#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace tamer {

enum class ErrorKind {
  UnknownToken,
  UnbalancedBraces,
  DanglingScript,
  CycleDetected,
  ShapeMismatch,
  NotScalar,
  TapeConsumed,
  NotOnTape,
  NonFiniteValue,
  EmptyLoss,
  TargetOutOfMask,
  NoFinishedHypothesis,
  EmptyCandidates,
  LengthMismatch,
  EmptyCorpus,
  Undefined,
  MalformedXml,
  MissingTruthAnnotation,
  IoError,
  SchemaError,
  InvalidConfig,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownToken: return "UnknownToken";
    case ErrorKind::UnbalancedBraces: return "UnbalancedBraces";
    case ErrorKind::DanglingScript: return "DanglingScript";
    case ErrorKind::CycleDetected: return "CycleDetected";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NotScalar: return "NotScalar";
    case ErrorKind::TapeConsumed: return "TapeConsumed";
    case ErrorKind::NotOnTape: return "NotOnTape";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::EmptyLoss: return "EmptyLoss";
    case ErrorKind::TargetOutOfMask: return "TargetOutOfMask";
    case ErrorKind::NoFinishedHypothesis: return "NoFinishedHypothesis";
    case ErrorKind::EmptyCandidates: return "EmptyCandidates";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::Undefined: return "Undefined";
    case ErrorKind::MalformedXml: return "MalformedXml";
    case ErrorKind::MissingTruthAnnotation: return "MissingTruthAnnotation";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

// Every failure raised by the library carries a kind so callers (and the CLI
// exit-code mapping) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UnknownTokenError : public Error {
 public:
  UnknownTokenError(std::string chunk, std::size_t position)
      : Error(ErrorKind::UnknownToken,
              "'" + chunk + "' at position " + std::to_string(position)),
        chunk_(std::move(chunk)),
        position_(position) {}

  const std::string& chunk() const noexcept { return chunk_; }
  std::size_t position() const noexcept { return position_; }

 private:
  std::string chunk_;
  std::size_t position_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace tamer
