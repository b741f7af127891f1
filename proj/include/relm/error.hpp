#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace relm {

enum class ErrorKind {
  // SMILES grammar
  EmptyInput,
  UnbalancedParenthesis,
  UnmatchedRingBond,
  UnknownElement,
  InvalidSyntax,
  UnsupportedFeature,
  // numerics / encoder
  ShapeMismatch,
  DimMismatch,
  EmptySet,
  NonFiniteLoss,
  // files and configuration
  FormatError,
  ShapeError,
  ConfigError,
  IoError,
  TemplateError,
  // retrieval
  EmptyCorpus,
  ZeroNormEmbedding,
  NotEnoughCandidates,
  MissingGroundTruth,
  FingerprintMismatch,
  // prompting and backend
  SchemaConflict,
  Timeout,
  AuthFailure,
  RateLimitedExhausted,
  MalformedResponse,
  // statistics
  DegenerateRanks,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

/// True for kinds caused by bad user input (files, flags, data) rather than
/// by a failure inside the pipeline. The CLI maps these to exit code 2.
bool is_input_error(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Parse failure inside a SMILES string; offset is the byte position of the
/// offending token.
class SmilesError : public Error {
 public:
  SmilesError(ErrorKind kind, std::size_t offset, const std::string& detail)
      : Error(kind, detail + " at offset " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Backend failure; carries one line per attempt made.
class BackendError : public Error {
 public:
  BackendError(ErrorKind kind, const std::string& message, std::vector<std::string> transcript)
      : Error(kind, message), transcript_(std::move(transcript)) {}

  const std::vector<std::string>& transcript() const noexcept { return transcript_; }

 private:
  std::vector<std::string> transcript_;
};

}  // namespace relm
