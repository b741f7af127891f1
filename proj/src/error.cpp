#include "relm/error.hpp"

namespace relm {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::UnbalancedParenthesis: return "UnbalancedParenthesis";
    case ErrorKind::UnmatchedRingBond: return "UnmatchedRingBond";
    case ErrorKind::UnknownElement: return "UnknownElement";
    case ErrorKind::InvalidSyntax: return "InvalidSyntax";
    case ErrorKind::UnsupportedFeature: return "UnsupportedFeature";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::EmptySet: return "EmptySet";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::TemplateError: return "TemplateError";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::ZeroNormEmbedding: return "ZeroNormEmbedding";
    case ErrorKind::NotEnoughCandidates: return "NotEnoughCandidates";
    case ErrorKind::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorKind::FingerprintMismatch: return "FingerprintMismatch";
    case ErrorKind::SchemaConflict: return "SchemaConflict";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::AuthFailure: return "AuthFailure";
    case ErrorKind::RateLimitedExhausted: return "RateLimitedExhausted";
    case ErrorKind::MalformedResponse: return "MalformedResponse";
    case ErrorKind::DegenerateRanks: return "DegenerateRanks";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

bool is_input_error(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::EmptyInput:
    case ErrorKind::UnbalancedParenthesis:
    case ErrorKind::UnmatchedRingBond:
    case ErrorKind::UnknownElement:
    case ErrorKind::InvalidSyntax:
    case ErrorKind::FormatError:
    case ErrorKind::ShapeError:
    case ErrorKind::ConfigError:
    case ErrorKind::IoError:
    case ErrorKind::TemplateError:
    case ErrorKind::EmptyCorpus:
    case ErrorKind::MissingGroundTruth:
    case ErrorKind::FingerprintMismatch:
    case ErrorKind::SchemaConflict:
    case ErrorKind::InvalidArgument:
      return true;
    default:
      return false;
  }
}

}  // namespace relm
