#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gopkit {

enum class ErrorCode {
  Io,
  BadMagic,
  VersionMismatch,
  TruncatedPayload,
  ShapeMismatch,
  NonFinite,
  Schema,
  IndexOutOfRange,
  LengthMismatch,
  EmptyInput,
  Infeasible,
  InvalidArgument,
  UnknownSymbol,
  SingleClass,
  RankDeficient,
  ZeroVariance,
  MissingLabels,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io: return "io";
    case ErrorCode::BadMagic: return "bad-magic";
    case ErrorCode::VersionMismatch: return "version-mismatch";
    case ErrorCode::TruncatedPayload: return "truncated-payload";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::Schema: return "schema";
    case ErrorCode::IndexOutOfRange: return "index-out-of-range";
    case ErrorCode::LengthMismatch: return "length-mismatch";
    case ErrorCode::EmptyInput: return "empty-input";
    case ErrorCode::Infeasible: return "infeasible";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::UnknownSymbol: return "unknown-symbol";
    case ErrorCode::SingleClass: return "single-class";
    case ErrorCode::RankDeficient: return "rank-deficient";
    case ErrorCode::ZeroVariance: return "zero-variance";
    case ErrorCode::MissingLabels: return "missing-labels";
  }
  return "unknown";
}

/// Every failure in gopkit is reported as an Error carrying a code, so callers
/// can distinguish e.g. a truncated tensor file from a non-finite entry.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gopkit
