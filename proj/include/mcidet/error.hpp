#pragma once

#include <stdexcept>
#include <string>

namespace mcidet {

enum class ErrorCode {
  kIo,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kBadHeader,
  kNonFinite,
  kMissingField,
  kUnknownLabel,
  kUnknownLanguage,
  kDuplicateKey,
  kInvalidArgument,
  kDimensionMismatch,
  kEmpty,
  kDivergence,
  kUnstableFilter,
  kStaleCache,
  kIdMismatch,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kVersionMismatch: return "version-mismatch";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kBadHeader: return "bad-header";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kMissingField: return "missing-field";
    case ErrorCode::kUnknownLabel: return "unknown-label";
    case ErrorCode::kUnknownLanguage: return "unknown-language";
    case ErrorCode::kDuplicateKey: return "duplicate-key";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kEmpty: return "empty";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kUnstableFilter: return "unstable-filter";
    case ErrorCode::kStaleCache: return "stale-cache";
    case ErrorCode::kIdMismatch: return "id-mismatch";
  }
  return "unknown";
}

// Every failure in the library is reported as an Error carrying a code, so
// callers (and tests) can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mcidet
