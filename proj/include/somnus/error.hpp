#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace somnus {

enum class Errc {
  kInvalidConfig,
  kMissingColumn,
  kDuplicateKey,
  kUnparseableNumber,
  kInvalidTable,
  kEmptyColumn,
  kEmptyTable,
  kEmptyMatrix,
  kWrongKind,
  kMissingFeature,
  kUnknownFeature,
  kOutOfRange,
  kMalformedPrompt,
  kGeneratorUnavailable,
  kLengthMismatch,
  kDegenerateTarget,
  kCorruptArtifact,
  kUnknownSession,
  kBadRequest,
  kIo,
};

inline const char* to_string(Errc code) {
  switch (code) {
    case Errc::kInvalidConfig: return "InvalidConfig";
    case Errc::kMissingColumn: return "MissingColumn";
    case Errc::kDuplicateKey: return "DuplicateKey";
    case Errc::kUnparseableNumber: return "UnparseableNumber";
    case Errc::kInvalidTable: return "InvalidTable";
    case Errc::kEmptyColumn: return "EmptyColumn";
    case Errc::kEmptyTable: return "EmptyTable";
    case Errc::kEmptyMatrix: return "EmptyMatrix";
    case Errc::kWrongKind: return "WrongKind";
    case Errc::kMissingFeature: return "MissingFeature";
    case Errc::kUnknownFeature: return "UnknownFeature";
    case Errc::kOutOfRange: return "OutOfRange";
    case Errc::kMalformedPrompt: return "MalformedPrompt";
    case Errc::kGeneratorUnavailable: return "GeneratorUnavailable";
    case Errc::kLengthMismatch: return "LengthMismatch";
    case Errc::kDegenerateTarget: return "DegenerateTarget";
    case Errc::kCorruptArtifact: return "CorruptArtifact";
    case Errc::kUnknownSession: return "UnknownSession";
    case Errc::kBadRequest: return "BadRequest";
    case Errc::kIo: return "Io";
  }
  return "Unknown";
}

// Errors caused by bad input (as opposed to environment/runtime failures).
inline bool is_validation_error(Errc code) {
  switch (code) {
    case Errc::kGeneratorUnavailable:
    case Errc::kIo:
      return false;
    default:
      return true;
  }
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string message, std::string detail = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message + (detail.empty() ? "" : " (" + detail + ")")),
        code_(code),
        message_(std::move(message)),
        detail_(std::move(detail)) {}

  Errc code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }
  // Machine-readable subject of the error, e.g. the offending column name.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string message_;
  std::string detail_;
};

}  // namespace somnus
