#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flexfas {

enum class ErrorCode {
  kShapeMismatch,
  kValueRange,
  kMissingRgb,
  kParseError,
  kDuplicateId,
  kMissingRgbPath,
  kOneClassOnly,
  kEmptyBatch,
  kNonfiniteLoss,
  kShapeInvalid,
  kInvalidArgument,
  kFileNotFound,
  kCheckpointIncompatible,
  kConfigError,
  kIoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::kValueRange: return "VALUE_RANGE";
    case ErrorCode::kMissingRgb: return "MISSING_RGB";
    case ErrorCode::kParseError: return "PARSE_ERROR";
    case ErrorCode::kDuplicateId: return "DUPLICATE_ID";
    case ErrorCode::kMissingRgbPath: return "MISSING_RGB_PATH";
    case ErrorCode::kOneClassOnly: return "ONE_CLASS_ONLY";
    case ErrorCode::kEmptyBatch: return "EMPTY_BATCH";
    case ErrorCode::kNonfiniteLoss: return "NONFINITE_LOSS";
    case ErrorCode::kShapeInvalid: return "SHAPE_INVALID";
    case ErrorCode::kInvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::kFileNotFound: return "FILE_NOT_FOUND";
    case ErrorCode::kCheckpointIncompatible: return "CHECKPOINT_INCOMPATIBLE";
    case ErrorCode::kConfigError: return "CONFIG_ERROR";
    case ErrorCode::kIoError: return "IO_ERROR";
  }
  return "UNKNOWN";
}

/// Every failure raised by the library carries a machine-readable code; the
/// message is prefixed with the code name so diagnostics stay greppable.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace flexfas
