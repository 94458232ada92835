#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xrseq {

enum class ErrorKind {
  missing_column,
  unknown_label,
  malformed_row,
  duplicate_followup,
  too_few_records,
  empty_input,
  io_error,
  schema_mismatch,
  decode_error,
  unknown_backbone,
  config_error,
  numerical_error,
  shape_mismatch,
  version_mismatch,
  length_mismatch,
  degenerate_classes,
};

inline std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::missing_column:     return "MissingColumn";
    case ErrorKind::unknown_label:      return "UnknownLabel";
    case ErrorKind::malformed_row:      return "MalformedRow";
    case ErrorKind::duplicate_followup: return "DuplicateFollowup";
    case ErrorKind::too_few_records:    return "TooFewRecords";
    case ErrorKind::empty_input:        return "EmptyInput";
    case ErrorKind::io_error:           return "IoError";
    case ErrorKind::schema_mismatch:    return "SchemaMismatch";
    case ErrorKind::decode_error:       return "DecodeError";
    case ErrorKind::unknown_backbone:   return "UnknownBackbone";
    case ErrorKind::config_error:       return "ConfigError";
    case ErrorKind::numerical_error:    return "NumericalError";
    case ErrorKind::shape_mismatch:     return "ShapeMismatch";
    case ErrorKind::version_mismatch:   return "VersionMismatch";
    case ErrorKind::length_mismatch:    return "LengthMismatch";
    case ErrorKind::degenerate_classes: return "DegenerateClasses";
  }
  return "Unknown";
}

/// All library failures surface as this exception; `kind` carries the
/// machine-readable category, what() the full "Kind: detail" message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + detail),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& detail) {
  throw Error(kind, detail);
}

}  // namespace xrseq
