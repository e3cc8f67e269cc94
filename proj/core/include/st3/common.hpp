#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace st3 {

enum class ErrorKind {
  kShapeMismatch,
  kInvalidArgument,
  kNonFinite,
  kIo,
  kBadMagic,
  kTruncatedFile,
  kDimMismatch,
  kConfig,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "shape_mismatch";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kNonFinite: return "non_finite";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kBadMagic: return "bad_magic";
    case ErrorKind::kTruncatedFile: return "truncated_file";
    case ErrorKind::kDimMismatch: return "dim_mismatch";
    case ErrorKind::kConfig: return "config";
  }
  return "unknown";
}

}  // namespace st3
