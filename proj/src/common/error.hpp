#pragma once

#include <stdexcept>
#include <string>

namespace e2eve {

// Mirrored one-to-one by the E2EVE_ERR_* codes of the C API.
enum class ErrorCode : int {
  Ok = 0,
  InvalidArgument = 1,
  IOFailure = 2,
  NoImages = 3,
  MaskShapeMismatch = 4,
  EmptyMask = 5,
  InfeasibleRegion = 6,
  InfeasibleCrop = 7,
  ShapeError = 8,
  InvalidToken = 9,
  DivergenceError = 10,
  SequenceTooLong = 11,
  ModelMismatch = 12,
  InvalidRequest = 13,
  InsufficientData = 14,
  Unsupported = 15,
  FormatError = 16,
  Internal = 99,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace e2eve
