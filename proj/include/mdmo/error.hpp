#pragma once

#include <stdexcept>
#include <string>

namespace mdmo {

enum class ErrorCode {
  kInvalidArgument,
  kContractViolation,
  kNumericFailure,
  kDomainError,
  kInvalidState,
  kImpossibleTrajectory,
  kInfiniteKl,
  kDeterminism,
  kInstanceTooLarge,
  kParse,
  kValidation,
  kIo,
  kConfig,
  kChecksum,
};

const char* error_code_name(ErrorCode code);

/// Base exception for every failure raised by the library. The C API maps
/// `code()` onto its status enum.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Config errors carry the offending field path so the CLI can name it.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(ErrorCode::kConfig, field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorCode::kInvalidArgument, message);
}

}  // namespace mdmo
