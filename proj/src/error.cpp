#include "mdmo/error.hpp"

namespace mdmo {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return "invalid-argument";
    case ErrorCode::kContractViolation:
      return "contract-violation";
    case ErrorCode::kNumericFailure:
      return "numeric-failure";
    case ErrorCode::kDomainError:
      return "domain-error";
    case ErrorCode::kInvalidState:
      return "invalid-state";
    case ErrorCode::kImpossibleTrajectory:
      return "impossible-trajectory";
    case ErrorCode::kInfiniteKl:
      return "infinite-kl";
    case ErrorCode::kDeterminism:
      return "determinism";
    case ErrorCode::kInstanceTooLarge:
      return "instance-too-large";
    case ErrorCode::kParse:
      return "parse";
    case ErrorCode::kValidation:
      return "validation";
    case ErrorCode::kIo:
      return "io";
    case ErrorCode::kConfig:
      return "config";
    case ErrorCode::kChecksum:
      return "checksum";
  }
  return "unknown";
}

}  // namespace mdmo
