#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace avguard {

enum class ErrorCode {
  kInvalidArgument,
  // command_space
  kNoCommandFound,
  kMalformedCommand,
  kAmbiguousCommand,
  // sensitive_data
  kInvalidRule,
  kZeroWeightSum,
  kSpanMismatch,
  // behavior
  kJudgeUnavailable,
  kUnparsableVerdict,
  kSamplerExhausted,
  // llm_client
  kTimeout,
  kAuthFailure,
  kRateLimited,
  kProtocolError,
  kScriptMiss,
  kVocabLoadError,
  // guardrail / io
  kStoreUnavailable,
  kConfigError,
  kIoError,
};

std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace avguard
