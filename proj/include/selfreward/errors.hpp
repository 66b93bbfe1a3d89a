#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace selfreward {

enum class ErrorCode {
  duplicate_id,
  invalid_record,
  invalid_param,
  precondition,
  no_score,
  out_of_range,
  unscorable,
  empty_eft,
  insufficient_seed,
  empty_prompt,
  empty_aift,
  empty_target,
  unknown_token,
  context_overflow,
  numerical_error,
  diverged,
  timeout,
  malformed_response,
  http_error,
  not_found,
  io_error,
  config_error,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::duplicate_id: return "DuplicateId";
    case ErrorCode::invalid_record: return "InvalidRecord";
    case ErrorCode::invalid_param: return "InvalidParam";
    case ErrorCode::precondition: return "PreconditionViolation";
    case ErrorCode::no_score: return "NoScore";
    case ErrorCode::out_of_range: return "OutOfRange";
    case ErrorCode::unscorable: return "Unscorable";
    case ErrorCode::empty_eft: return "EmptyEft";
    case ErrorCode::insufficient_seed: return "InsufficientSeed";
    case ErrorCode::empty_prompt: return "EmptyPrompt";
    case ErrorCode::empty_aift: return "EmptyAift";
    case ErrorCode::empty_target: return "EmptyTarget";
    case ErrorCode::unknown_token: return "UnknownToken";
    case ErrorCode::context_overflow: return "ContextOverflow";
    case ErrorCode::numerical_error: return "NumericalError";
    case ErrorCode::diverged: return "Diverged";
    case ErrorCode::timeout: return "Timeout";
    case ErrorCode::malformed_response: return "MalformedResponse";
    case ErrorCode::http_error: return "HttpError";
    case ErrorCode::not_found: return "NotFound";
    case ErrorCode::io_error: return "IoError";
    case ErrorCode::config_error: return "ConfigError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Judge output that could not be turned into a score. Keeps the raw text for logging.
class VerdictError : public Error {
 public:
  VerdictError(ErrorCode code, std::string raw)
      : Error(code, "judge output rejected"), raw_(std::move(raw)) {}

  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

class HttpError : public Error {
 public:
  HttpError(int status, const std::string& what)
      : Error(ErrorCode::http_error, "status " + std::to_string(status) + ": " + what),
        status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, const std::string& what) {
  if (!condition) fail(ErrorCode::precondition, what);
}

}  // namespace selfreward
