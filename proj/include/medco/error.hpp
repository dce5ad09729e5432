#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace medco {

enum class ErrorCode {
  invalid_argument,
  io,
  format,          // malformed document or on-disk container
  validation,
  missing_slot,
  unknown_slot,
  parse,           // structured model output could not be parsed
  backend,         // provider failure after retries
  auth,
  missing_fixture,
  precondition,
  not_found,
  state,           // operation not allowed in the session's current phase
  capacity,
  version_mismatch,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised when a structured reply stays unparseable after the reformat retry.
/// Carries the last raw model text so callers can log or persist it.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::string raw)
      : Error(ErrorCode::parse, message), raw_(std::move(raw)) {}

  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

}  // namespace medco
