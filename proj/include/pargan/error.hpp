#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pargan {

enum class ErrorCode {
  io,
  parse,
  validation,
  config,
  shape,
  numeric,
  nonfinite,
  usage,
  busy,
  internal,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::io: return "E_IO";
    case ErrorCode::parse: return "E_PARSE";
    case ErrorCode::validation: return "E_VALIDATION";
    case ErrorCode::config: return "E_CONFIG";
    case ErrorCode::shape: return "E_SHAPE";
    case ErrorCode::numeric: return "E_NUMERIC";
    case ErrorCode::nonfinite: return "E_NONFINITE";
    case ErrorCode::usage: return "E_USAGE";
    case ErrorCode::busy: return "E_BUSY";
    case ErrorCode::internal: return "E_INTERNAL";
  }
  return "E_UNKNOWN";
}

/// Every failure raised by the library carries a stable machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message) : std::runtime_error(message), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pargan
