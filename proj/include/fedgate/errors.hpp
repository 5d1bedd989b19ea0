#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedgate {

enum class ErrorCode {
  kInvalidToken,
  kExpiredToken,
  kForbidden,
  kUnknownModel,
  kValidation,
  kRateLimited,
  kNoEndpoint,
  kEndpointDown,
  kBackpressure,
  kTaskFailed,
  kCapacityExceeded,
  kInsufficientResources,
  kInsufficientVram,
  kUnregisteredFunction,
  kBackendUnavailable,
  kUpstreamError,
  kDuplicateModel,
  kUnknownCluster,
  kNotFound,
  kStorageFull,
  kCancelled,
  kTimeout,
  kInternal,
};

std::string_view to_string(ErrorCode code);

/// HTTP status the gateway answers with for a given error.
int http_status(ErrorCode code);

/// Error value carried through completion handles.
struct ApiError {
  ErrorCode code = ErrorCode::kInternal;
  std::string message;
  int status_override = 0;  // e.g. the upstream status for kUpstreamError

  int status() const { return status_override != 0 ? status_override : http_status(code); }
};

/// Exception form of ApiError for synchronous call paths.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, int status_override = 0)
      : std::runtime_error(message), error_{code, message, status_override} {}

  ErrorCode code() const { return error_.code; }
  const ApiError& api_error() const { return error_; }

 private:
  ApiError error_;
};

}  // namespace fedgate
