#include "fedgate/errors.hpp"

namespace fedgate {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidToken: return "invalid_token";
    case ErrorCode::kExpiredToken: return "expired_token";
    case ErrorCode::kForbidden: return "forbidden";
    case ErrorCode::kUnknownModel: return "model_not_found";
    case ErrorCode::kValidation: return "invalid_request";
    case ErrorCode::kRateLimited: return "rate_limited";
    case ErrorCode::kNoEndpoint: return "no_endpoint";
    case ErrorCode::kEndpointDown: return "endpoint_down";
    case ErrorCode::kBackpressure: return "overloaded";
    case ErrorCode::kTaskFailed: return "task_failed";
    case ErrorCode::kCapacityExceeded: return "capacity_exceeded";
    case ErrorCode::kInsufficientResources: return "insufficient_resources";
    case ErrorCode::kInsufficientVram: return "insufficient_vram";
    case ErrorCode::kUnregisteredFunction: return "unregistered_function";
    case ErrorCode::kBackendUnavailable: return "backend_unavailable";
    case ErrorCode::kUpstreamError: return "upstream_error";
    case ErrorCode::kDuplicateModel: return "duplicate_model";
    case ErrorCode::kUnknownCluster: return "unknown_cluster";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kStorageFull: return "storage_full";
    case ErrorCode::kCancelled: return "cancelled";
    case ErrorCode::kTimeout: return "timeout";
    case ErrorCode::kInternal: return "internal_error";
  }
  return "internal_error";
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidToken:
    case ErrorCode::kExpiredToken: return 401;
    case ErrorCode::kForbidden: return 403;
    case ErrorCode::kUnknownModel:
    case ErrorCode::kNoEndpoint:
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kDuplicateModel: return 409;
    case ErrorCode::kValidation: return 422;
    case ErrorCode::kRateLimited: return 429;
    case ErrorCode::kTaskFailed:
    case ErrorCode::kUpstreamError:
    case ErrorCode::kUnregisteredFunction:
    case ErrorCode::kInsufficientVram: return 502;
    case ErrorCode::kEndpointDown:
    case ErrorCode::kBackpressure:
    case ErrorCode::kCapacityExceeded:
    case ErrorCode::kInsufficientResources:
    case ErrorCode::kBackendUnavailable: return 503;
    case ErrorCode::kCancelled: return 499;
    case ErrorCode::kTimeout: return 504;
    default: return 500;
  }
}

}  // namespace fedgate
