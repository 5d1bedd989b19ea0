#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "fedgate/router/registry.hpp"
#include "fedgate/task.hpp"

namespace fedgate::gateway {

/// Structural validation and normalization of OpenAI request bodies. Throw
/// Error(kValidation) with a message naming the offending field.
TaskPayload parse_chat_request(const nlohmann::json& body);
TaskPayload parse_completion_request(const nlohmann::json& body);
TaskPayload parse_embedding_request(const nlohmann::json& body);
TaskPayload parse_request(TaskKind kind, const nlohmann::json& body);

/// Model-dependent checks (request kind vs model kind, max_tokens cap).
void check_against_model(TaskKind kind, const TaskPayload& payload, const router::ModelSpec& model);

TaskKind kind_for_path(std::string_view path);
std::string_view path_for_kind(TaskKind kind);

nlohmann::json usage_json(const Usage& u);
nlohmann::json chat_completion_json(const std::string& id, const std::string& model, std::int64_t created,
                                    const InferenceResult& r);
nlohmann::json text_completion_json(const std::string& id, const std::string& model, std::int64_t created,
                                    const InferenceResult& r);
nlohmann::json embedding_list_json(const std::string& model, const InferenceResult& r);
nlohmann::json response_json(TaskKind kind, const std::string& id, const std::string& model, std::int64_t created,
                             const InferenceResult& r);

/// One streamed delta. Chat chunks carry the assistant role on index 0.
nlohmann::json stream_chunk_json(TaskKind kind, const std::string& id, const std::string& model,
                                 std::int64_t created, std::string_view piece, int index,
                                 std::optional<std::string_view> finish_reason);

nlohmann::json error_json(const ApiError& e);

/// Checks a 200 response body against the documented response shape.
/// Returns an empty string when it conforms, else the first violation.
std::string check_response_shape(TaskKind kind, const nlohmann::json& body);
std::string check_chunk_shape(TaskKind kind, const nlohmann::json& chunk);

}  // namespace fedgate::gateway
