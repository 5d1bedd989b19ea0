#include "fedgate/gateway/openai.hpp"

#include "fedgate/errors.hpp"

namespace fedgate::gateway {

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::kValidation, msg); }

void parse_sampling(const json& body, TaskPayload& p) {
  if (body.contains("max_tokens") && !body["max_tokens"].is_null()) {
    if (!body["max_tokens"].is_number_integer()) invalid("max_tokens must be an integer");
    const auto v = body["max_tokens"].get<std::int64_t>();
    if (v < 1) invalid("max_tokens must be >= 1");
    if (v > 1'000'000) invalid("max_tokens is too large");
    p.max_tokens = static_cast<int>(v);
  }
  if (body.contains("temperature") && !body["temperature"].is_null()) {
    if (!body["temperature"].is_number()) invalid("temperature must be a number");
    p.temperature = body["temperature"].get<double>();
    if (p.temperature < 0.0 || p.temperature > 2.0) invalid("temperature must be within [0, 2]");
  }
  if (body.contains("stream") && !body["stream"].is_null()) {
    if (!body["stream"].is_boolean()) invalid("stream must be a boolean");
    p.stream = body["stream"].get<bool>();
  }
  if (body.contains("seed") && body["seed"].is_number_integer()) p.seed = body["seed"].get<std::uint64_t>();
  // Benchmark extension: requested output length for the mock engine.
  if (body.contains("target_tokens") && !body["target_tokens"].is_null()) {
    if (!body["target_tokens"].is_number_integer() || body["target_tokens"].get<std::int64_t>() < 0) {
      invalid("target_tokens must be a non-negative integer");
    }
    p.target_tokens = body["target_tokens"].get<int>();
  }
}

void require_model(const json& body) {
  if (!body.is_object()) invalid("request body must be a JSON object");
  if (!body.contains("model") || !body["model"].is_string() || body["model"].get<std::string>().empty()) {
    invalid("model is required");
  }
}

}  // namespace

TaskPayload parse_chat_request(const json& body) {
  require_model(body);
  TaskPayload p;
  if (!body.contains("messages") || !body["messages"].is_array() || body["messages"].empty()) {
    invalid("messages must be a non-empty array");
  }
  for (const auto& m : body["messages"]) {
    if (!m.is_object() || !m.contains("role") || !m["role"].is_string()) invalid("each message needs a role");
    ChatMessage msg;
    msg.role = m["role"].get<std::string>();
    if (m.contains("content")) {
      if (m["content"].is_string()) {
        msg.content = m["content"].get<std::string>();
      } else if (m["content"].is_array()) {
        for (const auto& part : m["content"]) {
          if (part.is_object() && part.value("type", "") == "text") msg.content += part.value("text", "");
        }
      } else if (!m["content"].is_null()) {
        invalid("message content must be a string or an array of parts");
      }
    }
    p.messages.push_back(std::move(msg));
  }
  parse_sampling(body, p);
  p.raw_body = body.dump();
  return p;
}

TaskPayload parse_completion_request(const json& body) {
  require_model(body);
  TaskPayload p;
  if (!body.contains("prompt")) invalid("prompt is required");
  const auto& prompt = body["prompt"];
  if (prompt.is_string()) {
    p.prompt = prompt.get<std::string>();
  } else if (prompt.is_array() && prompt.size() == 1 && prompt[0].is_string()) {
    p.prompt = prompt[0].get<std::string>();
  } else {
    invalid("prompt must be a string");
  }
  if (p.prompt.empty()) invalid("prompt must not be empty");
  parse_sampling(body, p);
  p.raw_body = body.dump();
  return p;
}

TaskPayload parse_embedding_request(const json& body) {
  require_model(body);
  TaskPayload p;
  if (!body.contains("input")) invalid("input is required");
  const auto& input = body["input"];
  if (input.is_string()) {
    p.inputs.push_back(input.get<std::string>());
  } else if (input.is_array()) {
    if (input.empty()) invalid("input must not be an empty array");
    for (const auto& s : input) {
      if (!s.is_string()) invalid("input array must contain strings");
      p.inputs.push_back(s.get<std::string>());
    }
  } else {
    invalid("input must be a string or an array of strings");
  }
  p.raw_body = body.dump();
  return p;
}

TaskPayload parse_request(TaskKind kind, const json& body) {
  switch (kind) {
    case TaskKind::kChat: return parse_chat_request(body);
    case TaskKind::kCompletion: return parse_completion_request(body);
    case TaskKind::kEmbedding: return parse_embedding_request(body);
  }
  invalid("unsupported request kind");
}

void check_against_model(TaskKind kind, const TaskPayload& payload, const router::ModelSpec& model) {
  const bool embedding_model = model.kind == router::ModelKind::kEmbedding;
  if ((kind == TaskKind::kEmbedding) != embedding_model) {
    invalid("model " + model.name + (embedding_model ? " only serves embeddings" : " does not serve embeddings"));
  }
  if (payload.max_tokens > model.max_output_tokens) {
    invalid("max_tokens " + std::to_string(payload.max_tokens) + " exceeds the model limit of " +
            std::to_string(model.max_output_tokens));
  }
}

TaskKind kind_for_path(std::string_view path) {
  if (path == "/v1/completions") return TaskKind::kCompletion;
  if (path == "/v1/embeddings") return TaskKind::kEmbedding;
  return TaskKind::kChat;
}

std::string_view path_for_kind(TaskKind kind) {
  switch (kind) {
    case TaskKind::kChat: return "/v1/chat/completions";
    case TaskKind::kCompletion: return "/v1/completions";
    case TaskKind::kEmbedding: return "/v1/embeddings";
  }
  return "/v1/chat/completions";
}

json usage_json(const Usage& u) {
  return json{{"prompt_tokens", u.prompt_tokens},
              {"completion_tokens", u.completion_tokens},
              {"total_tokens", u.total_tokens()}};
}

json chat_completion_json(const std::string& id, const std::string& model, std::int64_t created,
                          const InferenceResult& r) {
  return json{{"id", id},
              {"object", "chat.completion"},
              {"created", created},
              {"model", model},
              {"choices",
               json::array({json{{"index", 0},
                                 {"message", {{"role", "assistant"}, {"content", r.text}}},
                                 {"finish_reason", r.finish_reason}}})},
              {"usage", usage_json(r.usage)}};
}

json text_completion_json(const std::string& id, const std::string& model, std::int64_t created,
                          const InferenceResult& r) {
  return json{{"id", id},
              {"object", "text_completion"},
              {"created", created},
              {"model", model},
              {"choices", json::array({json{{"index", 0},
                                            {"text", r.text},
                                            {"logprobs", nullptr},
                                            {"finish_reason", r.finish_reason}}})},
              {"usage", usage_json(r.usage)}};
}

json embedding_list_json(const std::string& model, const InferenceResult& r) {
  json data = json::array();
  for (std::size_t i = 0; i < r.embeddings.size(); ++i) {
    data.push_back(json{{"object", "embedding"}, {"index", i}, {"embedding", r.embeddings[i]}});
  }
  return json{{"object", "list"},
              {"data", data},
              {"model", model},
              {"usage", {{"prompt_tokens", r.usage.prompt_tokens}, {"total_tokens", r.usage.total_tokens()}}}};
}

json response_json(TaskKind kind, const std::string& id, const std::string& model, std::int64_t created,
                   const InferenceResult& r) {
  switch (kind) {
    case TaskKind::kChat: return chat_completion_json(id, model, created, r);
    case TaskKind::kCompletion: return text_completion_json(id, model, created, r);
    case TaskKind::kEmbedding: return embedding_list_json(model, r);
  }
  return json::object();
}

json stream_chunk_json(TaskKind kind, const std::string& id, const std::string& model, std::int64_t created,
                       std::string_view piece, int index, std::optional<std::string_view> finish_reason) {
  json finish = finish_reason ? json(std::string(*finish_reason)) : json(nullptr);
  if (kind == TaskKind::kCompletion) {
    return json{{"id", id},
                {"object", "text_completion"},
                {"created", created},
                {"model", model},
                {"choices", json::array({json{{"index", 0},
                                              {"text", std::string(piece)},
                                              {"logprobs", nullptr},
                                              {"finish_reason", finish}}})}};
  }
  json delta = {{"content", std::string(piece)}};
  if (index == 0) delta["role"] = "assistant";
  return json{{"id", id},
              {"object", "chat.completion.chunk"},
              {"created", created},
              {"model", model},
              {"choices", json::array({json{{"index", 0}, {"delta", delta}, {"finish_reason", finish}}})}};
}

json error_json(const ApiError& e) {
  return json{{"error", {{"message", e.message}, {"type", std::string(to_string(e.code))}, {"code", e.status()}}}};
}

namespace {

std::string check_usage(const json& u, bool embedding) {
  if (!u.is_object()) return "usage must be an object";
  for (const char* k : {"prompt_tokens", "total_tokens"}) {
    if (!u.contains(k) || !u[k].is_number_integer()) return std::string("usage.") + k + " must be an integer";
  }
  if (embedding) return {};
  if (!u.contains("completion_tokens") || !u["completion_tokens"].is_number_integer()) {
    return "usage.completion_tokens must be an integer";
  }
  if (u["prompt_tokens"].get<int>() + u["completion_tokens"].get<int>() != u["total_tokens"].get<int>()) {
    return "usage.total_tokens must equal prompt_tokens + completion_tokens";
  }
  return {};
}

}  // namespace

std::string check_response_shape(TaskKind kind, const json& b) {
  if (!b.is_object()) return "body must be an object";
  if (kind == TaskKind::kEmbedding) {
    if (b.value("object", "") != "list") return "object must be \"list\"";
    if (!b.contains("data") || !b["data"].is_array()) return "data must be an array";
    for (const auto& d : b["data"]) {
      if (d.value("object", "") != "embedding") return "data[].object must be \"embedding\"";
      if (!d.contains("index") || !d["index"].is_number_integer()) return "data[].index must be an integer";
      if (!d.contains("embedding") || !d["embedding"].is_array()) return "data[].embedding must be an array";
    }
    if (!b.contains("model") || !b["model"].is_string()) return "model must be a string";
    return check_usage(b.value("usage", json()), true);
  }
  const std::string object = kind == TaskKind::kChat ? "chat.completion" : "text_completion";
  if (!b.contains("id") || !b["id"].is_string()) return "id must be a string";
  if (b.value("object", "") != object) return "object must be \"" + object + "\"";
  if (!b.contains("created") || !b["created"].is_number_integer()) return "created must be an integer";
  if (!b.contains("model") || !b["model"].is_string()) return "model must be a string";
  if (!b.contains("choices") || !b["choices"].is_array() || b["choices"].empty()) return "choices must be non-empty";
  for (const auto& c : b["choices"]) {
    if (!c.contains("index") || !c["index"].is_number_integer()) return "choices[].index must be an integer";
    if (!c.contains("finish_reason") || !c["finish_reason"].is_string()) return "choices[].finish_reason must be a string";
    if (kind == TaskKind::kChat) {
      if (!c.contains("message") || !c["message"].is_object()) return "choices[].message must be an object";
      if (c["message"].value("role", "") != "assistant") return "choices[].message.role must be assistant";
      if (!c["message"].contains("content") || !c["message"]["content"].is_string()) {
        return "choices[].message.content must be a string";
      }
    } else if (!c.contains("text") || !c["text"].is_string()) {
      return "choices[].text must be a string";
    }
  }
  return check_usage(b.value("usage", json()), false);
}

std::string check_chunk_shape(TaskKind kind, const json& c) {
  if (!c.is_object()) return "chunk must be an object";
  const std::string object = kind == TaskKind::kChat ? "chat.completion.chunk" : "text_completion";
  if (c.value("object", "") != object) return "object must be \"" + object + "\"";
  if (!c.contains("id") || !c["id"].is_string()) return "id must be a string";
  if (!c.contains("choices") || !c["choices"].is_array() || c["choices"].size() != 1) return "one choice expected";
  const auto& ch = c["choices"][0];
  if (!ch.contains("finish_reason") || !(ch["finish_reason"].is_null() || ch["finish_reason"].is_string())) {
    return "finish_reason must be null or a string";
  }
  if (kind == TaskKind::kChat) {
    if (!ch.contains("delta") || !ch["delta"].is_object()) return "delta must be an object";
  } else if (!ch.contains("text") || !ch["text"].is_string()) {
    return "text must be a string";
  }
  return {};
}

}  // namespace fedgate::gateway
