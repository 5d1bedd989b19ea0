#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedgate/auth/token.hpp"
#include "fedgate/errors.hpp"
#include "fedgate/sim/time.hpp"

namespace fedgate {

enum class TaskKind { kChat, kCompletion, kEmbedding };

std::string_view to_string(TaskKind kind);

struct ChatMessage {
  std::string role;
  std::string content;
};

/// Normalized request body shared by all three OpenAI routes.
struct TaskPayload {
  std::vector<ChatMessage> messages;  // chat
  std::string prompt;                 // completion
  std::vector<std::string> inputs;    // embedding
  int max_tokens = 0;                 // 0 = not supplied
  double temperature = 1.0;
  bool stream = false;
  // Harness-supplied output length; the mock emits min(max_tokens, target).
  std::optional<int> target_tokens;
  std::uint64_t seed = 0;
  // Raw request body, forwarded as-is by passthrough backends.
  std::string raw_body;
};

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
  int total_tokens() const { return prompt_tokens + completion_tokens; }
};

struct InferenceResult {
  std::string task_id;
  std::string text;
  std::vector<std::vector<float>> embeddings;
  Usage usage;
  std::string finish_reason = "stop";
  // Passthrough backends return the upstream body verbatim.
  bool verbatim = false;
  std::string raw_body;
};

using TaskOutcome = std::variant<InferenceResult, ApiError>;

/// One request flowing gateway -> router -> fabric -> backend.
///
/// The completion handle is resolved exactly once; later attempts to resolve
/// are counted and dropped.
class InferenceTask {
 public:
  using TokenSink = std::function<void(std::string_view piece, int index)>;
  using DoneSink = std::function<void(const TaskOutcome&)>;

  std::string id;
  TaskKind kind = TaskKind::kChat;
  std::string model;
  std::string function = "infer_v1";
  TaskPayload payload;
  std::string subject;
  std::string endpoint;
  std::int64_t instance_id = -1;  // last instance the task executed on

  Instant arrived_at{};
  std::optional<Instant> dispatched_at;
  std::optional<Instant> started_at;
  std::optional<Instant> completed_at;

  int attempts = 0;
  int tokens_delivered = 0;

  TokenSink on_token;
  DoneSink on_done;

  bool resolved() const { return resolved_; }
  /// Returns false (and counts a violation) when already resolved.
  bool resolve(const TaskOutcome& outcome, Instant now);
  void deliver_token(std::string_view piece);

  static std::uint64_t double_resolutions();

 private:
  bool resolved_ = false;
};

using TaskPtr = std::shared_ptr<InferenceTask>;

/// Sortable unique id: 48-bit millisecond timestamp then 80 random bits,
/// Crockford base32 (ULID layout).
std::string make_ulid(std::uint64_t millis, std::uint64_t rand_hi, std::uint64_t rand_lo);

class IdGenerator {
 public:
  explicit IdGenerator(std::uint64_t seed = 1);
  std::string next(std::string_view prefix, Instant now);

 private:
  std::uint64_t state_;
};

}  // namespace fedgate
