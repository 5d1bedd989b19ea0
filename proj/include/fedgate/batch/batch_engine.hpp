#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fedgate/auth/token.hpp"
#include "fedgate/batch/file_store.hpp"
#include "fedgate/fabric/fabric.hpp"
#include "fedgate/router/registry.hpp"
#include "fedgate/router/selection.hpp"
#include "fedgate/task.hpp"
#include "fedgate/telemetry/store.hpp"

namespace fedgate::batch {

enum class BatchStatus { kValidating, kQueued, kInProgress, kCompleted, kFailed, kCancelled };

std::string_view to_string(BatchStatus s);
bool is_terminal(BatchStatus s);

struct BatchLine {
  int line_no = 0;  // 1-based line in the uploaded file
  std::string custom_id;
  std::string url;
  TaskKind kind = TaskKind::kChat;
  std::string model;  // as written in the body; may be empty
  TaskPayload payload;
};

struct LineError {
  int line_no = 0;
  std::string message;
};

struct ParsedBatch {
  std::vector<BatchLine> lines;
  std::vector<LineError> errors;
};

/// Parses a JSON Lines batch file. Each non-blank line must be an object with
/// a string `custom_id` and an object `body` holding a complete OpenAI
/// request; `url` defaults to the chat route. custom_ids must be unique.
ParsedBatch parse_jsonl(std::string_view content);

struct BatchCounts {
  int total = 0;
  int completed = 0;
  int failed = 0;
};

struct BatchJob {
  std::string id;
  std::string subject;
  std::string model;
  std::string endpoint;
  std::string input_ref;
  BatchStatus status = BatchStatus::kValidating;
  BatchCounts counts;
  Instant created_at{};
  std::optional<Instant> started_at;
  std::optional<Instant> finished_at;
  std::string output_ref;
  std::string error_ref;
  fabric::InstanceId instance = fabric::kNoInstance;
  std::string failure;
  std::int64_t output_tokens = 0;
};

/// `unix_offset_s` converts loop seconds to unix seconds for the wire.
nlohmann::json to_json(const BatchJob& job, double unix_offset_s);

struct BatchConfig {
  std::size_t max_lines = 100000;
};

/// Offline bulk mode. Every batch runs on its own dedicated instance, which
/// is released once the last line finishes.
///
/// Not thread-safe: call from the fabric's loop.
class BatchEngine {
 public:
  using Observer = std::function<void(const BatchJob&)>;

  BatchEngine(EventLoop& loop, const router::Registry& registry, fabric::Fabric& fabric,
              router::ClusterProber& prober, FileStore& files, telemetry::TelemetryStore* telemetry,
              BatchConfig config = {});

  /// Validates and stores the input, then requests a dedicated instance.
  /// Throws Error(kValidation) listing offending line numbers, and
  /// Error(kUnknownModel)/Error(kForbidden) for the model.
  const BatchJob& submit(const auth::Principal& principal, std::string_view content, std::string model = {});

  /// Throws Error(kNotFound) when the batch is missing or belongs to someone
  /// else (admins see every batch).
  const BatchJob& get(const std::string& id, const auth::Principal& principal, bool admin = false) const;
  std::vector<BatchJob> list(const auth::Principal& principal, bool admin = false) const;
  const BatchJob& cancel(const std::string& id, const auth::Principal& principal, bool admin = false);

  /// Output and error lines produced so far, output first.
  std::string results(const std::string& id, const auth::Principal& principal, bool admin = false) const;

  const BatchJob* find(const std::string& id) const;
  std::size_t size() const { return jobs_.size(); }
  void set_observer(Observer fn) { observer_ = std::move(fn); }

 private:
  struct Run {
    std::vector<BatchLine> lines;
    std::vector<TaskPtr> tasks;
    std::vector<char> done;  // per line
    std::string output;
    std::string errors;
  };

  BatchJob& job(const std::string& id);
  void on_running(const std::string& id);
  void on_failed(const std::string& id, const ApiError& err);
  void line_done(const std::string& id, std::size_t index, const InferenceTask& task, const TaskOutcome& outcome);
  void line_error(BatchJob& j, Run& run, std::size_t index, const ApiError& err);
  void abandon(BatchJob& j, BatchStatus status, const ApiError& err);
  void maybe_finish(const std::string& id);
  void finish(BatchJob& j, BatchStatus status);
  void set_status(BatchJob& j, BatchStatus s);

  EventLoop& loop_;
  const router::Registry& registry_;
  fabric::Fabric& fabric_;
  router::ClusterProber& prober_;
  FileStore& files_;
  telemetry::TelemetryStore* telemetry_;
  BatchConfig config_;
  IdGenerator ids_;
  std::map<std::string, BatchJob> jobs_;
  std::map<std::string, Run> runs_;
  Observer observer_;
};

}  // namespace fedgate::batch
