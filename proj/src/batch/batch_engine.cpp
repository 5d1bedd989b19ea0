#include "fedgate/batch/batch_engine.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "fedgate/errors.hpp"
#include "fedgate/gateway/openai.hpp"
#include "fedgate/telemetry/usage.hpp"

namespace fedgate::batch {

using nlohmann::json;

std::string_view to_string(BatchStatus s) {
  switch (s) {
    case BatchStatus::kValidating: return "validating";
    case BatchStatus::kQueued: return "queued";
    case BatchStatus::kInProgress: return "in_progress";
    case BatchStatus::kCompleted: return "completed";
    case BatchStatus::kFailed: return "failed";
    case BatchStatus::kCancelled: return "cancelled";
  }
  return "failed";
}

bool is_terminal(BatchStatus s) {
  return s == BatchStatus::kCompleted || s == BatchStatus::kFailed || s == BatchStatus::kCancelled;
}

ParsedBatch parse_jsonl(std::string_view content) {
  ParsedBatch out;
  std::set<std::string> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view raw = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    if (raw.find_first_not_of(" \t") == std::string_view::npos) {
      if (end == content.size()) break;
      continue;
    }
    auto fail = [&](std::string msg) { out.errors.push_back({line_no, std::move(msg)}); };
    json j = json::parse(raw, nullptr, false);
    if (j.is_discarded()) {
      fail("invalid JSON");
    } else if (!j.is_object()) {
      fail("line must be a JSON object");
    } else if (!j.contains("custom_id") || !j["custom_id"].is_string() || j["custom_id"].get<std::string>().empty()) {
      fail("custom_id must be a non-empty string");
    } else if (!j.contains("body") || !j["body"].is_object()) {
      fail("body must be an object");
    } else {
      BatchLine line;
      line.line_no = line_no;
      line.custom_id = j["custom_id"].get<std::string>();
      line.url = j.value("url", std::string(gateway::path_for_kind(TaskKind::kChat)));
      if (line.url != "/v1/chat/completions" && line.url != "/v1/completions" && line.url != "/v1/embeddings") {
        fail("unsupported url " + line.url);
      } else if (!seen.insert(line.custom_id).second) {
        fail("duplicate custom_id " + line.custom_id);
      } else {
        line.kind = gateway::kind_for_path(line.url);
        json body = j["body"];
        line.model = body.value("model", "");
        // The batch names the model; lines may leave it out.
        if (line.model.empty()) body["model"] = "_";
        try {
          line.payload = gateway::parse_request(line.kind, body);
          line.payload.stream = false;
          out.lines.push_back(std::move(line));
        } catch (const Error& e) {
          fail(e.what());
        }
      }
    }
    if (end == content.size()) break;
  }
  return out;
}

json to_json(const BatchJob& job, double unix_offset_s) {
  auto ts = [&](const std::optional<Instant>& t) -> json {
    if (!t) return nullptr;
    return static_cast<std::int64_t>(std::floor(to_seconds(t->time_since_epoch()) + unix_offset_s));
  };
  json j = {{"id", job.id},
            {"object", "batch"},
            {"model", job.model},
            {"endpoint", job.endpoint},
            {"input_file_id", job.input_ref},
            {"status", std::string(to_string(job.status))},
            {"request_counts", {{"total", job.counts.total},
                                {"completed", job.counts.completed},
                                {"failed", job.counts.failed}}},
            {"created_at", ts(job.created_at)},
            {"in_progress_at", ts(job.started_at)},
            {"finished_at", ts(job.finished_at)},
            {"output_file_id", job.output_ref.empty() ? json(nullptr) : json(job.output_ref)},
            {"error_file_id", job.error_ref.empty() ? json(nullptr) : json(job.error_ref)},
            {"output_tokens", job.output_tokens}};
  if (!job.failure.empty()) j["errors"] = {{"message", job.failure}};
  return j;
}

BatchEngine::BatchEngine(EventLoop& loop, const router::Registry& registry, fabric::Fabric& fabric,
                         router::ClusterProber& prober, FileStore& files, telemetry::TelemetryStore* telemetry,
                         BatchConfig config)
    : loop_(loop),
      registry_(registry),
      fabric_(fabric),
      prober_(prober),
      files_(files),
      telemetry_(telemetry),
      config_(config),
      ids_(0xba7c4) {}

BatchJob& BatchEngine::job(const std::string& id) {
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw Error(ErrorCode::kNotFound, "batch " + id + " not found");
  return it->second;
}

const BatchJob* BatchEngine::find(const std::string& id) const {
  auto it = jobs_.find(id);
  return it == jobs_.end() ? nullptr : &it->second;
}

void BatchEngine::set_status(BatchJob& j, BatchStatus s) {
  j.status = s;
  if (observer_) observer_(j);
}

const BatchJob& BatchEngine::submit(const auth::Principal& principal, std::string_view content, std::string model) {
  ParsedBatch parsed = parse_jsonl(content);
  if (!parsed.errors.empty()) {
    std::ostringstream msg;
    msg << "invalid batch input:";
    std::size_t shown = 0;
    for (const auto& e : parsed.errors) {
      if (shown++ == 20) {
        msg << " ... (" << parsed.errors.size() << " bad lines)";
        break;
      }
      msg << " line " << e.line_no << ": " << e.message << ";";
    }
    throw Error(ErrorCode::kValidation, msg.str());
  }
  if (parsed.lines.empty()) throw Error(ErrorCode::kValidation, "batch input contains no requests");
  if (parsed.lines.size() > config_.max_lines) {
    throw Error(ErrorCode::kValidation, "batch has " + std::to_string(parsed.lines.size()) +
                                            " requests; the limit is " + std::to_string(config_.max_lines));
  }
  if (model.empty()) model = parsed.lines.front().model;
  if (model.empty()) throw Error(ErrorCode::kValidation, "no model given for the batch");
  for (const auto& l : parsed.lines) {
    if (!l.model.empty() && l.model != model) {
      throw Error(ErrorCode::kValidation,
                  "line " + std::to_string(l.line_no) + ": model " + l.model + " differs from batch model " + model);
    }
  }
  auto entry = registry_.model(model);
  if (!entry) throw Error(ErrorCode::kUnknownModel, "model '" + model + "' is not registered");
  if (registry_.authorize(principal, model) != auth::Decision::kAllow) {
    throw Error(ErrorCode::kForbidden, "not allowed to use model '" + model + "'");
  }

  BatchJob j;
  j.id = ids_.next("batch_", loop_.now());
  j.subject = principal.subject;
  j.model = model;
  j.input_ref = files_.put(content);
  j.created_at = loop_.now();
  j.counts.total = static_cast<int>(parsed.lines.size());
  const std::string id = j.id;
  auto& stored = jobs_.emplace(id, std::move(j)).first->second;
  runs_[id].lines = std::move(parsed.lines);
  if (observer_) observer_(stored);

  // Batches never share online instances, so only node availability and
  // configuration order matter here.
  stored.endpoint = router::route(model, registry_, {}, prober_);
  fabric::DedicatedCallbacks cb;
  cb.on_running = [this, id](fabric::InstanceId) { on_running(id); };
  cb.on_failed = [this, id](fabric::InstanceId, const ApiError& e) { on_failed(id, e); };
  try {
    stored.instance = fabric_.launch_dedicated(model, stored.endpoint, std::move(cb));
  } catch (const Error& e) {
    stored.failure = e.what();
    finish(stored, BatchStatus::kFailed);
    throw;
  }
  set_status(stored, BatchStatus::kQueued);
  return stored;
}

void BatchEngine::on_running(const std::string& id) {
  BatchJob& j = job(id);
  if (j.status != BatchStatus::kQueued) return;
  j.started_at = loop_.now();
  set_status(j, BatchStatus::kInProgress);
  Run& run = runs_.at(id);
  run.done.assign(run.lines.size(), 0);
  auto entry = registry_.model(j.model);
  run.tasks.reserve(run.lines.size());
  for (std::size_t i = 0; i < run.lines.size(); ++i) {
    const BatchLine& line = run.lines[i];
    if (!entry) {
      line_error(j, run, i, ApiError{ErrorCode::kUnknownModel, "model removed"});
      continue;
    }
    try {
      gateway::check_against_model(line.kind, line.payload, entry->spec);
    } catch (const Error& e) {
      line_error(j, run, i, e.api_error());
      continue;
    }
    auto task = std::make_shared<InferenceTask>();
    const char* prefix = line.kind == TaskKind::kChat         ? "chatcmpl-"
                         : line.kind == TaskKind::kCompletion ? "cmpl-"
                                                              : "embd-";
    task->id = ids_.next(prefix, loop_.now());
    task->kind = line.kind;
    task->model = j.model;
    task->function = line.kind == TaskKind::kEmbedding ? "embed_v1" : "infer_v1";
    task->payload = line.payload;
    task->subject = j.subject;
    task->arrived_at = loop_.now();
    InferenceTask* raw = task.get();
    task->on_done = [this, id, i, raw](const TaskOutcome& outcome) { line_done(id, i, *raw, outcome); };
    run.tasks.push_back(std::move(task));
  }
  const fabric::InstanceId inst = j.instance;
  for (auto& t : run.tasks) fabric_.execute(inst, t);
  maybe_finish(id);
}

void BatchEngine::line_error(BatchJob& j, Run& run, std::size_t index, const ApiError& err) {
  if (run.done[index]) return;
  run.done[index] = 1;
  ++j.counts.failed;
  json line = {{"custom_id", run.lines[index].custom_id}, {"error", gateway::error_json(err)["error"]}};
  run.errors += line.dump();
  run.errors += '\n';
}

void BatchEngine::line_done(const std::string& id, std::size_t index, const InferenceTask& task,
                            const TaskOutcome& outcome) {
  BatchJob& j = job(id);
  if (telemetry_) telemetry_->record(telemetry::make_usage_record(task, outcome, fabric_.instance(task.instance_id)));
  if (j.status != BatchStatus::kInProgress) return;
  Run& run = runs_.at(id);
  if (run.done[index]) return;
  const BatchLine& line = run.lines[index];
  if (const auto* r = std::get_if<InferenceResult>(&outcome)) {
    run.done[index] = 1;
    ++j.counts.completed;
    j.output_tokens += r->usage.completion_tokens;
    const auto created = static_cast<std::int64_t>(to_seconds(loop_.now().time_since_epoch()));
    json body = r->verbatim ? json::parse(r->raw_body, nullptr, false)
                            : gateway::response_json(line.kind, task.id, j.model, created, *r);
    json out = {{"custom_id", line.custom_id}, {"response", body}};
    run.output += out.dump();
    run.output += '\n';
  } else {
    line_error(j, run, index, std::get<ApiError>(outcome));
  }
  maybe_finish(id);
}

void BatchEngine::maybe_finish(const std::string& id) {
  BatchJob& j = job(id);
  if (j.status != BatchStatus::kInProgress) return;
  if (j.counts.completed + j.counts.failed < j.counts.total) return;
  finish(j, BatchStatus::kCompleted);
}

void BatchEngine::finish(BatchJob& j, BatchStatus status) {
  j.finished_at = loop_.now();
  if (auto it = runs_.find(j.id); it != runs_.end()) {
    Run& run = it->second;
    if (!run.output.empty()) j.output_ref = files_.put(run.output);
    if (!run.errors.empty()) j.error_ref = files_.put(run.errors);
  }
  if (j.instance != fabric::kNoInstance) {
    // Deferred so the fabric finishes the callback that got us here first.
    const fabric::InstanceId inst = j.instance;
    loop_.schedule_after(Duration{0}, [this, inst] {
      const auto* m = fabric_.instance(inst);
      if (m != nullptr && m->state != fabric::InstanceState::kReleased) fabric_.cancel_dedicated(inst);
    });
  }
  set_status(j, status);
}

void BatchEngine::abandon(BatchJob& j, BatchStatus status, const ApiError& err) {
  Run& run = runs_.at(j.id);
  if (run.done.size() != run.lines.size()) run.done.assign(run.lines.size(), 0);
  // Every custom_id still open gets an error line, so output plus errors
  // always cover the whole input.
  for (std::size_t i = 0; i < run.lines.size(); ++i) line_error(j, run, i, err);
  j.status = status;
  for (auto& t : run.tasks) {
    if (!t->resolved()) t->resolve(err, loop_.now());
  }
  finish(j, status);
}

void BatchEngine::on_failed(const std::string& id, const ApiError& err) {
  BatchJob& j = job(id);
  if (is_terminal(j.status)) return;
  j.failure = err.message;
  j.instance = fabric::kNoInstance;
  abandon(j, BatchStatus::kFailed, err);
}

const BatchJob& BatchEngine::cancel(const std::string& id, const auth::Principal& principal, bool admin) {
  (void)get(id, principal, admin);
  BatchJob& j = job(id);
  if (is_terminal(j.status)) return j;
  abandon(j, BatchStatus::kCancelled, ApiError{ErrorCode::kCancelled, "batch cancelled"});
  return j;
}

const BatchJob& BatchEngine::get(const std::string& id, const auth::Principal& principal, bool admin) const {
  auto it = jobs_.find(id);
  if (it == jobs_.end() || (!admin && it->second.subject != principal.subject)) {
    throw Error(ErrorCode::kNotFound, "batch " + id + " not found");
  }
  return it->second;
}

std::vector<BatchJob> BatchEngine::list(const auth::Principal& principal, bool admin) const {
  std::vector<BatchJob> out;
  for (const auto& [_, j] : jobs_) {
    if (admin || j.subject == principal.subject) out.push_back(j);
  }
  return out;
}

std::string BatchEngine::results(const std::string& id, const auth::Principal& principal, bool admin) const {
  const BatchJob& j = get(id, principal, admin);
  auto it = runs_.find(j.id);
  if (it == runs_.end()) return {};
  return it->second.output + it->second.errors;
}

}  // namespace fedgate::batch
