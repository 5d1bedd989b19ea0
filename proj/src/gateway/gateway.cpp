#include "fedgate/gateway/gateway.hpp"

#include <algorithm>
#include <cmath>

#include "fedgate/errors.hpp"
#include "fedgate/gateway/openai.hpp"
#include "fedgate/telemetry/usage.hpp"

namespace fedgate::gateway {

using nlohmann::json;

std::string HttpRequest::header(const std::string& name) const {
  auto it = headers.find(name);
  return it == headers.end() ? std::string{} : it->second;
}

std::map<std::string, std::string> parse_query(std::string_view q) {
  std::map<std::string, std::string> out;
  auto decode = [](std::string_view s) {
    std::string r;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '+') {
        r += ' ';
      } else if (s[i] == '%' && i + 2 < s.size()) {
        r += static_cast<char>(std::stoi(std::string(s.substr(i + 1, 2)), nullptr, 16));
        i += 2;
      } else {
        r += s[i];
      }
    }
    return r;
  };
  while (!q.empty()) {
    const auto amp = q.find('&');
    auto part = q.substr(0, amp);
    const auto eq = part.find('=');
    if (!part.empty()) {
      out[decode(part.substr(0, eq))] = eq == std::string_view::npos ? std::string{} : decode(part.substr(eq + 1));
    }
    if (amp == std::string_view::npos) break;
    q.remove_prefix(amp + 1);
  }
  return out;
}

// ---- RecordingSink ----------------------------------------------------------

void RecordingSink::mark_first() {
  if (!first_byte_at && clock_) first_byte_at = clock_();
}

void RecordingSink::mark_finished() {
  finished = true;
  if (clock_) finished_at = clock_();
  if (on_finish) on_finish(*this);
}

void RecordingSink::send(int st, const std::string& ct, std::string b, const Headers& h) {
  mark_first();
  status = st;
  content_type = ct;
  body = std::move(b);
  headers = h;
  mark_finished();
}

void RecordingSink::start_stream() {
  mark_first();
  status = 200;
  content_type = "text/event-stream";
  streaming = true;
}

void RecordingSink::stream_event(std::string data) {
  if (data == "[DONE]") {
    saw_done = true;
    return;
  }
  events.push_back(std::move(data));
}

void RecordingSink::end_stream() { mark_finished(); }

// ---- Gateway ----------------------------------------------------------------

Gateway::Gateway(ServiceConfig config)
    : config_(std::move(config)),
      loop_(config_.clock),
      limiter_(config_.rate_limit),
      files_(config_.batch_store_dir),
      ids_(config_.seed) {
  unix_offset_s_ = auth::unix_offset_for(loop_);
  if (config_.identity_kind == "http") {
    identity_ = std::make_unique<auth::HttpIdentityProvider>(loop_, config_.identity_url);
  } else {
    auto mock = std::make_unique<auth::MockIdentityProvider>(loop_, config_.seed);
    mock->set_delay(config_.identity_delay);
    mock_identity_ = mock.get();
    identity_ = std::move(mock);
  }
  authenticator_ = std::make_unique<auth::Authenticator>(*identity_, [this] { return loop_.now(); }, config_.auth);
  telemetry_ = std::make_unique<telemetry::TelemetryStore>(config_.telemetry);

  for (const auto& ep : config_.endpoints) registry_.add_endpoint(ep);
  for (const auto& m : config_.models) registry_.register_model(m.spec, m.endpoints, m.required_groups);

  fabric_ = std::make_unique<fabric::Fabric>(loop_, registry_, config_.fabric);
  for (const auto& c : config_.clusters) fabric_->add_cluster(c);
  for (const auto& f : config_.faults) {
    fabric_->schedule_fault(fabric::FaultSpec{at_seconds(f.at_s), f.model, f.endpoint});
  }
  prober_ = std::make_unique<router::ClusterProber>(
      [this](const std::string& id) { return fabric_->cluster_status(id); }, [this] { return loop_.now(); },
      config_.probe_interval);
  batches_ = std::make_unique<batch::BatchEngine>(loop_, registry_, *fabric_, *prober_, files_, telemetry_.get(),
                                                  batch::BatchConfig{config_.batch_max_lines});
}

Gateway::~Gateway() = default;

auth::AccessToken Gateway::mint_token(const std::string& subject, auth::GroupSet groups, std::optional<Duration> ttl) {
  if (mock_identity_ == nullptr) {
    throw Error(ErrorCode::kInternal, "tokens can only be minted by the embedded identity provider");
  }
  return mock_identity_->mint(subject, std::move(groups), ttl.value_or(config_.token_ttl));
}

std::int64_t Gateway::unix_now() const {
  return static_cast<std::int64_t>(std::floor(to_seconds(loop_.now().time_since_epoch()) + unix_offset_s_));
}

bool Gateway::is_admin(const auth::Principal& p) const { return p.groups.contains(config_.admin_group); }

void Gateway::send_json(ResponseSink& sink, int status, const json& body, const Headers& headers) {
  sink.send(status, "application/json", body.dump(), headers);
}

void Gateway::send_error(ResponseSink& sink, const ApiError& err, const Headers& headers) {
  send_json(sink, err.status(), error_json(err), headers);
}

void Gateway::handle(HttpRequest req, std::shared_ptr<ResponseSink> sink) {
  ++stats_.requests;
  const Instant arrived = loop_.now();
  const auto& m = req.method;
  const auto& p = req.path;
  Handler h = nullptr;
  if (m == "GET" && p == "/healthz") {
    send_json(*sink, 200, json{{"status", "ok"}});
    return;
  }
  if (m == "POST" && p == "/v1/chat/completions") {
    h = &Gateway::chat;
  } else if (m == "POST" && p == "/v1/completions") {
    h = &Gateway::completion;
  } else if (m == "POST" && p == "/v1/embeddings") {
    h = &Gateway::embedding;
  } else if (m == "GET" && p == "/v1/models") {
    h = &Gateway::list_models;
  } else if (m == "GET" && p == "/jobs") {
    h = &Gateway::jobs;
  } else if (m == "GET" && p == "/metrics") {
    h = &Gateway::metrics;
  } else if (m == "POST" && p == "/admin/models") {
    h = &Gateway::admin_models;
  } else if (p == "/v1/batches" || p.starts_with("/v1/batches/")) {
    h = &Gateway::batches_route;
  }
  if (h == nullptr) {
    ++stats_.rejected;
    send_error(*sink, ApiError{ErrorCode::kNotFound, "no route for " + m + " " + p});
    return;
  }
  authenticated(req, sink, h, arrived);
}

void Gateway::authenticated(const HttpRequest& req, const std::shared_ptr<ResponseSink>& sink, Handler handler,
                            Instant arrived) {
  const std::string token = auth::bearer_token(req.header("authorization"));
  auto shared_req = std::make_shared<HttpRequest>(req);
  authenticator_->introspect(token, [this, shared_req, sink, handler, arrived](const auth::AuthOutcome& outcome) {
    if (const auto* err = std::get_if<ApiError>(&outcome)) {
      ++stats_.rejected;
      send_error(*sink, *err, {{"WWW-Authenticate", "Bearer"}});
      return;
    }
    const auto& principal = std::get<auth::Principal>(outcome);
    try {
      (this->*handler)(*shared_req, principal, sink, arrived);
    } catch (const Error& e) {
      ++stats_.rejected;
      send_error(*sink, e.api_error());
    } catch (const std::invalid_argument& e) {
      ++stats_.rejected;
      send_error(*sink, ApiError{ErrorCode::kValidation, e.what()});
    } catch (const std::exception& e) {
      ++stats_.rejected;
      send_error(*sink, ApiError{ErrorCode::kInternal, e.what()});
    }
  });
}

void Gateway::chat(const HttpRequest& r, const auth::Principal& p, const std::shared_ptr<ResponseSink>& s, Instant a) {
  inference(TaskKind::kChat, r, p, s, a);
}
void Gateway::completion(const HttpRequest& r, const auth::Principal& p, const std::shared_ptr<ResponseSink>& s,
                         Instant a) {
  inference(TaskKind::kCompletion, r, p, s, a);
}
void Gateway::embedding(const HttpRequest& r, const auth::Principal& p, const std::shared_ptr<ResponseSink>& s,
                        Instant a) {
  inference(TaskKind::kEmbedding, r, p, s, a);
}

namespace {

struct StreamState {
  bool started = false;
  bool passthrough = false;
  std::optional<std::string> held;
  int emitted = 0;
};

}  // namespace

void Gateway::inference(TaskKind kind, const HttpRequest& req, const auth::Principal& principal,
                        const std::shared_ptr<ResponseSink>& sink, Instant arrived) {
  if (config_.rate_limit.enabled) {
    const RateDecision d = limiter_.check(principal.subject, loop_.now());
    if (!d.pass) {
      const auto secs = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(to_seconds(d.retry_after))));
      ++stats_.rejected;
      send_error(*sink, ApiError{ErrorCode::kRateLimited, "rate limit exceeded"},
                 {{"Retry-After", std::to_string(secs)}});
      return;
    }
  }
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) throw Error(ErrorCode::kValidation, "body must be a JSON object");
  if (!body.contains("model") || !body["model"].is_string() || body["model"].get<std::string>().empty()) {
    throw Error(ErrorCode::kValidation, "model is required");
  }
  const std::string model = body["model"].get<std::string>();
  auto entry = registry_.model(model);
  if (!entry) throw Error(ErrorCode::kUnknownModel, "model '" + model + "' does not exist");
  if (registry_.authorize(principal, model) != auth::Decision::kAllow) {
    throw Error(ErrorCode::kForbidden, "not allowed to use model '" + model + "'");
  }
  TaskPayload payload = parse_request(kind, body);
  check_against_model(kind, payload, entry->spec);
  if (kind == TaskKind::kEmbedding) payload.stream = false;

  if (stats_.pending >= config_.max_pending) {
    ++stats_.backpressure_rejections;
    throw Error(ErrorCode::kBackpressure, "too many pending requests");
  }
  const std::string endpoint = router::route(model, registry_, fabric_->active_instances(), *prober_);

  auto task = std::make_shared<InferenceTask>();
  const char* prefix = kind == TaskKind::kChat ? "chatcmpl-" : kind == TaskKind::kCompletion ? "cmpl-" : "embd-";
  task->id = ids_.next(prefix, loop_.now());
  task->kind = kind;
  task->model = model;
  task->function = kind == TaskKind::kEmbedding ? "embed_v1" : "infer_v1";
  task->payload = std::move(payload);
  task->subject = principal.subject;
  task->arrived_at = arrived;

  const std::int64_t created = unix_now();
  auto stream = std::make_shared<StreamState>();
  stream->passthrough = entry->spec.backend.kind == backends::BackendKind::kPassthrough;
  InferenceTask* raw = task.get();
  std::weak_ptr<InferenceTask> weak = task;

  if (task->payload.stream) {
    task->on_token = [this, sink, stream, raw, weak, kind, model, created](std::string_view piece, int) {
      if (sink->closed()) {
        if (auto t = weak.lock(); t && !t->resolved()) {
          t->resolve(ApiError{ErrorCode::kCancelled, "client disconnected"}, loop_.now());
        }
        return;
      }
      if (!stream->started) {
        sink->start_stream();
        stream->started = true;
      }
      if (stream->passthrough) {
        sink->stream_event(std::string(piece));
        ++stream->emitted;
        return;
      }
      // One token is held back so the final chunk can carry finish_reason.
      if (stream->held) {
        sink->stream_event(stream_chunk_json(kind, raw->id, model, created, *stream->held, stream->emitted, std::nullopt).dump());
        ++stream->emitted;
      }
      stream->held = std::string(piece);
    };
  }

  auto timeout_id = std::make_shared<EventId>(0);
  task->on_done = [this, sink, stream, raw, kind, model, created, timeout_id](const TaskOutcome& outcome) {
    if (*timeout_id != 0) loop_.cancel(*timeout_id);
    --stats_.pending;
    telemetry_->record(telemetry::make_usage_record(*raw, outcome, fabric_->instance(raw->instance_id)));
    const auto* res = std::get_if<InferenceResult>(&outcome);
    if (res != nullptr) {
      ++stats_.completed;
    } else {
      ++stats_.failed;
    }
    if (!raw->payload.stream) {
      if (res == nullptr) {
        send_error(*sink, std::get<ApiError>(outcome));
      } else if (res->verbatim) {
        sink->send(200, "application/json", res->raw_body, {});
      } else {
        send_json(*sink, 200, response_json(kind, raw->id, model, created, *res));
      }
      return;
    }
    if (res == nullptr && !stream->started) {
      send_error(*sink, std::get<ApiError>(outcome));
      return;
    }
    if (!stream->started) {
      sink->start_stream();
      stream->started = true;
    }
    if (res == nullptr) {
      sink->stream_event(error_json(std::get<ApiError>(outcome)).dump());
    } else if (!stream->passthrough) {
      if (stream->held || stream->emitted == 0) {
        const std::string last = stream->held.value_or("");
        sink->stream_event(
            stream_chunk_json(kind, raw->id, model, created, last, stream->emitted, res->finish_reason).dump());
        ++stream->emitted;
        stream->held.reset();
      }
    }
    sink->stream_event("[DONE]");
    sink->end_stream();
  };

  ++stats_.pending;
  ++stats_.accepted;
  stats_.peak_pending = std::max(stats_.peak_pending, stats_.pending);
  try {
    fabric_->submit(endpoint, task);
  } catch (const Error& e) {
    // Nothing was queued; answer through the normal completion path.
    task->resolve(e.api_error(), loop_.now());
    return;
  }
  if (routing_log_.size() < routing_log_limit_) routing_log_.push_back(endpoint);
  if (!task->resolved() && config_.request_timeout.count() > 0) {
    *timeout_id = loop_.schedule_after(config_.request_timeout, [this, weak] {
      if (auto t = weak.lock(); t && !t->resolved()) {
        t->resolve(ApiError{ErrorCode::kTimeout, "request timed out"}, loop_.now());
      }
    });
  }
}

json Gateway::models_json() const {
  json data = json::array();
  for (const auto& m : registry_.models()) {
    json j = {{"id", m.spec.name},
              {"object", "model"},
              {"created", 0},
              {"owned_by", "fedgate"},
              {"kind", m.spec.kind == router::ModelKind::kChat ? "chat" : "embedding"},
              {"endpoints", m.endpoints},
              {"params_billions", m.spec.params_billions},
              {"gpus_required", m.spec.gpus_required},
              {"max_output_tokens", m.spec.max_output_tokens}};
    if (m.spec.kind == router::ModelKind::kEmbedding) j["embedding_dim"] = m.spec.embedding_dim;
    if (!m.required_groups.empty()) j["required_groups"] = m.required_groups;
    data.push_back(std::move(j));
  }
  return json{{"object", "list"}, {"data", data}};
}

void Gateway::list_models(const HttpRequest&, const auth::Principal&, const std::shared_ptr<ResponseSink>& sink,
                          Instant) {
  send_json(*sink, 200, models_json());
}

json Gateway::jobs_json(bool include_stopped) const {
  struct Agg {
    fabric::InstanceId first = fabric::kNoInstance;
    std::string cluster;
    int queued = 0, starting = 0, running = 0;
    int gpus = 0;
    bool dedicated = false;
    std::set<int> nodes;
    std::optional<Instant> last_active;
  };
  std::map<std::pair<std::string, std::string>, Agg> by_key;  // (model, endpoint)
  for (const auto* m : fabric_->instances()) {
    if (!m->live()) continue;
    auto& a = by_key[{m->model, m->endpoint}];
    a.cluster = m->cluster;
    if (m->state == fabric::InstanceState::kQueued) ++a.queued;
    if (m->state == fabric::InstanceState::kStarting) ++a.starting;
    if (m->state == fabric::InstanceState::kRunning) ++a.running;
    a.gpus += static_cast<int>(m->gpus.size());
    a.dedicated = a.dedicated || m->dedicated;
    for (int n : m->node_ids()) a.nodes.insert(n);
    if (m->state == fabric::InstanceState::kRunning && (!a.last_active || m->last_active_at > *a.last_active)) {
      a.last_active = m->last_active_at;
    }
  }
  json out = {{"object", "jobs"},
              {"running", json::array()},
              {"starting", json::array()},
              {"queued", json::array()}};
  for (const auto& [key, a] : by_key) {
    const char* state = a.running > 0 ? "running" : a.starting > 0 ? "starting" : "queued";
    json j = {{"model", key.first},
              {"endpoint", key.second},
              {"cluster", a.cluster},
              {"state", state},
              {"instances", {{"queued", a.queued}, {"starting", a.starting}, {"running", a.running}}},
              {"nodes", a.nodes},
              {"gpus", a.gpus},
              {"batch", a.dedicated},
              {"last_active_at",
               a.last_active ? json(std::llround(to_seconds(a.last_active->time_since_epoch()) + unix_offset_s_))
                             : json(nullptr)}};
    out[state].push_back(std::move(j));
  }
  if (include_stopped) {
    out["stopped"] = json::array();
    for (const auto& m : registry_.models()) {
      for (const auto& ep : m.endpoints) {
        if (!by_key.contains({m.spec.name, ep})) out["stopped"].push_back(json{{"model", m.spec.name}, {"endpoint", ep}, {"state", "stopped"}});
      }
    }
  }
  return out;
}

void Gateway::jobs(const HttpRequest& req, const auth::Principal&, const std::shared_ptr<ResponseSink>& sink,
                   Instant) {
  bool stopped = config_.jobs_include_stopped;
  if (auto it = req.query.find("include_stopped"); it != req.query.end()) {
    stopped = it->second == "1" || it->second == "true";
  }
  send_json(*sink, 200, jobs_json(stopped));
}

json Gateway::metrics_json(Duration window) const {
  telemetry::MetricsSnapshot s = telemetry_->snapshot(window, loop_.now());
  for (const auto* m : fabric_->instances()) {
    auto& c = s.instances[m->model];
    if (m->state == fabric::InstanceState::kQueued) ++c.queued;
    if (m->state == fabric::InstanceState::kStarting) ++c.starting;
    if (m->state == fabric::InstanceState::kRunning) ++c.running;
  }
  for (const auto& ep : registry_.endpoints()) {
    for (const auto& model : registry_.hosted_models(ep.endpoint_id)) {
      s.queue_depths[model] += static_cast<std::int64_t>(fabric_->pending(ep.endpoint_id, model));
    }
  }
  json j = telemetry::to_json(s);
  j["gateway"] = {{"requests", stats_.requests},
                  {"accepted", stats_.accepted},
                  {"rejected", stats_.rejected},
                  {"pending", stats_.pending},
                  {"peak_pending", stats_.peak_pending}};
  j["fabric"] = {{"tokens_emitted", fabric_->tokens_emitted()},
                 {"in_flight", fabric_->total_in_flight()},
                 {"pending", fabric_->total_pending()}};
  j["telemetry"] = {{"records", telemetry_->size()}, {"dropped", telemetry_->dropped()}, {"lossy", telemetry_->lossy()}};
  return j;
}

void Gateway::metrics(const HttpRequest& req, const auth::Principal&, const std::shared_ptr<ResponseSink>& sink,
                      Instant) {
  Duration window = config_.metrics_window;
  if (auto it = req.query.find("window_s"); it != req.query.end()) {
    double w = 0;
    try {
      w = std::stod(it->second);
    } catch (const std::exception&) {
      w = -1;
    }
    if (!(w > 0)) throw Error(ErrorCode::kValidation, "window_s must be a positive number");
    window = from_seconds(w);
  }
  send_json(*sink, 200, metrics_json(window));
}

void Gateway::admin_models(const HttpRequest& req, const auth::Principal& p, const std::shared_ptr<ResponseSink>& sink,
                           Instant) {
  if (!is_admin(p)) throw Error(ErrorCode::kForbidden, "admin group required");
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) throw Error(ErrorCode::kValidation, "body must be a JSON object");
  ModelDecl decl;
  try {
    decl = parse_model(body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidation, e.what());
  }
  registry_.register_model(decl.spec, decl.endpoints, decl.required_groups);
  const json listing = models_json();
  for (const auto& m : listing["data"]) {
    if (m["id"] == decl.spec.name) {
      send_json(*sink, 201, m);
      return;
    }
  }
  throw Error(ErrorCode::kInternal, "registered model missing from listing");
}

void Gateway::batches_route(const HttpRequest& req, const auth::Principal& p, const std::shared_ptr<ResponseSink>& sink,
                            Instant) {
  const bool admin = is_admin(p);
  if (req.path == "/v1/batches") {
    if (req.method == "GET") {
      json data = json::array();
      for (const auto& j : batches_->list(p, admin)) data.push_back(batch::to_json(j, unix_offset_s_));
      send_json(*sink, 200, json{{"object", "list"}, {"data", data}});
      return;
    }
    if (req.method != "POST") throw Error(ErrorCode::kNotFound, "no route for " + req.method + " " + req.path);
    std::string model;
    if (auto it = req.query.find("model"); it != req.query.end()) model = it->second;
    std::string content = req.body;
    if (req.header("content-type").starts_with("application/json")) {
      // {"input_file_id": ..., "model": ...} referencing a stored upload.
      json b = json::parse(req.body, nullptr, false);
      if (b.is_object() && b.contains("input_file_id")) {
        auto stored = files_.get(b.value("input_file_id", ""));
        if (!stored) throw Error(ErrorCode::kNotFound, "input file not found");
        content = *stored;
        model = b.value("model", model);
      }
    }
    const auto& job = batches_->submit(p, content, model);
    send_json(*sink, 200, batch::to_json(job, unix_offset_s_));
    return;
  }
  std::string rest = req.path.substr(std::string("/v1/batches/").size());
  std::string action;
  if (auto slash = rest.find('/'); slash != std::string::npos) {
    action = rest.substr(slash + 1);
    rest = rest.substr(0, slash);
  }
  if (req.method == "GET" && action.empty()) {
    send_json(*sink, 200, batch::to_json(batches_->get(rest, p, admin), unix_offset_s_));
  } else if (req.method == "GET" && action == "output") {
    sink->send(200, "application/jsonl", batches_->results(rest, p, admin), {});
  } else if (req.method == "POST" && action == "cancel") {
    send_json(*sink, 200, batch::to_json(batches_->cancel(rest, p, admin), unix_offset_s_));
  } else {
    throw Error(ErrorCode::kNotFound, "no route for " + req.method + " " + req.path);
  }
}

}  // namespace fedgate::gateway
