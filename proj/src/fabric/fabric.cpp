#include "fedgate/fabric/fabric.hpp"

#include <algorithm>
#include <stdexcept>

#include "fedgate/backends/mock_backend.hpp"
#include "fedgate/backends/passthrough.hpp"
#include "fedgate/errors.hpp"

namespace fedgate::fabric {

std::string_view to_string(InstanceState s) {
  switch (s) {
    case InstanceState::kQueued: return "queued";
    case InstanceState::kStarting: return "starting";
    case InstanceState::kRunning: return "running";
    case InstanceState::kReleased: return "released";
    case InstanceState::kFailed: return "failed";
  }
  return "unknown";
}

bool legal_transition(InstanceState from, InstanceState to) {
  using S = InstanceState;
  switch (to) {
    case S::kStarting: return from == S::kQueued;
    case S::kRunning: return from == S::kStarting;
    case S::kReleased: return from == S::kRunning;
    case S::kFailed: return from == S::kQueued || from == S::kStarting || from == S::kRunning;
    case S::kQueued: return from == S::kFailed;
  }
  return false;
}

std::set<int> ModelInstance::node_ids() const {
  std::set<int> out;
  for (const auto& g : gpus) out.insert(g.node_id);
  return out;
}

Fabric::Fabric(EventLoop& loop, const router::Registry& registry, FabricConfig config)
    : loop_(loop), registry_(registry), config_(config) {}

Fabric::~Fabric() {
  std::lock_guard lock(workers_mu_);
  workers_.clear();
}

void Fabric::add_cluster(ClusterConfig config) {
  const std::string id = config.id;
  if (id.empty()) throw std::invalid_argument("cluster id is empty");
  clusters_.erase(id);
  clusters_.emplace(id, Cluster(std::move(config)));
}

const Cluster& Fabric::cluster(const std::string& id) const {
  auto it = clusters_.find(id);
  if (it == clusters_.end()) throw Error(ErrorCode::kUnknownCluster, "unknown cluster " + id);
  return it->second;
}

std::vector<std::string> Fabric::cluster_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : clusters_) out.push_back(id);
  return out;
}

ModelInstance& Fabric::inst(InstanceId id) {
  auto it = instances_.find(id);
  if (it == instances_.end()) throw Error(ErrorCode::kNotFound, "unknown instance " + std::to_string(id));
  return it->second;
}

const ModelInstance* Fabric::instance(InstanceId id) const {
  auto it = instances_.find(id);
  return it == instances_.end() ? nullptr : &it->second;
}

std::vector<const ModelInstance*> Fabric::instances() const {
  std::vector<const ModelInstance*> out;
  out.reserve(instances_.size());
  for (const auto& [_, m] : instances_) out.push_back(&m);
  return out;
}

const router::EndpointSpec& Fabric::endpoint_spec(const std::string& id) const {
  // Endpoint specs are immutable once added.
  if (auto it = endpoint_cache_.find(id); it != endpoint_cache_.end()) return it->second;
  auto spec = registry_.endpoint(id);
  if (!spec) throw Error(ErrorCode::kNoEndpoint, "unknown endpoint " + id);
  return endpoint_cache_.emplace(id, *spec).first->second;
}

void Fabric::transition(ModelInstance& m, InstanceState to) {
  InstanceEvent ev;
  ev.at = loop_.now();
  ev.id = m.id;
  ev.model = m.model;
  ev.endpoint = m.endpoint;
  ev.from = m.state;
  ev.to = to;
  ev.legal = legal_transition(m.state, to);
  if (!ev.legal) ++illegal_transitions_;
  m.state = to;
  transitions_.push_back(ev);
  if (listener_) listener_(ev);
}

std::vector<ModelInstance*> Fabric::instances_of(const std::string& endpoint, const std::string& model,
                                                 bool include_dedicated) {
  std::vector<ModelInstance*> out;
  for (auto& [_, m] : instances_) {
    if (m.endpoint != endpoint || m.model != model) continue;
    if (m.dedicated && !include_dedicated) continue;
    out.push_back(&m);
  }
  return out;
}

int Fabric::capacity_count(const std::string& endpoint, const std::string& model) {
  int n = 0;
  for (auto* m : instances_of(endpoint, model)) {
    if (m->live() || (m->state == InstanceState::kFailed && m->restartable)) ++n;
  }
  return n;
}

InstanceId Fabric::create_instance(const std::string& model, const std::string& endpoint, bool dedicated) {
  auto entry = registry_.model(model);
  if (!entry) throw Error(ErrorCode::kUnknownModel, "model '" + model + "' is not registered");
  const auto& ep = endpoint_spec(endpoint);
  auto cit = clusters_.find(ep.cluster_id);
  if (cit == clusters_.end()) throw Error(ErrorCode::kUnknownCluster, "unknown cluster " + ep.cluster_id);
  if (!cit->second.could_ever_fit(entry->spec.gpus_required)) {
    throw Error(ErrorCode::kInsufficientResources,
                model + " needs " + std::to_string(entry->spec.gpus_required) + " GPUs; cluster " + ep.cluster_id +
                    " cannot provide them");
  }

  const InstanceId id = next_instance_++;
  ModelInstance m;
  m.id = id;
  m.model = model;
  m.endpoint = endpoint;
  m.cluster = ep.cluster_id;
  m.gpus_required = entry->spec.gpus_required;
  m.dedicated = dedicated;
  m.created_at = loop_.now();
  m.queued_at = m.created_at;
  m.last_active_at = m.created_at;
  auto& ref = instances_.emplace(id, std::move(m)).first->second;

  InstanceEvent ev{loop_.now(), id, model, endpoint, InstanceState::kQueued, InstanceState::kQueued, true, true};
  transitions_.push_back(ev);
  if (listener_) listener_(ev);

  enqueue_allocation(ref);
  arm_ticks();
  return id;
}

void Fabric::enqueue_allocation(ModelInstance& m) {
  auto& cl = clusters_.at(m.cluster);
  cl.queue().push_back(AllocationJob{m.id, m.gpus_required, loop_.now()});
  try_schedule(m.cluster);
}

void Fabric::try_schedule(const std::string& cluster_id) {
  auto& cl = clusters_.at(cluster_id);
  auto& q = cl.queue();
  while (!q.empty()) {
    const AllocationJob job = q.front();
    auto it = instances_.find(job.instance);
    if (it == instances_.end() || it->second.state != InstanceState::kQueued) {
      q.pop_front();  // stale: the instance failed while waiting
      continue;
    }
    auto slots = cl.allocate(job.gpus, job.instance);
    if (!slots) break;  // strict FIFO: the head blocks everyone behind it
    q.pop_front();
    ModelInstance& m = it->second;
    m.gpus = std::move(*slots);
    m.allocated_at = loop_.now();
    transition(m, InstanceState::kStarting);
    const auto epoch = m.epoch;
    const auto id = m.id;
    loop_.schedule_after(config_.launch_overhead, [this, id, epoch] { begin_load(id, epoch); });
  }
}

Duration Fabric::load_time(const router::ModelSpec& spec) const {
  return config_.load_base + from_seconds(static_cast<double>(spec.weight_bytes()) / config_.load_bandwidth);
}

void Fabric::begin_load(InstanceId id, std::uint64_t epoch) {
  auto it = instances_.find(id);
  if (it == instances_.end()) return;
  ModelInstance& m = it->second;
  if (m.epoch != epoch || m.state != InstanceState::kStarting) return;
  m.started_loading_at = loop_.now();

  auto entry = registry_.model(m.model);
  const auto& cl = clusters_.at(m.cluster);
  // Whole nodes may come with spare GPUs; the weights shard over gpus_required only.
  std::uint64_t vram = 0;
  const std::size_t used = std::min(m.gpus.size(), static_cast<std::size_t>(std::max(1, m.gpus_required)));
  for (std::size_t i = 0; i < used; ++i) vram += cl.nodes().at(static_cast<std::size_t>(m.gpus[i].node_id)).vram_per_gpu;
  if (!entry || entry->spec.weight_bytes() > vram) {
    fail_instance(id, "insufficient VRAM: weights need " + std::to_string(entry ? entry->spec.weight_bytes() : 0) +
                          " bytes, assigned GPUs hold " + std::to_string(vram),
                  false);
    return;
  }
  loop_.schedule_after(load_time(entry->spec), [this, id, epoch] { finish_load(id, epoch); });
}

void Fabric::finish_load(InstanceId id, std::uint64_t epoch) {
  auto it = instances_.find(id);
  if (it == instances_.end()) return;
  ModelInstance& m = it->second;
  if (m.epoch != epoch || m.state != InstanceState::kStarting) return;
  m.running_since = loop_.now();
  m.last_active_at = loop_.now();
  transition(m, InstanceState::kRunning);
  arm_idle_deadline(m);
  if (m.release_on_run) {
    m.local_queue.clear();
    release_instance(id);
    return;
  }
  if (m.dedicated) {
    if (auto d = dedicated_.find(id); d != dedicated_.end() && d->second.on_running) {
      auto cb = d->second.on_running;
      cb(id);
    }
    drain_local(inst(id));
  } else {
    drain_local(m);
    pump(m.endpoint, m.model);
  }
}

InstanceId Fabric::ensure_instance(const std::string& model, const std::string& endpoint) {
  if (registry_.config_index(model, endpoint) < 0) {
    throw Error(ErrorCode::kNoEndpoint, "model '" + model + "' is not hosted on " + endpoint);
  }
  const auto& ep = endpoint_spec(endpoint);
  auto mine = instances_of(endpoint, model);

  for (auto* m : mine) {
    if (m->state == InstanceState::kQueued || m->state == InstanceState::kStarting) return m->id;
  }
  ModelInstance* least = nullptr;
  for (auto* m : mine) {
    if (m->state != InstanceState::kRunning) continue;
    if (least == nullptr || m->in_flight < least->in_flight) least = m;
  }
  if (least != nullptr && least->in_flight < ep.max_parallel_per_instance) return least->id;

  const int count = capacity_count(endpoint, model);
  if (count < ep.max_instances_per_model && (count == 0 || config_.scale_on_submit)) {
    return create_instance(model, endpoint, false);
  }
  if (least != nullptr || count > 0) {
    if (!config_.queue_when_saturated && count >= ep.max_instances_per_model) {
      throw Error(ErrorCode::kCapacityExceeded, "all instances of " + model + " on " + endpoint + " are saturated");
    }
    if (least != nullptr) return least->id;
    for (auto* m : mine) {
      if (m->state == InstanceState::kFailed && m->restartable) return m->id;
    }
  }
  return create_instance(model, endpoint, false);
}

std::vector<InstanceId> Fabric::prewarm(const std::string& model, const std::string& endpoint, int count) {
  if (registry_.config_index(model, endpoint) < 0) {
    throw Error(ErrorCode::kNoEndpoint, "model '" + model + "' is not hosted on " + endpoint);
  }
  const int cap = std::min(count, endpoint_spec(endpoint).max_instances_per_model);
  std::vector<InstanceId> out;
  while (capacity_count(endpoint, model) < cap) out.push_back(create_instance(model, endpoint, false));
  return out;
}

InstanceId Fabric::launch_dedicated(const std::string& model, const std::string& endpoint,
                                    DedicatedCallbacks callbacks) {
  if (registry_.config_index(model, endpoint) < 0) {
    throw Error(ErrorCode::kNoEndpoint, "model '" + model + "' is not hosted on " + endpoint);
  }
  const InstanceId id = next_instance_;
  dedicated_[id] = std::move(callbacks);
  try {
    create_instance(model, endpoint, true);
  } catch (...) {
    dedicated_.erase(id);
    throw;
  }
  return id;
}

void Fabric::submit(const std::string& endpoint, TaskPtr task) {
  if (!up_) throw Error(ErrorCode::kEndpointDown, "compute fabric is not reachable");
  (void)endpoint_spec(endpoint);
  task->endpoint = endpoint;
  task->dispatched_at = loop_.now();
  auto& q = pending_[{endpoint, task->model}];
  q.push_back(task);
  try {
    ensure_instance(task->model, endpoint);
  } catch (...) {
    q.pop_back();
    throw;
  }
  pump(endpoint, task->model);
  arm_ticks();
}

void Fabric::execute(InstanceId id, TaskPtr task) {
  ModelInstance& m = inst(id);
  task->endpoint = m.endpoint;
  if (!task->dispatched_at) task->dispatched_at = loop_.now();
  const auto& ep = endpoint_spec(m.endpoint);
  if (!ep.functions.contains(task->function)) {
    task->resolve(ApiError{ErrorCode::kUnregisteredFunction,
                           "function '" + task->function + "' is not registered on " + m.endpoint},
                  loop_.now());
    return;
  }
  if (m.state == InstanceState::kRunning && m.in_flight < ep.max_parallel_per_instance && m.local_queue.empty()) {
    start_task(m, std::move(task));
  } else {
    m.local_queue.push_back(std::move(task));
  }
  arm_ticks();
}

void Fabric::drain_local(ModelInstance& m) {
  if (m.state != InstanceState::kRunning) return;
  const int cap = endpoint_spec(m.endpoint).max_parallel_per_instance;
  while (!m.local_queue.empty() && m.in_flight < cap) {
    TaskPtr t = m.local_queue.front();
    m.local_queue.pop_front();
    if (t->resolved()) continue;
    start_task(m, std::move(t));
  }
}

void Fabric::pump(const std::string& endpoint, const std::string& model) {
  auto qit = pending_.find({endpoint, model});
  if (qit == pending_.end()) return;
  auto& q = qit->second;
  const int cap = endpoint_spec(endpoint).max_parallel_per_instance;
  while (!q.empty()) {
    if (q.front()->resolved()) {
      q.pop_front();
      continue;
    }
    ModelInstance* best = nullptr;
    for (auto* m : instances_of(endpoint, model)) {
      if (m->state != InstanceState::kRunning || m->in_flight >= cap || !m->local_queue.empty()) continue;
      if (best == nullptr || m->in_flight < best->in_flight) best = m;
    }
    if (best == nullptr) break;
    TaskPtr t = q.front();
    q.pop_front();
    start_task(*best, std::move(t));
  }
  if (!q.empty() && capacity_count(endpoint, model) == 0) {
    try {
      create_instance(model, endpoint, false);
    } catch (const Error& e) {
      fail_waiting(endpoint, model, e.api_error());
    }
  }
}

void Fabric::start_task(ModelInstance& m, TaskPtr task) {
  const auto& ep = endpoint_spec(m.endpoint);
  if (!ep.functions.contains(task->function)) {
    task->resolve(ApiError{ErrorCode::kUnregisteredFunction,
                           "function '" + task->function + "' is not registered on " + m.endpoint},
                  loop_.now());
    return;
  }
  auto entry = registry_.model(m.model);
  if (!entry) {
    task->resolve(ApiError{ErrorCode::kUnknownModel, "model vanished from registry"}, loop_.now());
    return;
  }
  const auto& spec = entry->spec;
  const int cap = ep.max_parallel_per_instance;

  ++m.in_flight;
  m.max_in_flight_seen = std::max(m.max_in_flight_seen, m.in_flight);
  m.running.push_back(task);
  ++task->attempts;
  ++tasks_started_;
  const Instant start = loop_.now();
  if (!task->started_at) task->started_at = start;
  task->instance_id = m.id;

  const InstanceId id = m.id;
  const std::uint64_t epoch = m.epoch;

  if (spec.backend.kind == backends::BackendKind::kPassthrough) {
    start_passthrough(m, task, spec);
    return;
  }

  const std::uint64_t seed = config_.seed ^ task->payload.seed;
  if (task->kind == TaskKind::kEmbedding) {
    InferenceResult result;
    result.task_id = task->id;
    result.embeddings = backends::embed(spec.backend, task->payload.inputs, spec.embedding_dim, seed);
    for (const auto& in : task->payload.inputs) result.usage.prompt_tokens += backends::count_tokens(in);
    // Embedding cost: one slot-interval per input token.
    const Duration dt = backends::service_time(spec.backend, cap, result.usage.prompt_tokens);
    loop_.schedule_at(start + dt, [this, id, epoch, task, result] { complete_task(id, epoch, task, result, 0); });
    return;
  }

  auto gen = std::make_shared<backends::Generation>(backends::generate(spec.backend, task->payload, seed));
  const int n = gen->completion_tokens();
  if (task->payload.stream) {
    // Tokens already delivered by an earlier attempt are not repeated.
    for (int i = task->tokens_delivered; i < n; ++i) {
      const Instant at = start + backends::token_offset(spec.backend, cap, i + 1);
      loop_.schedule_at(at, [this, id, epoch, task, gen, i] {
        auto it = instances_.find(id);
        if (it == instances_.end() || it->second.epoch != epoch || task->resolved()) return;
        if (task->tokens_delivered == i) task->deliver_token(gen->tokens[static_cast<std::size_t>(i)]);
      });
    }
  }
  InferenceResult result;
  result.task_id = task->id;
  result.text = gen->text();
  result.usage.prompt_tokens = gen->prompt_tokens;
  result.usage.completion_tokens = n;
  result.finish_reason = gen->finish_reason;
  const Instant done_at = start + backends::service_time(spec.backend, cap, n);
  loop_.schedule_at(done_at, [this, id, epoch, task, result, n] { complete_task(id, epoch, task, result, n); });
}

void Fabric::start_passthrough(ModelInstance& m, TaskPtr task, const router::ModelSpec& spec) {
  const InstanceId id = m.id;
  const std::uint64_t epoch = m.epoch;
  std::string path = task->kind == TaskKind::kChat         ? "/v1/chat/completions"
                     : task->kind == TaskKind::kCompletion ? "/v1/completions"
                                                           : "/v1/embeddings";
  auto profile = spec.backend;
  std::lock_guard lock(workers_mu_);
  std::erase_if(workers_, [](const Worker& w) { return w.finished->load(); });
  auto finished = std::make_shared<std::atomic<bool>>(false);
  std::jthread thread([this, id, epoch, task, profile, path, finished] {
    TaskOutcome outcome;
    int tokens = 0;
    try {
      backends::SseDataSink sink;
      if (task->payload.stream) {
        sink = [this, task](std::string_view data) {
          loop_.post([task, chunk = std::string(data)] {
            if (!task->resolved()) task->deliver_token(chunk);
          });
        };
      }
      auto res = backends::passthrough_call(profile, path, task->payload.raw_body, sink);
      InferenceResult r;
      r.task_id = task->id;
      r.verbatim = true;
      r.raw_body = res.body;
      tokens = res.events;
      r.usage.completion_tokens = res.events;
      outcome = r;
    } catch (const Error& e) {
      outcome = e.api_error();
    }
    loop_.post([this, id, epoch, task, outcome, tokens] { complete_task(id, epoch, task, outcome, tokens); });
    finished->store(true);
  });
  workers_.push_back(Worker{std::move(thread), std::move(finished)});
}

void Fabric::complete_task(InstanceId id, std::uint64_t epoch, const TaskPtr& task, const TaskOutcome& outcome,
                           int tokens) {
  auto it = instances_.find(id);
  if (it == instances_.end()) return;
  ModelInstance& m = it->second;
  if (m.epoch != epoch || m.state != InstanceState::kRunning) return;  // attempt was orphaned
  auto pos = std::find(m.running.begin(), m.running.end(), task);
  if (pos == m.running.end()) return;
  m.running.erase(pos);
  --m.in_flight;
  m.last_active_at = loop_.now();
  if (m.in_flight == 0) arm_idle_deadline(m);
  // A task the caller already gave up on (timeout, disconnect) only frees its slot.
  if (!task->resolved()) {
    if (std::holds_alternative<InferenceResult>(outcome)) {
      m.tokens_emitted += static_cast<std::uint64_t>(tokens);
      tokens_emitted_ += static_cast<std::uint64_t>(tokens);
      ++m.tasks_completed;
    }
    task->resolve(outcome, loop_.now());
  }

  drain_local(m);
  if (!m.dedicated) pump(m.endpoint, m.model);
}

void Fabric::fail_waiting(const std::string& endpoint, const std::string& model, const ApiError& error) {
  auto qit = pending_.find({endpoint, model});
  if (qit == pending_.end()) return;
  auto waiting = std::move(qit->second);
  qit->second.clear();
  for (auto& t : waiting) {
    if (!t->resolved()) t->resolve(error, loop_.now());
  }
}

void Fabric::release_instance(InstanceId id) {
  ModelInstance& m = inst(id);
  if (m.state != InstanceState::kRunning) {
    throw Error(ErrorCode::kInternal, "instance " + std::to_string(id) + " is " + std::string(to_string(m.state)) +
                                          ", only running instances can be released");
  }
  clusters_.at(m.cluster).release(m.gpus, m.id);
  m.gpus.clear();
  m.released_at = loop_.now();
  transition(m, InstanceState::kReleased);
  dedicated_.erase(id);
  try_schedule(m.cluster);
}

void Fabric::cancel_dedicated(InstanceId id) {
  ModelInstance& m = inst(id);
  if (!m.dedicated) throw Error(ErrorCode::kInternal, "instance " + std::to_string(id) + " is not dedicated");
  dedicated_.erase(id);
  m.local_queue.clear();
  if (m.state == InstanceState::kRunning) {
    ++m.epoch;
    m.running.clear();
    m.in_flight = 0;
    release_instance(id);
  } else if (m.live()) {
    m.release_on_run = true;
  } else if (m.state == InstanceState::kFailed) {
    m.restartable = false;
    m.orphans.clear();
  }
}

void Fabric::fail_instance(InstanceId id, const std::string& reason, bool restartable) {
  ModelInstance& m = inst(id);
  if (!m.live()) return;
  transition(m, InstanceState::kFailed);
  ++m.epoch;
  m.failure_reason = reason;
  m.restartable = restartable;
  if (!m.gpus.empty()) {
    clusters_.at(m.cluster).release(m.gpus, m.id);
    m.gpus.clear();
  }
  m.in_flight = 0;
  for (auto& t : m.running) m.orphans.push_back(std::move(t));
  m.running.clear();
  const std::string cluster = m.cluster;
  const std::string endpoint = m.endpoint;
  const std::string model = m.model;
  const bool dedicated = m.dedicated;

  if (!restartable) {
    ApiError err{ErrorCode::kInsufficientVram, reason};
    if (reason.rfind("insufficient VRAM", 0) != 0) err.code = ErrorCode::kTaskFailed;
    for (auto& t : m.orphans) {
      if (!t->resolved()) t->resolve(err, loop_.now());
    }
    m.orphans.clear();
    for (auto& t : m.local_queue) {
      if (!t->resolved()) t->resolve(err, loop_.now());
    }
    m.local_queue.clear();
    if (dedicated) {
      if (auto d = dedicated_.find(id); d != dedicated_.end()) {
        auto cb = d->second.on_failed;
        dedicated_.erase(d);
        if (cb) cb(id, err);
      }
    } else if (capacity_count(endpoint, model) == 0) {
      fail_waiting(endpoint, model, err);
    }
  }
  try_schedule(cluster);
  arm_ticks();
}

void Fabric::schedule_fault(const FaultSpec& fault) {
  loop_.schedule_at(fault.at, [this, fault] {
    for (auto* m : instances_of(fault.endpoint, fault.model)) {
      if (m->live()) {
        fail_instance(m->id, "injected fault");
        return;
      }
    }
  });
}

std::vector<InstanceId> Fabric::autoscale_tick(const std::string& endpoint) {
  std::vector<InstanceId> spawned;
  const auto& ep = endpoint_spec(endpoint);
  for (const auto& model : registry_.hosted_models(endpoint)) {
    if (pending(endpoint, model) == 0) continue;
    auto mine = instances_of(endpoint, model);
    bool all_saturated = true;
    int live = 0;
    for (auto* m : mine) {
      if (!m->live()) continue;
      ++live;
      if (m->in_flight < ep.max_parallel_per_instance) all_saturated = false;
    }
    if (live > 0 && !all_saturated) continue;
    if (capacity_count(endpoint, model) >= ep.max_instances_per_model) continue;
    try {
      spawned.push_back(create_instance(model, endpoint, false));
    } catch (const Error&) {
      // unplaceable on this cluster; pump reports it to waiting tasks
    }
  }
  return spawned;
}

std::vector<InstanceId> Fabric::idle_reaper_tick(Instant now) {
  std::vector<InstanceId> released;
  for (auto& [id, m] : instances_) {
    if (m.dedicated || m.state != InstanceState::kRunning || m.in_flight != 0) continue;
    if (now - m.last_active_at >= config_.idle_timeout) released.push_back(id);
  }
  for (auto id : released) release_instance(id);
  return released;
}

std::vector<InstanceId> Fabric::health_tick() {
  std::vector<InstanceId> restarted;
  for (auto& [id, m] : instances_) {
    if (m.state != InstanceState::kFailed || !m.restartable) continue;
    restarted.push_back(id);
  }
  for (auto id : restarted) {
    ModelInstance& m = inst(id);
    auto orphans = std::move(m.orphans);
    m.orphans.clear();
    std::deque<TaskPtr> retry;
    for (auto& t : orphans) {
      if (t->resolved()) continue;
      if (t->attempts > config_.retry_cap) {
        t->resolve(ApiError{ErrorCode::kTaskFailed, "task failed after " + std::to_string(t->attempts) + " attempts"},
                   loop_.now());
      } else {
        retry.push_back(t);
      }
    }
    ++m.restarts;
    m.queued_at = loop_.now();
    m.allocated_at.reset();
    m.started_loading_at.reset();
    m.running_since.reset();
    transition(m, InstanceState::kQueued);
    if (m.dedicated) {
      for (auto it = retry.rbegin(); it != retry.rend(); ++it) m.local_queue.push_front(*it);
    } else {
      auto& q = pending_[{m.endpoint, m.model}];
      for (auto it = retry.rbegin(); it != retry.rend(); ++it) q.push_front(*it);
    }
    enqueue_allocation(inst(id));
    if (!inst(id).dedicated) pump(inst(id).endpoint, inst(id).model);
  }
  return restarted;
}

router::ClusterStatus Fabric::cluster_status(const std::string& cluster_id) {
  ++status_queries_;
  return cluster(cluster_id).status(loop_.now());
}

router::ActiveInstances Fabric::active_instances() const {
  router::ActiveInstances out;
  for (const auto& [_, m] : instances_) {
    if (!m.dedicated && m.live()) out.insert({m.endpoint, m.model});
  }
  return out;
}

std::size_t Fabric::pending(const std::string& endpoint, const std::string& model) const {
  auto it = pending_.find({endpoint, model});
  if (it == pending_.end()) return 0;
  return static_cast<std::size_t>(
      std::count_if(it->second.begin(), it->second.end(), [](const TaskPtr& t) { return !t->resolved(); }));
}

std::size_t Fabric::total_pending() const {
  std::size_t n = 0;
  for (const auto& [_, q] : pending_) n += q.size();
  for (const auto& [_, m] : instances_) n += m.local_queue.size() + m.orphans.size();
  return n;
}

std::size_t Fabric::total_in_flight() const {
  std::size_t n = 0;
  for (const auto& [_, m] : instances_) n += static_cast<std::size_t>(m.in_flight);
  return n;
}

// Exact idle release, independent of tick alignment. Stale deadlines (the
// instance got work again, or moved on) fall through the checks.
void Fabric::arm_idle_deadline(ModelInstance& m) {
  if (m.dedicated) return;
  const InstanceId id = m.id;
  const std::uint64_t epoch = m.epoch;
  loop_.schedule_at(m.last_active_at + config_.idle_timeout, [this, id, epoch] {
    auto it = instances_.find(id);
    if (it == instances_.end()) return;
    const ModelInstance& m = it->second;
    if (m.epoch != epoch || m.state != InstanceState::kRunning || m.in_flight != 0) return;
    if (loop_.now() - m.last_active_at >= config_.idle_timeout) release_instance(id);
  });
}

void Fabric::arm_ticks() {
  if (tick_armed_) return;
  tick_armed_ = true;
  const auto t = config_.tick.count();
  const auto now = loop_.now().time_since_epoch().count();
  const Instant next{Duration{(now / t + 1) * t}};
  loop_.schedule_at(next, [this] { on_tick(); });
}

void Fabric::on_tick() {
  tick_armed_ = false;
  for (const auto& ep : registry_.endpoints()) autoscale_tick(ep.endpoint_id);
  idle_reaper_tick(loop_.now());
  health_tick();
  if (has_live_work()) arm_ticks();
}

bool Fabric::has_live_work() const {
  for (const auto& [_, m] : instances_) {
    if (m.live() || (m.state == InstanceState::kFailed && m.restartable)) return true;
  }
  for (const auto& [_, q] : pending_) {
    if (!q.empty()) return true;
  }
  return false;
}

bool Fabric::check_invariants(std::string* why) const {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  for (const auto& [cid, cl] : clusters_) {
    if (!cl.check_gpu_partition(why)) return false;
    std::set<int> allocated_nodes;
    for (const auto& [id, m] : instances_) {
      if (m.cluster != cid) continue;
      const bool holds = m.state == InstanceState::kStarting || m.state == InstanceState::kRunning;
      if (holds == m.gpus.empty()) {
        return fail("instance " + std::to_string(id) + " in state " + std::string(to_string(m.state)) +
                    " holds " + std::to_string(m.gpus.size()) + " GPUs");
      }
      for (const auto& g : m.gpus) {
        if (cl.nodes().at(static_cast<std::size_t>(g.node_id)).owner.at(static_cast<std::size_t>(g.gpu)) != id) {
          return fail("instance " + std::to_string(id) + " lists a GPU it does not own");
        }
        allocated_nodes.insert(g.node_id);
      }
    }
    if (static_cast<int>(allocated_nodes.size()) + cl.free_nodes() != cl.config().nodes) {
      return fail("node conservation broken on cluster " + cid);
    }
  }
  for (const auto& [id, m] : instances_) {
    const int cap = endpoint_spec(m.endpoint).max_parallel_per_instance;
    if (m.in_flight > cap) return fail("instance " + std::to_string(id) + " exceeds max_parallel");
    if (m.in_flight != static_cast<int>(m.running.size())) return fail("in_flight accounting mismatch");
  }
  return true;
}

}  // namespace fedgate::fabric
