#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fedgate/fabric/cluster.hpp"
#include "fedgate/router/registry.hpp"
#include "fedgate/router/selection.hpp"
#include "fedgate/sim/event_loop.hpp"
#include "fedgate/task.hpp"

namespace fedgate::fabric {

enum class InstanceState { kQueued, kStarting, kRunning, kReleased, kFailed };

std::string_view to_string(InstanceState s);

/// queued->starting->running->released, {queued,starting,running}->failed,
/// failed->queued.
bool legal_transition(InstanceState from, InstanceState to);

struct ModelInstance {
  InstanceId id = kNoInstance;
  std::string model;
  std::string endpoint;
  std::string cluster;
  InstanceState state = InstanceState::kQueued;
  int gpus_required = 1;
  std::vector<GpuSlot> gpus;

  int in_flight = 0;
  int max_in_flight_seen = 0;

  Instant created_at{};
  Instant queued_at{};
  Instant last_active_at{};
  std::optional<Instant> allocated_at;
  std::optional<Instant> started_loading_at;
  std::optional<Instant> running_since;
  std::optional<Instant> released_at;

  bool dedicated = false;
  bool release_on_run = false;
  bool restartable = true;
  int restarts = 0;
  std::uint64_t epoch = 0;
  std::string failure_reason;

  std::vector<TaskPtr> running;        // executing now
  std::vector<TaskPtr> orphans;        // in flight when the instance failed
  std::deque<TaskPtr> local_queue;     // direct execute() callers waiting for a slot

  std::uint64_t tokens_emitted = 0;
  std::uint64_t tasks_completed = 0;

  std::set<int> node_ids() const;
  bool live() const {
    return state == InstanceState::kQueued || state == InstanceState::kStarting || state == InstanceState::kRunning;
  }
};

struct InstanceEvent {
  Instant at{};
  InstanceId id = kNoInstance;
  std::string model;
  std::string endpoint;
  InstanceState from = InstanceState::kQueued;
  InstanceState to = InstanceState::kQueued;
  bool created = false;
  bool legal = true;
};

struct FabricConfig {
  Duration tick = std::chrono::seconds(1);
  Duration idle_timeout = std::chrono::seconds(7200);
  int retry_cap = 2;
  // Job launch between node allocation and the start of weight loading.
  Duration launch_overhead = std::chrono::seconds(5);
  Duration load_base = std::chrono::seconds(10);
  double load_bandwidth = 2e9;  // bytes/s
  // Spawn a new instance at admission when every existing one is saturated.
  bool scale_on_submit = true;
  // When false, ensure_instance throws CapacityExceeded at the cap.
  bool queue_when_saturated = true;
  std::uint64_t seed = 42;
};

struct FaultSpec {
  Instant at{};
  std::string model;
  std::string endpoint;
};

struct DedicatedCallbacks {
  std::function<void(InstanceId)> on_running;
  std::function<void(InstanceId, const ApiError&)> on_failed;
};

/// Simulated HPC side of the service: per-cluster batch schedulers, model
/// instance lifecycle, GPU packing, auto-scaling, idle release and restarts.
///
/// Not thread-safe: every call must happen on the owning EventLoop.
class Fabric {
 public:
  Fabric(EventLoop& loop, const router::Registry& registry, FabricConfig config = {});
  ~Fabric();

  Fabric(const Fabric&) = delete;
  Fabric& operator=(const Fabric&) = delete;

  void add_cluster(ClusterConfig config);
  bool has_cluster(const std::string& id) const { return clusters_.contains(id); }
  const Cluster& cluster(const std::string& id) const;

  void set_up(bool up) { up_ = up; }
  bool is_up() const { return up_; }

  /// Enqueues a validated task on an endpoint and makes sure an instance is
  /// (or will be) available. Throws Error(kEndpointDown) when the fabric is
  /// stopped.
  void submit(const std::string& endpoint, TaskPtr task);

  InstanceId ensure_instance(const std::string& model, const std::string& endpoint);

  /// Requests online instances until `count` are live (capped by the
  /// endpoint's max_instances_per_model). Returns the new instance ids.
  std::vector<InstanceId> prewarm(const std::string& model, const std::string& endpoint, int count);

  /// Instance reserved for one consumer (batch jobs); never used for online
  /// routing and never reaped by the idle timer.
  InstanceId launch_dedicated(const std::string& model, const std::string& endpoint, DedicatedCallbacks callbacks);

  /// Runs a task on a specific instance, waiting for a free slot if needed.
  void execute(InstanceId id, TaskPtr task);

  void release_instance(InstanceId id);
  /// Gives a dedicated instance back: released now when running, otherwise
  /// as soon as it comes up. Work still on it is dropped unresolved; the
  /// owner resolves its own tasks.
  void cancel_dedicated(InstanceId id);
  void fail_instance(InstanceId id, const std::string& reason, bool restartable = true);
  void schedule_fault(const FaultSpec& fault);

  std::vector<InstanceId> autoscale_tick(const std::string& endpoint);
  std::vector<InstanceId> idle_reaper_tick(Instant now);
  std::vector<InstanceId> health_tick();

  /// Current status of a cluster. Throws Error(kUnknownCluster).
  router::ClusterStatus cluster_status(const std::string& cluster_id);
  std::uint64_t status_queries() const { return status_queries_; }
  std::vector<std::string> cluster_ids() const;

  router::ActiveInstances active_instances() const;
  const ModelInstance* instance(InstanceId id) const;
  std::vector<const ModelInstance*> instances() const;
  std::size_t pending(const std::string& endpoint, const std::string& model) const;
  std::size_t total_pending() const;
  std::size_t total_in_flight() const;

  Duration load_time(const router::ModelSpec& spec) const;

  bool check_invariants(std::string* why = nullptr) const;
  std::uint64_t illegal_transitions() const { return illegal_transitions_; }
  const std::vector<InstanceEvent>& transitions() const { return transitions_; }
  void set_instance_listener(std::function<void(const InstanceEvent&)> fn) { listener_ = std::move(fn); }

  std::uint64_t tokens_emitted() const { return tokens_emitted_; }
  std::uint64_t tasks_started() const { return tasks_started_; }
  const FabricConfig& config() const { return config_; }
  EventLoop& loop() { return loop_; }

 private:
  using QueueKey = std::pair<std::string, std::string>;  // endpoint, model

  ModelInstance& inst(InstanceId id);
  const router::EndpointSpec& endpoint_spec(const std::string& id) const;
  void transition(ModelInstance& m, InstanceState to);
  InstanceId create_instance(const std::string& model, const std::string& endpoint, bool dedicated);
  void enqueue_allocation(ModelInstance& m);
  void try_schedule(const std::string& cluster_id);
  void begin_load(InstanceId id, std::uint64_t epoch);
  void finish_load(InstanceId id, std::uint64_t epoch);
  void pump(const std::string& endpoint, const std::string& model);
  void drain_local(ModelInstance& m);
  void start_task(ModelInstance& m, TaskPtr task);
  void start_passthrough(ModelInstance& m, TaskPtr task, const router::ModelSpec& spec);
  void complete_task(InstanceId id, std::uint64_t epoch, const TaskPtr& task, const TaskOutcome& outcome,
                     int tokens);
  void fail_waiting(const std::string& endpoint, const std::string& model, const ApiError& error);
  std::vector<ModelInstance*> instances_of(const std::string& endpoint, const std::string& model,
                                           bool include_dedicated = false);
  int capacity_count(const std::string& endpoint, const std::string& model);
  void arm_ticks();
  void arm_idle_deadline(ModelInstance& m);
  void on_tick();
  bool has_live_work() const;

  EventLoop& loop_;
  const router::Registry& registry_;
  FabricConfig config_;
  bool up_ = true;

  std::map<std::string, Cluster> clusters_;
  std::map<InstanceId, ModelInstance> instances_;
  std::map<InstanceId, DedicatedCallbacks> dedicated_;
  std::map<QueueKey, std::deque<TaskPtr>> pending_;
  InstanceId next_instance_ = 1;

  mutable std::map<std::string, router::EndpointSpec> endpoint_cache_;
  bool tick_armed_ = false;
  std::uint64_t status_queries_ = 0;
  std::uint64_t illegal_transitions_ = 0;
  std::uint64_t tokens_emitted_ = 0;
  std::uint64_t tasks_started_ = 0;
  std::vector<InstanceEvent> transitions_;
  std::function<void(const InstanceEvent&)> listener_;

  struct Worker {
    std::jthread thread;
    std::shared_ptr<std::atomic<bool>> finished;
  };
  std::mutex workers_mu_;
  std::vector<Worker> workers_;
};

}  // namespace fedgate::fabric
