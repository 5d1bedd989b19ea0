#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>

#include "fedgate/router/registry.hpp"
#include "fedgate/sim/time.hpp"

namespace fedgate::router {

struct ClusterStatus {
  std::string cluster_id;
  int total_nodes = 0;
  int free_nodes = 0;
  int queued_jobs = 0;
  int gpus_per_node = 8;
  Instant observed_at{};
};

using ClusterStatusMap = std::map<std::string, ClusterStatus>;

/// (endpoint_id, model) pairs that have at least one instance queued,
/// starting or running.
using ActiveInstances = std::set<std::pair<std::string, std::string>>;

/// One configured endpoint for a model, in config_index order.
struct Candidate {
  bool has_active_instance = false;
  int free_nodes = 0;
  int nodes_needed = 1;
};

enum class SelectionRule { kActiveInstance, kAvailableNodes, kFirstConfigured };

struct Selection {
  std::size_t config_index = 0;
  SelectionRule rule = SelectionRule::kFirstConfigured;
};

/// Priority-based endpoint choice over candidates in configuration order:
/// an endpoint already running (or provisioning) the model, else one whose
/// cluster can fit an instance now, else the first configured endpoint.
/// Ties go to the lowest config_index. `candidates` must be non-empty.
Selection select_candidate(std::span<const Candidate> candidates);

/// Nodes one instance occupies on a cluster with `gpus_per_node` GPUs.
int nodes_needed(int gpus_required, int gpus_per_node);

/// Registry-level form. Clusters missing from `clusters` count as having no
/// free nodes. Throws Error(kNoEndpoint) when the model is not registered.
std::string select_endpoint(const std::string& model, const Registry& registry, const ActiveInstances& active,
                            const ClusterStatusMap& clusters);

/// Caches cluster status for `interval` to bound probe traffic.
class ClusterProber {
 public:
  using Query = std::function<ClusterStatus(const std::string& cluster_id)>;

  ClusterProber(Query query, std::function<Instant()> clock, Duration interval = std::chrono::seconds(2));

  /// Throws whatever the query throws (Error(kUnknownCluster) for the fabric).
  ClusterStatus probe(const std::string& cluster_id);
  ClusterStatusMap probe_all(std::span<const std::string> cluster_ids);
  void invalidate();

  std::uint64_t queries() const;
  Duration interval() const { return interval_; }

 private:
  Query query_;
  std::function<Instant()> clock_;
  Duration interval_;
  mutable std::mutex mu_;
  std::map<std::string, ClusterStatus> cache_;
  std::uint64_t queries_ = 0;
};

/// Probes the clusters behind the model's endpoints and applies
/// select_endpoint. Throws Error(kNoEndpoint) for unregistered models.
std::string route(const std::string& model, const Registry& registry, const ActiveInstances& active,
                  ClusterProber& prober);

}  // namespace fedgate::router
