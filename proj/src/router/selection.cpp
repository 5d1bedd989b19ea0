#include "fedgate/router/selection.hpp"

#include <stdexcept>

#include "fedgate/errors.hpp"

namespace fedgate::router {

Selection select_candidate(std::span<const Candidate> candidates) {
  if (candidates.empty()) throw Error(ErrorCode::kNoEndpoint, "model has no configured endpoints");
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].has_active_instance) return {i, SelectionRule::kActiveInstance};
  }
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].free_nodes >= candidates[i].nodes_needed) return {i, SelectionRule::kAvailableNodes};
  }
  return {0, SelectionRule::kFirstConfigured};
}

int nodes_needed(int gpus_required, int gpus_per_node) {
  if (gpus_per_node < 1) return 1;
  return std::max(1, (gpus_required + gpus_per_node - 1) / gpus_per_node);
}

std::string select_endpoint(const std::string& model, const Registry& registry, const ActiveInstances& active,
                            const ClusterStatusMap& clusters) {
  auto entry = registry.model(model);
  if (!entry) throw Error(ErrorCode::kNoEndpoint, "model '" + model + "' is not registered");
  std::vector<Candidate> candidates;
  candidates.reserve(entry->endpoints.size());
  for (const auto& ep_id : entry->endpoints) {
    Candidate c;
    c.has_active_instance = active.contains({ep_id, model});
    auto ep = registry.endpoint(ep_id);
    if (ep) {
      if (auto it = clusters.find(ep->cluster_id); it != clusters.end()) {
        c.free_nodes = it->second.free_nodes;
        c.nodes_needed = nodes_needed(entry->spec.gpus_required, it->second.gpus_per_node);
      }
    }
    candidates.push_back(c);
  }
  return entry->endpoints[select_candidate(candidates).config_index];
}

ClusterProber::ClusterProber(Query query, std::function<Instant()> clock, Duration interval)
    : query_(std::move(query)), clock_(std::move(clock)), interval_(interval) {}

ClusterStatus ClusterProber::probe(const std::string& cluster_id) {
  const Instant now = clock_();
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(cluster_id); it != cache_.end() && now - it->second.observed_at < interval_) {
      return it->second;
    }
  }
  ClusterStatus status = query_(cluster_id);
  status.observed_at = now;
  std::lock_guard lock(mu_);
  ++queries_;
  cache_[cluster_id] = status;
  return status;
}

ClusterStatusMap ClusterProber::probe_all(std::span<const std::string> cluster_ids) {
  ClusterStatusMap out;
  for (const auto& id : cluster_ids) out[id] = probe(id);
  return out;
}

void ClusterProber::invalidate() {
  std::lock_guard lock(mu_);
  cache_.clear();
}

std::uint64_t ClusterProber::queries() const {
  std::lock_guard lock(mu_);
  return queries_;
}

std::string route(const std::string& model, const Registry& registry, const ActiveInstances& active,
                  ClusterProber& prober) {
  auto entry = registry.model(model);
  if (!entry) throw Error(ErrorCode::kNoEndpoint, "model '" + model + "' has no endpoint");
  ClusterStatusMap clusters;
  for (const auto& ep_id : entry->endpoints) {
    auto ep = registry.endpoint(ep_id);
    if (ep && !clusters.contains(ep->cluster_id)) clusters[ep->cluster_id] = prober.probe(ep->cluster_id);
  }
  return select_endpoint(model, registry, active, clusters);
}

}  // namespace fedgate::router
