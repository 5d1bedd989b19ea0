#include "fedgate/fabric/cluster.hpp"

#include <algorithm>
#include <stdexcept>

namespace fedgate::fabric {

Cluster::Cluster(ClusterConfig config) : config_(std::move(config)) {
  if (config_.nodes < 1 || config_.gpus_per_node < 1) throw std::invalid_argument("cluster needs nodes and GPUs");
  nodes_.reserve(static_cast<std::size_t>(config_.nodes));
  for (int n = 0; n < config_.nodes; ++n) {
    Node node;
    node.node_id = n;
    node.gpu_count = config_.gpus_per_node;
    node.vram_per_gpu = config_.vram_per_gpu;
    for (int g = 0; g < node.gpu_count; ++g) node.gpu_free.push_back(g);
    node.owner.assign(static_cast<std::size_t>(node.gpu_count), kNoInstance);
    nodes_.push_back(std::move(node));
  }
}

bool Cluster::could_ever_fit(int gpus) const {
  if (gpus <= config_.gpus_per_node) return true;
  const int whole = (gpus + config_.gpus_per_node - 1) / config_.gpus_per_node;
  return whole <= config_.nodes;
}

std::optional<std::vector<GpuSlot>> Cluster::allocate(int gpus, InstanceId owner) {
  if (gpus < 1) return std::nullopt;
  std::vector<GpuSlot> slots;
  const int per_node = config_.gpus_per_node;
  if (gpus <= per_node) {
    for (auto& node : nodes_) {
      if (static_cast<int>(node.gpu_free.size()) < gpus) continue;
      for (int i = 0; i < gpus; ++i) {
        const int g = node.gpu_free[static_cast<std::size_t>(i)];
        slots.push_back({node.node_id, g});
        node.owner[static_cast<std::size_t>(g)] = owner;
      }
      node.gpu_free.erase(node.gpu_free.begin(), node.gpu_free.begin() + gpus);
      return slots;
    }
    return std::nullopt;
  }
  const int whole = (gpus + per_node - 1) / per_node;
  std::vector<Node*> chosen;
  for (auto& node : nodes_) {
    if (node.fully_free()) chosen.push_back(&node);
    if (static_cast<int>(chosen.size()) == whole) break;
  }
  if (static_cast<int>(chosen.size()) < whole) return std::nullopt;
  for (Node* node : chosen) {
    for (int g : node->gpu_free) {
      slots.push_back({node->node_id, g});
      node->owner[static_cast<std::size_t>(g)] = owner;
    }
    node->gpu_free.clear();
  }
  return slots;
}

void Cluster::release(std::span<const GpuSlot> slots, InstanceId owner) {
  for (const auto& s : slots) {
    auto& node = nodes_.at(static_cast<std::size_t>(s.node_id));
    auto& o = node.owner.at(static_cast<std::size_t>(s.gpu));
    if (o != owner) throw std::logic_error("releasing a GPU not owned by the instance");
    o = kNoInstance;
    node.gpu_free.insert(std::lower_bound(node.gpu_free.begin(), node.gpu_free.end(), s.gpu), s.gpu);
  }
}

int Cluster::free_nodes() const {
  return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.fully_free(); }));
}

int Cluster::free_gpus() const {
  int n = 0;
  for (const auto& node : nodes_) n += static_cast<int>(node.gpu_free.size());
  return n;
}

router::ClusterStatus Cluster::status(Instant now) const {
  router::ClusterStatus s;
  s.cluster_id = config_.id;
  s.total_nodes = config_.nodes;
  s.free_nodes = free_nodes();
  s.queued_jobs = static_cast<int>(queue_.size());
  s.gpus_per_node = config_.gpus_per_node;
  s.observed_at = now;
  return s;
}

bool Cluster::check_gpu_partition(std::string* why) const {
  for (const auto& node : nodes_) {
    std::vector<int> seen(static_cast<std::size_t>(node.gpu_count), 0);
    for (int g : node.gpu_free) {
      if (g < 0 || g >= node.gpu_count || node.owner[static_cast<std::size_t>(g)] != kNoInstance) {
        if (why) *why = "node " + std::to_string(node.node_id) + ": free GPU " + std::to_string(g) + " has an owner";
        return false;
      }
      ++seen[static_cast<std::size_t>(g)];
    }
    for (int g = 0; g < node.gpu_count; ++g) {
      const bool owned = node.owner[static_cast<std::size_t>(g)] != kNoInstance;
      if (seen[static_cast<std::size_t>(g)] + (owned ? 1 : 0) != 1) {
        if (why) *why = "node " + std::to_string(node.node_id) + ": GPU " + std::to_string(g) + " not partitioned";
        return false;
      }
    }
  }
  return true;
}

}  // namespace fedgate::fabric
