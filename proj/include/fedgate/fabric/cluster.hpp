#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedgate/router/selection.hpp"
#include "fedgate/sim/time.hpp"

namespace fedgate::fabric {

using InstanceId = std::int64_t;
inline constexpr InstanceId kNoInstance = -1;

struct GpuSlot {
  int node_id = 0;
  int gpu = 0;
  friend bool operator==(const GpuSlot&, const GpuSlot&) = default;
};

struct ClusterConfig {
  std::string id;
  int nodes = 24;
  int gpus_per_node = 8;
  std::uint64_t vram_per_gpu = 40ULL * 1000 * 1000 * 1000;
};

struct Node {
  int node_id = 0;
  int gpu_count = 8;
  std::uint64_t vram_per_gpu = 0;
  std::vector<int> gpu_free;         // ascending GPU indices
  std::vector<InstanceId> owner;     // per GPU; kNoInstance when free

  bool fully_free() const { return static_cast<int>(gpu_free.size()) == gpu_count; }
};

struct AllocationJob {
  InstanceId instance = kNoInstance;
  int gpus = 1;
  Instant submitted_at{};
};

/// One batch-scheduled cluster: nodes with GPUs and a strict-FIFO queue of
/// node-allocation jobs.
class Cluster {
 public:
  explicit Cluster(ClusterConfig config);

  const ClusterConfig& config() const { return config_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// First fit in node_id order. Requests up to one node's GPUs go to the
  /// first node with enough free GPUs (lowest indices first); larger
  /// requests take ceil(g / gpus_per_node) whole free nodes. Returns nullopt
  /// without mutating anything when the request cannot be placed now.
  std::optional<std::vector<GpuSlot>> allocate(int gpus, InstanceId owner);
  void release(std::span<const GpuSlot> slots, InstanceId owner);

  /// True when a request of this size could ever be placed on this cluster.
  bool could_ever_fit(int gpus) const;

  int free_nodes() const;
  int free_gpus() const;
  router::ClusterStatus status(Instant now) const;

  std::deque<AllocationJob>& queue() { return queue_; }
  const std::deque<AllocationJob>& queue() const { return queue_; }

  /// Free and assigned GPU indices partition {0..gpu_count-1} on every node.
  bool check_gpu_partition(std::string* why = nullptr) const;

 private:
  ClusterConfig config_;
  std::vector<Node> nodes_;
  std::deque<AllocationJob> queue_;
};

}  // namespace fedgate::fabric
