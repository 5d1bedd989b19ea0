#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "fedgate/auth/policy.hpp"
#include "fedgate/backends/profile.hpp"

namespace fedgate::router {

enum class ModelKind { kChat, kEmbedding };

/// A hosted model. Weight size is derived from the parameter count.
struct ModelSpec {
  std::string name;
  double params_billions = 0.0;
  double bytes_per_param = 2.0;
  int gpus_required = 1;
  ModelKind kind = ModelKind::kChat;
  int embedding_dim = 0;
  int max_output_tokens = 4096;
  backends::BackendProfile backend;

  std::uint64_t weight_bytes() const;
  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

struct EndpointSpec {
  std::string endpoint_id;
  std::string cluster_id;
  int max_instances_per_model = 1;
  int max_parallel_per_instance = 16;
  std::set<std::string> functions{"infer_v1", "embed_v1"};
};

struct ModelEntry {
  ModelSpec spec;
  // Endpoint ids in configuration order; the position is the config_index.
  std::vector<std::string> endpoints;
  auth::GroupSet required_groups;
};

/// Model/endpoint registry. Concurrent readers, serialized writers; every
/// write bumps `version()`.
class Registry {
 public:
  void add_endpoint(EndpointSpec spec);

  /// Throws Error(kDuplicateModel) on a name clash, Error(kValidation) for
  /// empty or unknown endpoint lists or invalid specs.
  void register_model(ModelSpec spec, std::vector<std::string> endpoints, auth::GroupSet required_groups = {});

  std::optional<ModelEntry> model(const std::string& name) const;
  std::optional<EndpointSpec> endpoint(const std::string& id) const;
  std::vector<ModelEntry> models() const;  // registration order
  std::vector<EndpointSpec> endpoints() const;
  std::vector<std::string> hosted_models(const std::string& endpoint_id) const;
  /// Position of `endpoint_id` in the model's endpoint list, or -1.
  int config_index(const std::string& model, const std::string& endpoint_id) const;

  auth::Decision authorize(const auth::Principal& principal, const std::string& model) const;

  std::uint64_t version() const;

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, EndpointSpec> endpoints_;
  std::vector<std::string> endpoint_order_;
  std::map<std::string, ModelEntry> models_;
  std::vector<std::string> model_order_;
  auth::AccessPolicy policy_;
  std::uint64_t version_ = 0;
};

}  // namespace fedgate::router
