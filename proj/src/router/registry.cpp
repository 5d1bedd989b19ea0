#include "fedgate/router/registry.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <stdexcept>

#include "fedgate/errors.hpp"

namespace fedgate::router {

std::uint64_t ModelSpec::weight_bytes() const {
  return static_cast<std::uint64_t>(std::llround(params_billions * 1e9 * bytes_per_param));
}

void ModelSpec::validate() const {
  if (name.empty()) throw std::invalid_argument("model name is empty");
  if (gpus_required < 1) throw std::invalid_argument("gpus_required must be >= 1 for " + name);
  if (!(params_billions > 0.0) || !(bytes_per_param > 0.0) || weight_bytes() == 0) {
    throw std::invalid_argument("weight_bytes must be positive for " + name);
  }
  if (kind == ModelKind::kEmbedding && embedding_dim < 1) {
    throw std::invalid_argument("embedding model needs embedding_dim >= 1: " + name);
  }
  if (max_output_tokens < 1) throw std::invalid_argument("max_output_tokens must be >= 1 for " + name);
  backend.validate();
}

void Registry::add_endpoint(EndpointSpec spec) {
  if (spec.endpoint_id.empty()) throw std::invalid_argument("endpoint id is empty");
  if (spec.max_instances_per_model < 1 || spec.max_parallel_per_instance < 1) {
    throw std::invalid_argument("endpoint " + spec.endpoint_id + " needs positive instance/parallel limits");
  }
  std::unique_lock lock(mu_);
  if (!endpoints_.contains(spec.endpoint_id)) endpoint_order_.push_back(spec.endpoint_id);
  endpoints_[spec.endpoint_id] = std::move(spec);
  ++version_;
}

void Registry::register_model(ModelSpec spec, std::vector<std::string> endpoints, auth::GroupSet required_groups) {
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw Error(ErrorCode::kValidation, e.what());
  }
  if (endpoints.empty()) throw Error(ErrorCode::kValidation, "model " + spec.name + " lists no endpoints");
  std::unique_lock lock(mu_);
  if (models_.contains(spec.name)) throw Error(ErrorCode::kDuplicateModel, "model " + spec.name + " already registered");
  std::set<std::string> seen;
  for (const auto& ep : endpoints) {
    if (!endpoints_.contains(ep)) throw Error(ErrorCode::kValidation, "unknown endpoint " + ep);
    if (!seen.insert(ep).second) throw Error(ErrorCode::kValidation, "endpoint " + ep + " listed twice");
  }
  const std::string name = spec.name;
  policy_.set(name, required_groups);
  models_.emplace(name, ModelEntry{std::move(spec), std::move(endpoints), std::move(required_groups)});
  model_order_.push_back(name);
  ++version_;
}

std::optional<ModelEntry> Registry::model(const std::string& name) const {
  std::shared_lock lock(mu_);
  auto it = models_.find(name);
  if (it == models_.end()) return std::nullopt;
  return it->second;
}

std::optional<EndpointSpec> Registry::endpoint(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = endpoints_.find(id);
  if (it == endpoints_.end()) return std::nullopt;
  return it->second;
}

std::vector<ModelEntry> Registry::models() const {
  std::shared_lock lock(mu_);
  std::vector<ModelEntry> out;
  out.reserve(model_order_.size());
  for (const auto& n : model_order_) out.push_back(models_.at(n));
  return out;
}

std::vector<EndpointSpec> Registry::endpoints() const {
  std::shared_lock lock(mu_);
  std::vector<EndpointSpec> out;
  for (const auto& id : endpoint_order_) out.push_back(endpoints_.at(id));
  return out;
}

std::vector<std::string> Registry::hosted_models(const std::string& endpoint_id) const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& n : model_order_) {
    const auto& eps = models_.at(n).endpoints;
    if (std::find(eps.begin(), eps.end(), endpoint_id) != eps.end()) out.push_back(n);
  }
  return out;
}

int Registry::config_index(const std::string& model, const std::string& endpoint_id) const {
  std::shared_lock lock(mu_);
  auto it = models_.find(model);
  if (it == models_.end()) return -1;
  const auto& eps = it->second.endpoints;
  auto pos = std::find(eps.begin(), eps.end(), endpoint_id);
  return pos == eps.end() ? -1 : static_cast<int>(pos - eps.begin());
}

auth::Decision Registry::authorize(const auth::Principal& principal, const std::string& model) const {
  std::shared_lock lock(mu_);
  return auth::authorize(principal, model, policy_);
}

std::uint64_t Registry::version() const {
  std::shared_lock lock(mu_);
  return version_;
}

}  // namespace fedgate::router
