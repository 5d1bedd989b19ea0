#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "fedgate/auth/authenticator.hpp"
#include "fedgate/fabric/fabric.hpp"
#include "fedgate/gateway/rate_limiter.hpp"
#include "fedgate/router/registry.hpp"
#include "fedgate/sim/event_loop.hpp"
#include "fedgate/telemetry/store.hpp"

namespace fedgate::gateway {

struct ModelDecl {
  router::ModelSpec spec;
  std::vector<std::string> endpoints;
  auth::GroupSet required_groups;
};

struct FaultDecl {
  double at_s = 0.0;
  std::string model;
  std::string endpoint;
};

struct UserDecl {
  std::string subject;
  auth::GroupSet groups;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  ClockMode clock = ClockMode::kVirtual;
  std::uint64_t seed = 42;

  auth::AuthConfig auth;
  Duration token_ttl = auth::kDefaultTokenTtl;
  std::string identity_kind = "embedded";  // embedded | http
  std::string identity_url;                // http only
  Duration identity_delay{0};              // embedded only
  std::string admin_group = "admin";

  RateLimitConfig rate_limit;

  std::size_t max_pending = 10000;
  Duration request_timeout = std::chrono::seconds(300);
  bool jobs_include_stopped = false;
  Duration metrics_window = std::chrono::seconds(60);

  telemetry::TelemetryConfig telemetry;
  fabric::FabricConfig fabric;
  Duration probe_interval = std::chrono::seconds(2);

  std::vector<fabric::ClusterConfig> clusters;
  std::vector<router::EndpointSpec> endpoints;
  std::vector<ModelDecl> models;
  std::vector<FaultDecl> faults;
  std::vector<UserDecl> users;

  std::size_t batch_max_lines = 100000;
  std::string batch_store_dir;  // empty: in-memory file store
};

/// Parses the service/scenario file. Unknown keys are ignored; missing keys
/// keep their defaults. Throws std::invalid_argument with the offending path.
ServiceConfig parse_config(const nlohmann::json& j);
ServiceConfig load_config(const std::string& path);

ModelDecl parse_model(const nlohmann::json& j);

/// One 24-node cluster, one endpoint and three mock models.
ServiceConfig default_config();

}  // namespace fedgate::gateway
