#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "fedgate/gateway/config.hpp"
#include "fedgate/gateway/gateway.hpp"

namespace fedgate::testing {

inline router::EndpointSpec make_endpoint(const std::string& id, const std::string& cluster, int max_instances = 1,
                                          int parallel = 16) {
  router::EndpointSpec e;
  e.endpoint_id = id;
  e.cluster_id = cluster;
  e.max_instances_per_model = max_instances;
  e.max_parallel_per_instance = parallel;
  return e;
}

inline router::ModelSpec make_model(const std::string& name, double params_b = 8, int gpus = 1,
                                    double rate = 1000) {
  router::ModelSpec s;
  s.name = name;
  s.params_billions = params_b;
  s.gpus_required = gpus;
  s.backend.service_rate = rate;
  return s;
}

/// One 8-node cluster, one endpoint, one 8B chat model "m".
inline gateway::ServiceConfig small_config(double rate = 1000, int max_instances = 1, int parallel = 16) {
  gateway::ServiceConfig c;
  c.clock = ClockMode::kVirtual;
  c.rate_limit.enabled = false;
  c.clusters.push_back(fabric::ClusterConfig{"c0", 8, 8, 40ULL * 1000 * 1000 * 1000});
  c.endpoints.push_back(make_endpoint("ep0", "c0", max_instances, parallel));
  gateway::ModelDecl m;
  m.spec = make_model("m", 8, 1, rate);
  m.endpoints = {"ep0"};
  c.models.push_back(m);
  gateway::ModelDecl e;
  e.spec = make_model("emb", 1, 1, 20000);
  e.spec.kind = router::ModelKind::kEmbedding;
  e.spec.embedding_dim = 16;
  e.endpoints = {"ep0"};
  c.models.push_back(e);
  c.users.push_back({"admin@example.org", {"admin"}});
  return c;
}

using SinkPtr = std::shared_ptr<gateway::RecordingSink>;

inline SinkPtr call(gateway::Gateway& gw, const std::string& method, const std::string& path,
                    const std::string& token, const std::string& body = {},
                    std::map<std::string, std::string> query = {}) {
  auto& loop = gw.loop();
  auto sink = std::make_shared<gateway::RecordingSink>([&loop] { return loop.now(); });
  gateway::HttpRequest req;
  req.method = method;
  req.path = path;
  if (!token.empty()) req.headers["authorization"] = "Bearer " + token;
  req.body = body;
  req.query = std::move(query);
  gw.handle(std::move(req), sink);
  return sink;
}

inline nlohmann::json chat_body(const std::string& model, int max_tokens, bool stream = false,
                                const std::string& content = "hello") {
  return {{"model", model},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})},
          {"max_tokens", max_tokens},
          {"stream", stream}};
}

inline void run_until_finished(gateway::Gateway& gw, const SinkPtr& s) {
  gw.loop().run_while([&] { return !s->finished; });
}

}  // namespace fedgate::testing
