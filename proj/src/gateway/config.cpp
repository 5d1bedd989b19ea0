#include "fedgate/gateway/config.hpp"

#include <fstream>
#include <stdexcept>

namespace fedgate::gateway {

using nlohmann::json;

namespace {

Duration seconds_field(const json& j, const char* key, Duration fallback) {
  if (!j.contains(key)) return fallback;
  return from_seconds(j.at(key).get<double>());
}

auth::GroupSet groups_field(const json& j, const char* key) {
  auth::GroupSet out;
  if (!j.contains(key)) return out;
  for (const auto& g : j.at(key)) out.insert(g.get<std::string>());
  return out;
}

backends::BackendProfile parse_backend(const json& j) {
  backends::BackendProfile p;
  const std::string kind = j.value("kind", "mock");
  if (kind == "mock") {
    p.kind = backends::BackendKind::kMock;
  } else if (kind == "passthrough") {
    p.kind = backends::BackendKind::kPassthrough;
  } else {
    throw std::invalid_argument("backend.kind must be mock or passthrough, got " + kind);
  }
  p.service_rate = j.value("service_rate", p.service_rate);
  p.per_request_overhead = seconds_field(j, "per_request_overhead_s", p.per_request_overhead);
  p.default_output_tokens = j.value("default_output_tokens", p.default_output_tokens);
  p.base_url = j.value("base_url", p.base_url);
  p.timeout = seconds_field(j, "timeout_s", p.timeout);
  return p;
}

}  // namespace

ModelDecl parse_model(const json& m) {
  ModelDecl d;
  d.spec.name = m.at("name").get<std::string>();
  d.spec.params_billions = m.value("params_billions", 8.0);
  d.spec.bytes_per_param = m.value("bytes_per_param", 2.0);
  d.spec.gpus_required = m.value("gpus_required", 1);
  const std::string kind = m.value("kind", "chat");
  if (kind == "chat") {
    d.spec.kind = router::ModelKind::kChat;
  } else if (kind == "embedding") {
    d.spec.kind = router::ModelKind::kEmbedding;
  } else {
    throw std::invalid_argument("models[].kind must be chat or embedding, got " + kind);
  }
  d.spec.embedding_dim = m.value("embedding_dim", 0);
  d.spec.max_output_tokens = m.value("max_output_tokens", d.spec.max_output_tokens);
  if (m.contains("backend")) d.spec.backend = parse_backend(m.at("backend"));
  if (m.contains("endpoints")) d.endpoints = m.at("endpoints").get<std::vector<std::string>>();
  d.required_groups = groups_field(m, "required_groups");
  d.spec.validate();
  return d;
}

ServiceConfig parse_config(const json& j) {
  ServiceConfig c;
  try {
    if (j.contains("listen")) {
      const auto& l = j.at("listen");
      c.host = l.value("host", c.host);
      c.port = l.value("port", c.port);
    }
    const std::string clock = j.value("clock", "virtual");
    if (clock == "virtual") {
      c.clock = ClockMode::kVirtual;
    } else if (clock == "wall") {
      c.clock = ClockMode::kWall;
    } else {
      throw std::invalid_argument("clock must be virtual or wall");
    }
    c.seed = j.value("seed", c.seed);

    if (j.contains("auth")) {
      const auto& a = j.at("auth");
      c.auth.cache_enabled = a.value("cache_enabled", c.auth.cache_enabled);
      c.auth.cache_ttl = seconds_field(a, "cache_ttl_s", c.auth.cache_ttl);
      c.token_ttl = seconds_field(a, "token_ttl_s", c.token_ttl);
      c.admin_group = a.value("admin_group", c.admin_group);
      if (a.contains("provider")) {
        const auto& p = a.at("provider");
        c.identity_kind = p.value("kind", c.identity_kind);
        c.identity_url = p.value("url", c.identity_url);
        c.identity_delay = seconds_field(p, "delay_s", c.identity_delay);
        if (c.identity_kind != "embedded" && c.identity_kind != "http") {
          throw std::invalid_argument("auth.provider.kind must be embedded or http");
        }
      }
    }
    if (j.contains("rate_limit")) {
      const auto& r = j.at("rate_limit");
      c.rate_limit.enabled = r.value("enabled", c.rate_limit.enabled);
      c.rate_limit.capacity = r.value("capacity", c.rate_limit.capacity);
      c.rate_limit.refill_per_s = r.value("refill_per_s", c.rate_limit.refill_per_s);
    }
    if (j.contains("gateway")) {
      const auto& g = j.at("gateway");
      c.max_pending = g.value("max_pending", c.max_pending);
      c.request_timeout = seconds_field(g, "request_timeout_s", c.request_timeout);
      c.jobs_include_stopped = g.value("jobs_include_stopped", c.jobs_include_stopped);
      c.metrics_window = seconds_field(g, "metrics_window_s", c.metrics_window);
    }
    if (j.contains("telemetry")) {
      const auto& t = j.at("telemetry");
      c.telemetry.log_path = t.value("log_path", c.telemetry.log_path);
      c.telemetry.flush_interval = seconds_field(t, "flush_interval_s", c.telemetry.flush_interval);
      c.telemetry.max_bytes = t.value("max_bytes", c.telemetry.max_bytes);
    }
    if (j.contains("fabric")) {
      const auto& f = j.at("fabric");
      c.fabric.tick = seconds_field(f, "tick_s", c.fabric.tick);
      c.fabric.idle_timeout = seconds_field(f, "idle_timeout_s", c.fabric.idle_timeout);
      c.fabric.retry_cap = f.value("retry_cap", c.fabric.retry_cap);
      c.fabric.launch_overhead = seconds_field(f, "launch_overhead_s", c.fabric.launch_overhead);
      c.fabric.load_base = seconds_field(f, "load_base_s", c.fabric.load_base);
      c.fabric.load_bandwidth = f.value("load_bandwidth_bytes_per_s", c.fabric.load_bandwidth);
      c.fabric.scale_on_submit = f.value("scale_on_submit", c.fabric.scale_on_submit);
      c.fabric.queue_when_saturated = f.value("queue_when_saturated", c.fabric.queue_when_saturated);
      c.probe_interval = seconds_field(f, "probe_interval_s", c.probe_interval);
    }
    c.fabric.seed = c.seed;

    for (const auto& cl : j.value("clusters", json::array())) {
      fabric::ClusterConfig cc;
      cc.id = cl.at("id").get<std::string>();
      cc.nodes = cl.value("nodes", cc.nodes);
      cc.gpus_per_node = cl.value("gpus_per_node", cc.gpus_per_node);
      if (cl.contains("vram_per_gpu_gb")) {
        cc.vram_per_gpu = static_cast<std::uint64_t>(cl.at("vram_per_gpu_gb").get<double>() * 1e9);
      }
      c.clusters.push_back(cc);
    }
    for (const auto& ep : j.value("endpoints", json::array())) {
      router::EndpointSpec e;
      e.endpoint_id = ep.at("id").get<std::string>();
      e.cluster_id = ep.at("cluster").get<std::string>();
      e.max_instances_per_model = ep.value("max_instances_per_model", e.max_instances_per_model);
      e.max_parallel_per_instance = ep.value("max_parallel_per_instance", e.max_parallel_per_instance);
      if (ep.contains("functions")) {
        e.functions.clear();
        for (const auto& fn : ep.at("functions")) e.functions.insert(fn.get<std::string>());
      }
      c.endpoints.push_back(e);
    }
    for (const auto& m : j.value("models", json::array())) c.models.push_back(parse_model(m));
    for (const auto& f : j.value("faults", json::array())) {
      c.faults.push_back(FaultDecl{f.at("at_s").get<double>(), f.at("model").get<std::string>(),
                                   f.at("endpoint").get<std::string>()});
    }
    for (const auto& u : j.value("users", json::array())) {
      c.users.push_back(UserDecl{u.at("subject").get<std::string>(), groups_field(u, "groups")});
    }
    if (j.contains("batch")) {
      const auto& b = j.at("batch");
      c.batch_max_lines = b.value("max_lines", c.batch_max_lines);
      c.batch_store_dir = b.value("store_dir", c.batch_store_dir);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return c;
}

ServiceConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  return parse_config(j);
}

ServiceConfig default_config() {
  ServiceConfig c;
  c.clusters.push_back(fabric::ClusterConfig{"sophia", 24, 8, 40ULL * 1000 * 1000 * 1000});
  router::EndpointSpec ep;
  ep.endpoint_id = "sophia-vllm";
  ep.cluster_id = "sophia";
  ep.max_instances_per_model = 4;
  ep.max_parallel_per_instance = 16;
  c.endpoints.push_back(ep);

  ModelDecl big;
  big.spec.name = "meta-llama/Llama-3.3-70B-Instruct";
  big.spec.params_billions = 70;
  big.spec.gpus_required = 4;
  big.spec.backend.service_rate = 1432;
  big.endpoints = {"sophia-vllm"};
  c.models.push_back(big);

  ModelDecl small;
  small.spec.name = "meta-llama/Llama-3.1-8B-Instruct";
  small.spec.params_billions = 8;
  small.spec.gpus_required = 1;
  small.spec.backend.service_rate = 3283;
  small.endpoints = {"sophia-vllm"};
  c.models.push_back(small);

  ModelDecl emb;
  emb.spec.name = "nvidia/NV-Embed-v2";
  emb.spec.params_billions = 7.85;
  emb.spec.gpus_required = 1;
  emb.spec.kind = router::ModelKind::kEmbedding;
  emb.spec.embedding_dim = 16;
  emb.spec.backend.service_rate = 20000;
  emb.endpoints = {"sophia-vllm"};
  c.models.push_back(emb);

  c.users.push_back(UserDecl{"admin@example.org", {"admin"}});
  return c;
}

}  // namespace fedgate::gateway
