// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria (capped at 255).
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedgate/backends/mock_backend.hpp"
#include "fedgate/bench/bench.hpp"
#include "fedgate/errors.hpp"
#include "fedgate/fabric/fabric.hpp"
#include "fedgate/gateway/config.hpp"
#include "fedgate/gateway/gateway.hpp"
#include "fedgate/router/selection.hpp"
#include "fedgate/task.hpp"

using namespace fedgate;
using nlohmann::json;

namespace {

// Tolerances.
constexpr int kSelectionScenarios = 10'000;
constexpr double kSelectionMaxSeconds = 10.0;
constexpr int kAffinityRequests = 1000;
constexpr std::array<double, 4> kScalingFloor = {1.0, 1.75, 2.52, 2.88};
constexpr double kScalingTolerance = 0.05;
constexpr double kScalingMaxWallSeconds = 120.0;
constexpr double kBatchTargetSeconds = 409.0;
constexpr double kBatchTolerance = 0.05;
constexpr double kBatchAggregateTokPerS = 2117.0;
constexpr int kBatchLines = 1000;
constexpr std::size_t kMinQueued = 8000;
constexpr double kCacheMinSavingS = 1.9;
constexpr double kAccountingRelTol = 0.01;
constexpr double kFuzzHorizonS = 3600.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(prec);
  o << v;
  return o.str();
}

// ---------------------------------------------------------------- fixtures

gateway::ModelDecl chat_model(const std::string& name, double params_b, int gpus, double rate,
                              std::vector<std::string> endpoints) {
  gateway::ModelDecl m;
  m.spec.name = name;
  m.spec.params_billions = params_b;
  m.spec.gpus_required = gpus;
  m.spec.backend.service_rate = rate;
  m.endpoints = std::move(endpoints);
  return m;
}

router::EndpointSpec endpoint(const std::string& id, const std::string& cluster, int max_instances, int parallel) {
  router::EndpointSpec e;
  e.endpoint_id = id;
  e.cluster_id = cluster;
  e.max_instances_per_model = max_instances;
  e.max_parallel_per_instance = parallel;
  return e;
}

gateway::ServiceConfig one_cluster_config(double rate, int max_instances = 4, int parallel = 16) {
  gateway::ServiceConfig c;
  c.clock = ClockMode::kVirtual;
  c.rate_limit.enabled = false;
  c.clusters.push_back(fabric::ClusterConfig{"c0", 8, 8, 40ULL * 1000 * 1000 * 1000});
  c.endpoints.push_back(endpoint("ep0", "c0", max_instances, parallel));
  c.models.push_back(chat_model("m8b", 8, 1, rate, {"ep0"}));
  c.users.push_back({"admin@example.org", {"admin"}});
  return c;
}

std::shared_ptr<gateway::RecordingSink> post_chat(gateway::Gateway& gw, const std::string& token,
                                                  const std::string& model, int max_tokens, bool stream = false) {
  auto& loop = gw.loop();
  auto sink = std::make_shared<gateway::RecordingSink>([&loop] { return loop.now(); });
  gateway::HttpRequest req;
  req.method = "POST";
  req.path = "/v1/chat/completions";
  req.headers["authorization"] = "Bearer " + token;
  req.body = json{{"model", model},
                  {"messages", json::array({json{{"role", "user"}, {"content", "hello there"}}})},
                  {"max_tokens", max_tokens},
                  {"target_tokens", max_tokens},
                  {"stream", stream}}
                 .dump();
  gw.handle(std::move(req), sink);
  return sink;
}

void run_until_running(gateway::Gateway& gw, fabric::InstanceId id) {
  gw.loop().run_while([&] {
    const auto* m = gw.fabric().instance(id);
    return m != nullptr && m->state != fabric::InstanceState::kRunning && m->live();
  });
}

// ------------------------------------------------------ 1. selection oracle

// Priority rules restated independently: an endpoint with a live instance
// of the model, then one whose cluster has free_nodes * gpus_per_node >=
// gpus_required, then the first configured endpoint.
std::string oracle_select(const std::string& model, int gpus, const std::vector<std::string>& eps,
                          const std::map<std::string, std::string>& ep_cluster, const router::ActiveInstances& active,
                          const router::ClusterStatusMap& status) {
  for (const auto& e : eps) {
    for (const auto& [aep, amodel] : active) {
      if (aep == e && amodel == model) return e;
    }
  }
  for (const auto& e : eps) {
    auto it = status.find(ep_cluster.at(e));
    if (it == status.end()) continue;
    if (static_cast<long>(it->second.free_nodes) * it->second.gpus_per_node >= gpus) return e;
  }
  return eps.front();
}

Outcome selection_oracle() {
  std::mt19937_64 rng(20240917);
  const auto wall0 = std::chrono::steady_clock::now();
  int agree = 0;
  std::string first_mismatch;
  for (int s = 0; s < kSelectionScenarios; ++s) {
    router::Registry reg;
    const int n_clusters = 1 + static_cast<int>(rng() % 3);
    const int n_eps = 1 + static_cast<int>(rng() % 4);
    std::map<std::string, std::string> ep_cluster;
    std::vector<std::string> all_eps;
    for (int e = 0; e < n_eps; ++e) {
      // Cluster ids beyond n_clusters have no status entry.
      const std::string cl = "cl" + std::to_string(rng() % (n_clusters + 1));
      const std::string id = "ep" + std::to_string(e);
      reg.add_endpoint(endpoint(id, cl, 4, 16));
      ep_cluster[id] = cl;
      all_eps.push_back(id);
    }
    std::shuffle(all_eps.begin(), all_eps.end(), rng);
    std::vector<std::string> eps(all_eps.begin(), all_eps.begin() + 1 + static_cast<long>(rng() % all_eps.size()));
    router::ModelSpec spec;
    spec.name = "model";
    spec.params_billions = 1;
    spec.gpus_required = 1 + static_cast<int>(rng() % 32);
    reg.register_model(spec, eps);

    router::ActiveInstances active;
    for (const auto& e : all_eps) {
      if (rng() % 4 == 0) active.insert({e, "model"});
      if (rng() % 3 == 0) active.insert({e, "other-model"});
    }
    router::ClusterStatusMap status;
    for (int c = 0; c < n_clusters; ++c) {
      router::ClusterStatus st;
      st.cluster_id = "cl" + std::to_string(c);
      st.total_nodes = 4;
      st.free_nodes = static_cast<int>(rng() % 5);
      st.gpus_per_node = (rng() % 2 == 0) ? 4 : 8;
      status[st.cluster_id] = st;
    }
    const auto got = router::select_endpoint("model", reg, active, status);
    const auto want = oracle_select("model", spec.gpus_required, eps, ep_cluster, active, status);
    if (got == want) {
      ++agree;
    } else if (first_mismatch.empty()) {
      first_mismatch = " first mismatch at scenario " + std::to_string(s) + ": got " + got + " want " + want;
    }
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return {agree == kSelectionScenarios && wall < kSelectionMaxSeconds,
          std::to_string(agree) + "/" + std::to_string(kSelectionScenarios) + " agree in " + fmt(wall) + " s" +
              first_mismatch};
}

// ------------------------------------------------------ 2. routing affinity

Outcome routing_affinity() {
  auto cfg = one_cluster_config(4000);
  cfg.clusters.push_back(fabric::ClusterConfig{"c1", 8, 8, 40ULL * 1000 * 1000 * 1000});
  cfg.endpoints.clear();
  cfg.endpoints.push_back(endpoint("ep0", "c0", 1, 16));
  cfg.endpoints.push_back(endpoint("ep1", "c1", 1, 16));
  cfg.models = {chat_model("m8b", 8, 1, 4000, {"ep0", "ep1"})};
  gateway::Gateway gw(cfg);
  gw.set_routing_log_limit(kAffinityRequests + 10);
  const auto tok = gw.mint_token("user@example.org", {}).raw;
  // The second configured endpoint gets the only instance; every free
  // cluster would otherwise pull traffic to ep0.
  auto ids = gw.fabric().prewarm("m8b", "ep1", 1);
  if (ids.size() != 1) return {false, "prewarm failed"};
  run_until_running(gw, ids[0]);

  std::vector<std::shared_ptr<gateway::RecordingSink>> sinks;
  for (int i = 0; i < kAffinityRequests; ++i) sinks.push_back(post_chat(gw, tok, "m8b", 8));
  gw.loop().run_while([&] { return gw.stats().pending > 0; });

  int on_ep1 = 0;
  for (const auto& e : gw.routing_log()) on_ep1 += e == "ep1" ? 1 : 0;
  int on_instance = 0;
  for (const auto& r : gw.telemetry().records()) on_instance += r.instance_id == ids[0] ? 1 : 0;
  int ok = 0;
  for (const auto& s : sinks) ok += s->status == 200 ? 1 : 0;
  const bool pass = on_ep1 == kAffinityRequests && on_instance == kAffinityRequests && ok == kAffinityRequests;
  return {pass, std::to_string(on_ep1) + "/" + std::to_string(kAffinityRequests) + " routed to the active endpoint, " +
                    std::to_string(on_instance) + " ran on its instance, " + std::to_string(ok) + " ok"};
}

// ------------------------------------------------------ 3. hot/cold split

Outcome hot_cold_split() {
  auto cfg = one_cluster_config(2000, 1, 16);
  gateway::Gateway gw(cfg);
  const auto tok = gw.mint_token("user@example.org", {}).raw;
  const auto spec = gw.registry().model("m8b")->spec;
  const int parallel = 16;
  const int tokens = 100;

  const Instant cold_sent = gw.loop().now();
  auto cold = post_chat(gw, tok, "m8b", tokens);
  gw.loop().run_while([&] { return !cold->finished; });
  const auto records = gw.telemetry().records();
  if (records.size() != 1 || cold->status != 200) return {false, "cold request did not complete"};
  const auto& rc = records[0];
  const Duration cold_latency = *cold->finished_at - cold_sent;
  const Duration decomposed = rc.queue_wait + rc.allocation + rc.load + rc.service;
  const bool cold_ok = cold_latency == decomposed && rc.load == gw.fabric().load_time(spec) &&
                       rc.allocation == gw.fabric().config().launch_overhead &&
                       rc.service == backends::service_time(spec.backend, parallel, tokens);

  const Instant hot_sent = gw.loop().now();
  auto hot = post_chat(gw, tok, "m8b", tokens);
  gw.loop().run_while([&] { return !hot->finished; });
  const Duration hot_latency = *hot->finished_at - hot_sent;
  const Duration expected = backends::service_time(spec.backend, parallel, tokens);
  const Duration tick = gw.fabric().config().tick;
  const auto diff = hot_latency > expected ? hot_latency - expected : expected - hot_latency;
  const auto rh = gw.telemetry().records().back();
  const bool hot_ok = hot->status == 200 && diff <= tick && rh.allocation.count() == 0 && rh.load.count() == 0;

  return {cold_ok && hot_ok,
          "cold " + fmt(to_seconds(cold_latency), 6) + " s = queue " + fmt(to_seconds(rc.queue_wait), 6) + " + alloc " +
              fmt(to_seconds(rc.allocation), 6) + " + load " + fmt(to_seconds(rc.load), 6) + " + service " +
              fmt(to_seconds(rc.service), 6) + "; hot " + fmt(to_seconds(hot_latency), 6) + " s vs service " +
              fmt(to_seconds(expected), 6) + " s"};
}

// ------------------------------------------------------ 4. idle reaper

Outcome idle_reaper() {
  auto cfg = one_cluster_config(2000, 1, 16);
  gateway::Gateway gw(cfg);
  const auto tok = gw.mint_token("user@example.org", {}).raw;
  auto s = post_chat(gw, tok, "m8b", 37);
  gw.loop().run_while([&] { return !s->finished; });
  const auto records = gw.telemetry().records();
  if (records.empty() || s->status != 200) return {false, "request failed"};
  const auto* m = gw.fabric().instance(records[0].instance_id);
  const Instant idle_since = m->last_active_at;
  const int nodes = gw.fabric().cluster("c0").config().nodes;

  gw.loop().run_until(idle_since + std::chrono::seconds(7199));
  const bool alive_7199 = m->state == fabric::InstanceState::kRunning;
  const int free_7199 = gw.fabric().cluster("c0").free_nodes();
  // One microsecond short of the deadline.
  gw.loop().run_until(idle_since + std::chrono::seconds(7200) - Duration{1});
  const bool alive_before = m->state == fabric::InstanceState::kRunning;
  gw.loop().run_until(idle_since + std::chrono::seconds(7200));
  const bool released = m->state == fabric::InstanceState::kReleased &&
                        m->released_at == idle_since + std::chrono::seconds(7200);
  const int free_after = gw.fabric().cluster("c0").free_nodes();
  const bool pass = alive_7199 && alive_before && released && free_7199 == nodes - 1 && free_after == nodes;
  return {pass, std::string("at 7199 s ") + (alive_7199 ? "running" : "gone") + " (free nodes " +
                    std::to_string(free_7199) + "), at 7200 s " + std::string(fabric::to_string(m->state)) +
                    " (free nodes " + std::to_string(free_after) + "/" + std::to_string(nodes) + ")"};
}

// ------------------------------------------------------ 5. auto-scaling

Outcome autoscaling() {
  const auto wall0 = std::chrono::steady_clock::now();
  auto cfg = one_cluster_config(2000, 4, 16);
  bench::SweepSpec sweep;
  sweep.base.model = "m8b";
  sweep.base.n_requests = 1000;
  sweep.base.rate = bench::kInfiniteRate;
  sweep.base.seed = 7;
  sweep.instances = {1, 2, 3, 4};
  auto table = bench::run_sweep(sweep, cfg);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();

  bool pass = wall < kScalingMaxWallSeconds;
  std::string detail;
  double base = 0.0;
  double prev_median = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& p = table[i];
    if (!p.report || p.report->failed > 0) {
      return {false, "sweep point " + std::to_string(p.instances) + " failed: " + p.error};
    }
    const double tput = p.report->output_token_throughput;
    if (i == 0) base = tput;
    const double ratio = tput / base;
    const double floor = kScalingFloor[i] * (1.0 - kScalingTolerance);
    const double median = p.report->median_e2e_latency_s;
    pass = pass && ratio >= floor && median < prev_median && p.report->instances == p.instances;
    prev_median = median;
    detail += std::to_string(p.instances) + "x: " + fmt(tput, 0) + " tok/s (" + fmt(ratio, 2) + "x, floor " +
              fmt(floor, 2) + "), median " + fmt(median, 1) + " s; ";
  }
  detail += "wall " + fmt(wall, 1) + " s";
  return {pass, detail};
}

// ------------------------------------------------------ 6. GPU packing

Outcome gpu_packing() {
  // Co-location on one 8-GPU node.
  EventLoop loop(ClockMode::kVirtual);
  router::Registry reg;
  reg.add_endpoint(endpoint("ep", "one", 1, 16));
  auto spec = [](const std::string& name, double params, int gpus) {
    router::ModelSpec s;
    s.name = name;
    s.params_billions = params;
    s.gpus_required = gpus;
    return s;
  };
  reg.register_model(spec("six", 70, 6), {"ep"});
  reg.register_model(spec("one-a", 8, 1), {"ep"});
  reg.register_model(spec("one-b", 8, 1), {"ep"});
  fabric::Fabric fab(loop, reg);
  fab.add_cluster(fabric::ClusterConfig{"one", 1, 8, 40ULL * 1000 * 1000 * 1000});
  std::vector<fabric::InstanceId> ids = {fab.ensure_instance("six", "ep"), fab.ensure_instance("one-a", "ep"),
                                         fab.ensure_instance("one-b", "ep")};
  loop.run_while([&] {
    for (auto id : ids) {
      if (fab.instance(id)->state != fabric::InstanceState::kRunning) return true;
    }
    return false;
  });
  int gpus_used = 0;
  bool all_running = true;
  for (auto id : ids) {
    all_running = all_running && fab.instance(id)->state == fabric::InstanceState::kRunning;
    gpus_used += static_cast<int>(fab.instance(id)->gpus.size());
  }
  const bool colocated = all_running && gpus_used == 8 && fab.cluster("one").free_gpus() == 0;
  for (auto id : ids) fab.release_instance(id);

  // 405B-class weights against 40 GB x 8 nodes.
  auto big = [&](int gpus) {
    gateway::ServiceConfig c;
    c.clock = ClockMode::kVirtual;
    c.rate_limit.enabled = false;
    // Loading 810 GB takes longer than the default request timeout.
    c.request_timeout = Duration{0};
    c.clusters.push_back(fabric::ClusterConfig{"c40", 4, 8, 40ULL * 1000 * 1000 * 1000});
    c.endpoints.push_back(endpoint("ep", "c40", 1, 16));
    c.models.push_back(chat_model("m405b", 405, gpus, 1000, {"ep"}));
    gateway::Gateway gw(c);
    const auto tok = gw.mint_token("user@example.org", {}).raw;
    auto s = post_chat(gw, tok, "m405b", 4);
    gw.loop().run_while([&] { return !s->finished; });
    std::set<int> nodes;
    int placed_gpus = 0;
    for (const auto* m : gw.fabric().instances()) {
      if (m->running_since) {
        placed_gpus = std::max(placed_gpus, static_cast<int>(m->gpus.size()));
        for (int n : m->node_ids()) nodes.insert(n);
      }
    }
    return std::tuple{s->status, placed_gpus, static_cast<int>(nodes.size())};
  };
  const std::uint64_t weights = static_cast<std::uint64_t>(405e9 * 2);
  const auto [single_status, single_gpus, single_nodes] = big(8);
  const auto [wide20_status, wide20_gpus, wide20_nodes] = big(20);
  const auto [wide_status, wide_gpus, wide_nodes] = big(24);
  const bool big_ok = weights == 810'000'000'000ULL && single_status != 200 && single_gpus == 0 &&
                      wide20_status != 200 && wide_status == 200 && wide_gpus >= 21 && wide_nodes >= 3;
  // About 16 GB of weights for an 8B model in 16-bit.
  router::ModelSpec small = spec("m8b", 8, 1);
  const bool small_ok = small.weight_bytes() == 16'000'000'000ULL;
  return {colocated && big_ok && small_ok,
          "6+1+1 on one node: " + std::to_string(gpus_used) + " GPUs used, " +
              std::to_string(fab.cluster("one").free_gpus()) + " free after release; 405B on 8 GPUs -> " +
              std::to_string(single_status) + ", on 20 -> " + std::to_string(wide20_status) + ", on 24 -> " +
              std::to_string(wide_status) + " across " + std::to_string(wide_nodes) + " nodes"};
}

// ------------------------------------------------------ 7. batch calibration

Outcome batch_calibration() {
  auto cfg = one_cluster_config(kBatchAggregateTokPerS, 4, 16);
  bench::WorkloadSpec w;
  w.model = "m8b";
  w.mode = bench::Mode::kBatch;
  w.n_requests = kBatchLines;
  w.lengths.fixed = true;
  w.lengths.prompt_tokens = 64;
  // Same total output as the reference run: 2117 tok/s for 409 s.
  w.lengths.output_tokens = static_cast<int>(std::lround(kBatchAggregateTokPerS * kBatchTargetSeconds / kBatchLines));
  auto report = bench::run_inproc(w, cfg);
  const double processing = report.batch_processing_s.value_or(-1);
  const double lo = kBatchTargetSeconds * (1 - kBatchTolerance);
  const double hi = kBatchTargetSeconds * (1 + kBatchTolerance);
  std::set<int> ids;
  for (const auto& r : report.records) {
    if (r.ok()) ids.insert(r.index);
  }
  const bool pass = processing >= lo && processing <= hi && static_cast<int>(ids.size()) == kBatchLines &&
                    report.succeeded == kBatchLines;
  return {pass, "processing " + fmt(processing, 1) + " s (window " + fmt(lo, 1) + ".." + fmt(hi, 1) + "), cold start " +
                    fmt(report.cold_start_s.value_or(-1), 1) + " s, " + std::to_string(ids.size()) +
                    " custom_ids in output, " + fmt(report.output_token_throughput, 0) + " tok/s"};
}

// ------------------------------------------------------ 8. queueing capacity

Outcome queueing_capacity() {
  // One pre-warmed instance serving ~70 req/s against 100 req/s offered.
  auto cfg = one_cluster_config(70.0 * 64, 1, 16);
  cfg.max_pending = 10000;
  cfg.request_timeout = Duration{0};
  bench::WorkloadSpec w;
  w.model = "m8b";
  w.n_requests = 100 * 300;
  w.rate = 100;
  w.lengths.fixed = true;
  w.lengths.prompt_tokens = 32;
  w.lengths.output_tokens = 64;
  w.users = 20;
  bench::InprocOptions opts;
  opts.prewarm_instances = 1;
  opts.max_instances = 1;
  opts.disable_rate_limit = false;
  auto report = bench::run_inproc(w, cfg, opts);
  const bool pass = report.peak_pending >= kMinQueued && report.rejected == 0 && report.failed == 0 &&
                    report.succeeded == w.n_requests;
  return {pass, "peak pending " + std::to_string(report.peak_pending) + ", rejected " +
                    std::to_string(report.rejected) + ", completed " + std::to_string(report.succeeded) + "/" +
                    std::to_string(w.n_requests) + " by t=" + fmt(report.duration_s, 0) + " s"};
}

// ------------------------------------------------------ 9. token cache

Outcome token_cache() {
  auto run = [](bool cache) {
    auto cfg = one_cluster_config(2000, 1, 16);
    cfg.identity_delay = std::chrono::seconds(2);
    cfg.auth.cache_enabled = cache;
    bench::WorkloadSpec w;
    w.model = "m8b";
    w.n_requests = 200;
    w.concurrency = 1;  // one client reusing one token
    w.lengths.fixed = true;
    w.lengths.output_tokens = 32;
    bench::InprocOptions opts;
    opts.prewarm_instances = 1;
    return bench::run_inproc(w, cfg, opts);
  };
  const auto off = run(false);
  const auto on = run(true);
  const double saving = off.mean_e2e_latency_s - on.mean_e2e_latency_s;
  const double median_saving = off.median_e2e_latency_s - on.median_e2e_latency_s;
  const bool pass = saving >= kCacheMinSavingS && median_saving >= kCacheMinSavingS && off.failed == 0 && on.failed == 0;
  return {pass, "mean latency " + fmt(off.mean_e2e_latency_s) + " s uncached vs " + fmt(on.mean_e2e_latency_s) +
                    " s cached (saving " + fmt(saving) + " s, median saving " + fmt(median_saving) + " s)"};
}

// ------------------------------------------------------ 10. accounting

Outcome accounting() {
  auto cfg = one_cluster_config(3000, 3, 16);
  std::string detail;
  bool pass = true;
  auto check = [&](const std::string& label, bench::WorkloadSpec w, bench::InprocOptions opts) {
    auto r = bench::run_inproc(w, cfg, opts);
    const std::int64_t harness_tokens = r.output_tokens;
    const bool tokens_ok = r.telemetry_completion_tokens == r.backend_tokens && r.backend_tokens == harness_tokens;
    bool rates_ok = true;
    if (w.mode == bench::Mode::kOnline) {
      const double rq = std::abs(*r.store_request_throughput - r.request_throughput) / r.request_throughput;
      const double tk = std::abs(*r.store_output_token_throughput - r.output_token_throughput) / r.output_token_throughput;
      rates_ok = rq <= kAccountingRelTol && tk <= kAccountingRelTol;
      detail += label + ": tokens telemetry=" + std::to_string(*r.telemetry_completion_tokens) + " backend=" +
                std::to_string(*r.backend_tokens) + " harness=" + std::to_string(harness_tokens) + ", req/s store " +
                fmt(*r.store_request_throughput) + " vs " + fmt(r.request_throughput) + ", tok/s store " +
                fmt(*r.store_output_token_throughput, 1) + " vs " + fmt(r.output_token_throughput, 1) + "; ";
    } else {
      detail += label + ": tokens telemetry=" + std::to_string(*r.telemetry_completion_tokens) + " backend=" +
                std::to_string(*r.backend_tokens) + " harness=" + std::to_string(harness_tokens) + "; ";
    }
    pass = pass && tokens_ok && rates_ok && r.failed == 0;
  };
  bench::WorkloadSpec w;
  w.model = "m8b";
  w.n_requests = 1000;
  w.seed = 11;
  w.rate = 20;
  check("open-loop", w, {});
  w.rate = bench::kInfiniteRate;
  w.stream = true;
  w.seed = 12;
  bench::InprocOptions warm;
  warm.prewarm_instances = 2;
  check("burst-stream", w, warm);
  w.stream = false;
  w.mode = bench::Mode::kBatch;
  w.n_requests = 300;
  check("batch", w, {});
  return {pass, detail};
}

// ------------------------------------------------------ 11. fuzzed invariants

class FuzzSink final : public gateway::ResponseSink {
 public:
  void send(int s, const std::string&, std::string, const gateway::Headers&) override {
    status = s;
    ++terminals;
  }
  void start_stream() override {
    status = 200;
    ++starts;
  }
  void stream_event(std::string) override { ++events; }
  void end_stream() override { ++terminals; }
  bool closed() const override { return client_gone; }

  int status = 0;
  int terminals = 0;
  int starts = 0;
  int events = 0;
  bool client_gone = false;
};

Outcome fuzz_invariants() {
  gateway::ServiceConfig c;
  c.clock = ClockMode::kVirtual;
  c.seed = 99;
  c.rate_limit.enabled = true;
  c.rate_limit.capacity = 20;
  c.rate_limit.refill_per_s = 4;
  c.max_pending = 400;
  c.request_timeout = std::chrono::seconds(240);
  c.fabric.idle_timeout = std::chrono::seconds(600);
  c.clusters.push_back(fabric::ClusterConfig{"a", 3, 8, 40ULL * 1000 * 1000 * 1000});
  c.clusters.push_back(fabric::ClusterConfig{"b", 2, 4, 80ULL * 1000 * 1000 * 1000});
  c.endpoints.push_back(endpoint("a-ep", "a", 2, 8));
  c.endpoints.push_back(endpoint("b-ep", "b", 2, 4));
  c.models.push_back(chat_model("small", 8, 1, 1500, {"a-ep", "b-ep"}));
  c.models.push_back(chat_model("mid", 70, 4, 800, {"b-ep", "a-ep"}));
  c.models.push_back(chat_model("wide", 70, 12, 900, {"a-ep"}));
  gateway::ModelDecl emb;
  emb.spec.name = "embed";
  emb.spec.params_billions = 1;
  emb.spec.kind = router::ModelKind::kEmbedding;
  emb.spec.embedding_dim = 8;
  emb.spec.backend.service_rate = 20000;
  emb.endpoints = {"a-ep"};
  c.models.push_back(emb);
  std::mt19937_64 rng(4242);
  for (int i = 0; i < 12; ++i) {
    const double at = std::uniform_real_distribution<double>(60, kFuzzHorizonS)(rng);
    const char* models[] = {"small", "mid", "wide"};
    const std::string model = models[rng() % 3];
    c.faults.push_back({at, model, model == "mid" ? "b-ep" : "a-ep"});
  }

  const auto before_double = InferenceTask::double_resolutions();
  gateway::Gateway gw(c);
  auto& loop = gw.loop();
  std::uint64_t checks = 0;
  std::uint64_t violations = 0;
  std::string first_violation;
  loop.set_after_event_hook([&] {
    ++checks;
    std::string why;
    if (!gw.fabric().check_invariants(&why)) {
      if (violations++ == 0) first_violation = why;
    }
  });

  std::vector<std::string> tokens;
  for (int u = 0; u < 8; ++u) tokens.push_back(gw.mint_token("user" + std::to_string(u) + "@example.org", {}).raw);

  std::vector<std::shared_ptr<FuzzSink>> sinks;
  const Instant horizon = loop.now() + from_seconds(kFuzzHorizonS);
  std::exponential_distribution<double> gap(3.0);
  double t = 0;
  int kills = 0;
  while (true) {
    t += gap(rng);
    if (t >= kFuzzHorizonS) break;
    loop.schedule_at(Instant{} + from_seconds(t), [&, pick = rng()] {
      auto sink = std::make_shared<FuzzSink>();
      sinks.push_back(sink);
      gateway::HttpRequest req;
      req.method = "POST";
      req.headers["authorization"] = "Bearer " + tokens[pick % tokens.size()];
      const int which = static_cast<int>((pick >> 8) % 10);
      const int n = 1 + static_cast<int>((pick >> 16) % 60);
      const bool stream = ((pick >> 24) % 3) == 0;
      if (which == 0) {
        req.path = "/v1/embeddings";
        req.body = json{{"model", "embed"}, {"input", json::array({"a b", "c"})}}.dump();
      } else if (which == 1) {
        req.path = "/v1/chat/completions";
        req.body = json{{"model", "missing"}, {"messages", json::array()}}.dump();
      } else {
        const char* models[] = {"small", "small", "mid", "wide"};
        req.path = (pick >> 32) % 4 == 0 ? "/v1/completions" : "/v1/chat/completions";
        const std::string model = models[(pick >> 40) % 4];
        json body = {{"model", model}, {"max_tokens", n}, {"target_tokens", n}, {"stream", stream}};
        if (req.path == "/v1/completions") {
          body["prompt"] = "once upon a time";
        } else {
          body["messages"] = json::array({json{{"role", "user"}, {"content", "hi"}}});
        }
        req.body = body.dump();
      }
      gw.handle(std::move(req), sink);
      // Some clients walk away mid-request.
      if ((pick >> 48) % 20 == 0) {
        loop.schedule_after(from_seconds(static_cast<double>((pick >> 52) % 30)), [sink] { sink->client_gone = true; });
      }
    });
    // Occasional hard instance failures on top of the configured faults.
    if (rng() % 400 == 0) {
      ++kills;
      loop.schedule_at(Instant{} + from_seconds(t), [&, restart = rng() % 2 == 0] {
        for (const auto* m : gw.fabric().instances()) {
          if (m->state == fabric::InstanceState::kRunning || m->state == fabric::InstanceState::kStarting) {
            gw.fabric().fail_instance(m->id, "fuzz kill", restart);
            break;
          }
        }
      });
    }
  }
  loop.run_until(horizon);
  // Drain: everything admitted before the horizon must still resolve.
  loop.run_while([&] { return gw.stats().pending > 0; });

  const auto& st = gw.stats();
  int unanswered = 0;
  int doubled = 0;
  for (const auto& s : sinks) {
    if (s->terminals == 0 && !s->client_gone) ++unanswered;
    if (s->terminals > 1 || s->starts > 1) ++doubled;
  }
  const auto double_res = InferenceTask::double_resolutions() - before_double;
  const auto illegal = gw.fabric().illegal_transitions();
  const bool pass = violations == 0 && illegal == 0 && double_res == 0 && unanswered == 0 && doubled == 0 &&
                    st.pending == 0 && st.completed + st.failed == st.accepted && st.requests == sinks.size();
  return {pass, std::to_string(sinks.size()) + " requests over " + fmt(kFuzzHorizonS, 0) + " s, " +
                    std::to_string(c.faults.size()) + " faults + " + std::to_string(kills) + " kills, " +
                    std::to_string(checks) + " invariant checks, violations " + std::to_string(violations) +
                    (first_violation.empty() ? "" : " (" + first_violation + ")") + ", illegal transitions " +
                    std::to_string(illegal) + ", double resolutions " + std::to_string(double_res) +
                    ", unanswered " + std::to_string(unanswered) + ", accepted " + std::to_string(st.accepted) +
                    " = completed " + std::to_string(st.completed) + " + failed " + std::to_string(st.failed)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> criteria = {
      {"selection-oracle-equivalence", selection_oracle},
      {"routing-affinity", routing_affinity},
      {"hot-cold-latency-split", hot_cold_split},
      {"idle-reaper-7200s", idle_reaper},
      {"autoscaling-throughput", autoscaling},
      {"gpu-packing", gpu_packing},
      {"batch-calibration", batch_calibration},
      {"gateway-queueing-capacity", queueing_capacity},
      {"token-cache-effect", token_cache},
      {"accounting", accounting},
      {"fuzzed-invariants", fuzz_invariants},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return std::min(failed, 255);
}
