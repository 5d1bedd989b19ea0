#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "fedgate/backends/mock_backend.hpp"
#include "fedgate/bench/bench.hpp"
#include "fedgate/gateway/config.hpp"
#include "fedgate/gateway/gateway.hpp"
#include "fedgate/gateway/rate_limiter.hpp"
#include "fedgate/router/selection.hpp"
#include "fedgate/telemetry/quantile.hpp"

namespace py = pybind11;
using namespace fedgate;
using nlohmann::json;

namespace {

// JSON crosses the boundary as text; the Python side wraps it with json.loads.
gateway::ServiceConfig config_from(const std::string& path, const std::string& text) {
  if (!path.empty()) return gateway::load_config(path);
  if (!text.empty()) return gateway::parse_config(json::parse(text));
  auto c = gateway::default_config();
  c.clock = ClockMode::kVirtual;
  return c;
}

bench::WorkloadSpec workload(const std::string& model, int n, double rate, const std::string& mode,
                             std::uint64_t seed, bool stream, int concurrency, int pool,
                             std::optional<int> prompt_tokens, std::optional<int> output_tokens,
                             double duration_cap_s, int users) {
  bench::WorkloadSpec s;
  s.model = model;
  s.n_requests = n;
  s.rate = rate;
  if (mode == "batch") {
    s.mode = bench::Mode::kBatch;
  } else if (mode != "online") {
    throw std::invalid_argument("mode must be online or batch");
  }
  s.seed = seed;
  s.stream = stream;
  s.concurrency = concurrency;
  s.pool = pool;
  s.duration_cap_s = duration_cap_s;
  s.users = users;
  if (prompt_tokens || output_tokens) {
    s.lengths.fixed = true;
    s.lengths.prompt_tokens = prompt_tokens.value_or(s.lengths.prompt_tokens);
    s.lengths.output_tokens = output_tokens.value_or(s.lengths.output_tokens);
  }
  return s;
}

std::string rule_name(router::SelectionRule r) {
  switch (r) {
    case router::SelectionRule::kActiveInstance: return "active_instance";
    case router::SelectionRule::kAvailableNodes: return "available_nodes";
    case router::SelectionRule::kFirstConfigured: return "first_configured";
  }
  return "first_configured";
}

// A virtual-clock service driven from Python one request at a time.
class Service {
 public:
  Service(const std::string& path, const std::string& text) {
    auto cfg = config_from(path, text);
    cfg.clock = ClockMode::kVirtual;
    gw_ = std::make_unique<gateway::Gateway>(std::move(cfg));
  }

  std::string mint_token(const std::string& subject, const std::vector<std::string>& groups, double ttl_s) {
    auth::GroupSet g(groups.begin(), groups.end());
    return gw_->mint_token(subject, std::move(g), from_seconds(ttl_s)).raw;
  }

  // Returns (status, body, events, elapsed_s). Runs the loop until the
  // response is complete.
  py::tuple request(const std::string& method, const std::string& path, const std::string& token,
                    const std::string& body, const std::map<std::string, std::string>& query) {
    auto& loop = gw_->loop();
    auto sink = std::make_shared<gateway::RecordingSink>([&loop] { return loop.now(); });
    gateway::HttpRequest req;
    req.method = method;
    req.path = path;
    if (!token.empty()) req.headers["authorization"] = "Bearer " + token;
    req.body = body;
    req.query = query;
    const Instant t0 = loop.now();
    gw_->handle(std::move(req), sink);
    loop.run_while([&] { return !sink->finished; });
    const double elapsed = to_seconds(sink->finished_at.value_or(loop.now()) - t0);
    return py::make_tuple(sink->status, sink->body, sink->events, elapsed);
  }

  void advance(double seconds) { gw_->loop().run_until(gw_->loop().now() + from_seconds(seconds)); }
  double now() const { return to_seconds(gw_->loop().now().time_since_epoch()); }

 private:
  std::unique_ptr<gateway::Gateway> gw_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Inference gateway core: routing, mock backends, rate limiting and the benchmark harness.";

  m.def("select_candidate",
        [](const std::vector<std::tuple<bool, int, int>>& cands) {
          if (cands.empty()) throw std::invalid_argument("no candidates");
          std::vector<router::Candidate> cs;
          for (const auto& [active, free, need] : cands) cs.push_back(router::Candidate{active, free, need});
          auto s = router::select_candidate(cs);
          return py::make_tuple(s.config_index, rule_name(s.rule));
        },
        py::arg("candidates"),
        "Pick an endpoint from (has_active_instance, free_nodes, nodes_needed) tuples in config order.");
  m.def("nodes_needed", &router::nodes_needed, py::arg("gpus_required"), py::arg("gpus_per_node"));

  m.def("quantile",
        [](std::vector<double> v, double q) {
          std::sort(v.begin(), v.end());
          return telemetry::quantile_sorted(v, q);
        },
        py::arg("values"), py::arg("q"));

  m.def("count_tokens", [](const std::string& s) { return backends::count_tokens(s); }, py::arg("text"));
  m.def("mock_generate",
        [](const std::string& prompt, int max_tokens, std::uint64_t seed, std::optional<int> target) {
          TaskPayload p;
          p.prompt = prompt;
          p.max_tokens = max_tokens;
          p.target_tokens = target;
          backends::BackendProfile prof;
          return backends::generate(prof, p, seed).tokens;
        },
        py::arg("prompt"), py::arg("max_tokens"), py::arg("seed") = 0, py::arg("target") = py::none());
  m.def("mock_embed",
        [](const std::vector<std::string>& inputs, int dim, std::uint64_t seed) {
          backends::BackendProfile prof;
          return backends::embed(prof, inputs, dim, seed);
        },
        py::arg("inputs"), py::arg("dim") = 16, py::arg("seed") = 0);

  py::class_<gateway::TokenBucket>(m, "TokenBucket")
      .def(py::init([](double capacity, double refill_per_s, double now_s) {
             return gateway::TokenBucket(capacity, refill_per_s, at_seconds(now_s));
           }),
           py::arg("capacity"), py::arg("refill_per_s"), py::arg("now_s") = 0.0)
      .def("try_acquire", [](gateway::TokenBucket& b, double t) { return b.try_acquire(at_seconds(t)); })
      .def("level", [](gateway::TokenBucket& b, double t) { return b.level(at_seconds(t)); })
      .def("retry_after", [](gateway::TokenBucket& b, double t) { return to_seconds(b.retry_after(at_seconds(t))); });

  m.def("run_bench",
        [](const std::string& model, int n, double rate, const std::string& mode, std::uint64_t seed, bool stream,
           int concurrency, int pool, std::optional<int> prompt_tokens, std::optional<int> output_tokens,
           double duration_cap_s, int users, int prewarm, std::optional<int> max_instances,
           const std::string& config_path, const std::string& config_json, bool records) {
          auto spec = workload(model, n, rate, mode, seed, stream, concurrency, pool, prompt_tokens, output_tokens,
                               duration_cap_s, users);
          bench::InprocOptions o;
          o.prewarm_instances = prewarm;
          o.max_instances = max_instances;
          bench::BenchReport r;
          {
            py::gil_scoped_release release;
            r = bench::run_inproc(spec, config_from(config_path, config_json), o);
          }
          return bench::to_json(r, records).dump();
        },
        py::arg("model") = "meta-llama/Llama-3.3-70B-Instruct", py::arg("n") = 1000,
        py::arg("rate") = bench::kInfiniteRate, py::arg("mode") = "online", py::arg("seed") = 0,
        py::arg("stream") = false, py::arg("concurrency") = 0, py::arg("pool") = 512,
        py::arg("prompt_tokens") = py::none(), py::arg("output_tokens") = py::none(),
        py::arg("duration_cap_s") = 0.0, py::arg("users") = 1, py::arg("prewarm") = 0,
        py::arg("max_instances") = py::none(), py::arg("config_path") = "", py::arg("config_json") = "",
        py::arg("records") = false);

  m.def("run_sweep",
        [](const std::string& model, int n, const std::vector<double>& rates, const std::vector<int>& instances,
           const std::vector<int>& concurrencies, std::uint64_t seed, std::optional<int> output_tokens,
           const std::string& config_path, const std::string& config_json) {
          bench::SweepSpec sw;
          sw.base = workload(model, n, bench::kInfiniteRate, "online", seed, false, 0, 512, std::nullopt,
                             output_tokens, 0.0, 1);
          sw.rates = rates;
          sw.instances = instances;
          sw.concurrencies = concurrencies;
          std::vector<bench::SweepPoint> table;
          {
            py::gil_scoped_release release;
            table = bench::run_sweep(sw, config_from(config_path, config_json));
          }
          return bench::to_json(table).dump();
        },
        py::arg("model") = "meta-llama/Llama-3.3-70B-Instruct", py::arg("n") = 1000,
        py::arg("rates") = std::vector<double>{}, py::arg("instances") = std::vector<int>{},
        py::arg("concurrencies") = std::vector<int>{}, py::arg("seed") = 0, py::arg("output_tokens") = py::none(),
        py::arg("config_path") = "", py::arg("config_json") = "");

  m.def("parse_rate", &bench::parse_rate, py::arg("text"));

  py::class_<Service>(m, "Service")
      .def(py::init<const std::string&, const std::string&>(), py::arg("config_path") = "",
           py::arg("config_json") = "")
      .def("mint_token", &Service::mint_token, py::arg("subject"), py::arg("groups") = std::vector<std::string>{},
           py::arg("ttl_s") = 48 * 3600.0)
      .def("request", &Service::request, py::arg("method"), py::arg("path"), py::arg("token") = "",
           py::arg("body") = "", py::arg("query") = std::map<std::string, std::string>{})
      .def("advance", &Service::advance, py::arg("seconds"))
      .def_property_readonly("now", &Service::now);
}
