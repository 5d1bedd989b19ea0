#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fedgate/bench/bench.hpp"
#include "fedgate/telemetry/quantile.hpp"

namespace fedgate::bench {

using nlohmann::json;

namespace {

constexpr const char* kWords[] = {"the",    "model",  "cluster", "node",   "token", "request", "science",
                                  "energy", "data",   "protein", "climate", "grid", "physics", "sample",
                                  "kernel", "tensor", "batch",   "queue",  "field", "graph"};

int lognormal_len(std::mt19937_64& rng, double mu, double sigma, int lo, int hi) {
  std::lognormal_distribution<double> d(mu, sigma);
  return std::clamp(static_cast<int>(std::lround(d(rng))), lo, hi);
}

}  // namespace

std::vector<RequestSpec> make_workload(const WorkloadSpec& spec) {
  if (spec.n_requests < 0) throw std::invalid_argument("n_requests must be >= 0");
  if (!(spec.rate > 0)) throw std::invalid_argument("rate must be positive");
  std::mt19937_64 rng(spec.seed);
  std::exponential_distribution<double> gap(std::isinf(spec.rate) ? 1.0 : spec.rate);
  std::uniform_int_distribution<std::size_t> word(0, std::size(kWords) - 1);
  std::vector<RequestSpec> out;
  out.reserve(static_cast<std::size_t>(spec.n_requests));
  double t = 0.0;
  const auto& L = spec.lengths;
  for (int i = 0; i < spec.n_requests; ++i) {
    RequestSpec r;
    r.index = i;
    if (!std::isinf(spec.rate) && i > 0) t += gap(rng);
    r.send_offset_s = std::isinf(spec.rate) ? 0.0 : t;
    if (L.fixed) {
      r.prompt_tokens = L.prompt_tokens;
      r.output_tokens = L.output_tokens;
    } else {
      r.prompt_tokens = lognormal_len(rng, L.prompt_mu, L.prompt_sigma, L.min_tokens, L.max_prompt_tokens);
      r.output_tokens = lognormal_len(rng, L.output_mu, L.output_sigma, L.min_tokens, L.max_output_tokens);
    }
    std::string prompt;
    prompt.reserve(static_cast<std::size_t>(r.prompt_tokens) * 7);
    for (int w = 0; w < r.prompt_tokens; ++w) {
      if (w) prompt += ' ';
      prompt += kWords[word(rng)];
    }
    r.prompt = std::move(prompt);
    out.push_back(std::move(r));
  }
  return out;
}

json request_body(const WorkloadSpec& spec, const RequestSpec& r) {
  return json{{"model", spec.model},
              {"messages", json::array({json{{"role", "user"}, {"content", r.prompt}}})},
              {"max_tokens", r.output_tokens},
              {"target_tokens", r.output_tokens},
              {"temperature", 0.0},
              {"stream", spec.stream},
              {"seed", static_cast<std::uint64_t>(r.index)}};
}

void summarize(BenchReport& r) {
  r.sent = static_cast<int>(r.records.size());
  r.succeeded = 0;
  r.failed = 0;
  r.output_tokens = 0;
  std::vector<double> lat;
  double start = std::numeric_limits<double>::infinity();
  double end = -std::numeric_limits<double>::infinity();
  for (const auto& rec : r.records) {
    start = std::min(start, rec.sent_s);
    end = std::max(end, rec.done_s);
    if (rec.ok()) {
      ++r.succeeded;
      r.output_tokens += rec.completion_tokens;
      lat.push_back(rec.latency_s());
    } else {
      ++r.failed;
    }
  }
  if (r.records.empty()) {
    start = end = 0.0;
  }
  r.start_s = start;
  r.end_s = end;
  r.duration_s = end - start;
  std::sort(lat.begin(), lat.end());
  r.request_throughput = r.duration_s > 0 ? r.succeeded / r.duration_s : 0.0;
  r.output_token_throughput = r.duration_s > 0 ? static_cast<double>(r.output_tokens) / r.duration_s : 0.0;
  r.median_e2e_latency_s = telemetry::quantile_sorted(lat, 0.5);
  r.p90_e2e_latency_s = telemetry::quantile_sorted(lat, 0.9);
  r.p99_e2e_latency_s = telemetry::quantile_sorted(lat, 0.99);
  double sum = 0.0;
  for (double v : lat) sum += v;
  r.mean_e2e_latency_s = lat.empty() ? 0.0 : sum / static_cast<double>(lat.size());
}

std::string rate_label(double rate) {
  if (std::isinf(rate)) return "inf";
  std::ostringstream ss;
  ss << rate;
  return ss.str();
}

double parse_rate(const std::string& s) {
  if (s == "inf" || s == "infinite" || s == "max") return kInfiniteRate;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size() || !(v > 0)) throw std::invalid_argument("rate must be a positive number or inf: " + s);
  return v;
}

namespace {

json spec_json(const WorkloadSpec& s) {
  return json{{"model", s.model},
              {"n_requests", s.n_requests},
              {"rate", rate_label(s.rate)},
              {"mode", s.mode == Mode::kOnline ? "online" : "batch"},
              {"seed", s.seed},
              {"stream", s.stream},
              {"concurrency", s.concurrency},
              {"pool", s.pool},
              {"users", s.users},
              {"lengths",
               s.lengths.fixed ? json{{"fixed", true},
                                      {"prompt_tokens", s.lengths.prompt_tokens},
                                      {"output_tokens", s.lengths.output_tokens}}
                               : json{{"fixed", false},
                                      {"prompt_mu", s.lengths.prompt_mu},
                                      {"prompt_sigma", s.lengths.prompt_sigma},
                                      {"output_mu", s.lengths.output_mu},
                                      {"output_sigma", s.lengths.output_sigma}}}};
}

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

json to_json(const BenchReport& r, bool include_records) {
  json j = {{"target", r.target},
            {"workload", spec_json(r.spec)},
            {"instances", r.instances},
            {"sent", r.sent},
            {"succeeded", r.succeeded},
            {"failed", r.failed},
            {"aborted", r.aborted},
            {"abort_reason", r.abort_reason},
            {"duration_s", r.duration_s},
            {"request_throughput", r.request_throughput},
            {"output_token_throughput", r.output_token_throughput},
            {"median_e2e_latency_s", r.median_e2e_latency_s},
            {"p90_e2e_latency_s", r.p90_e2e_latency_s},
            {"p99_e2e_latency_s", r.p99_e2e_latency_s},
            {"mean_e2e_latency_s", r.mean_e2e_latency_s},
            {"output_tokens", r.output_tokens},
            {"store_request_throughput", opt(r.store_request_throughput)},
            {"store_output_token_throughput", opt(r.store_output_token_throughput)},
            {"telemetry_tokens", opt(r.telemetry_tokens)},
            {"telemetry_completion_tokens", opt(r.telemetry_completion_tokens)},
            {"backend_tokens", opt(r.backend_tokens)},
            {"batch_processing_s", opt(r.batch_processing_s)},
            {"cold_start_s", opt(r.cold_start_s)},
            {"peak_pending", r.peak_pending},
            {"rejected", r.rejected}};
  if (include_records) {
    json recs = json::array();
    for (const auto& x : r.records) {
      recs.push_back(json{{"index", x.index},
                          {"sent_s", x.sent_s},
                          {"done_s", x.done_s},
                          {"latency_s", x.latency_s()},
                          {"status", x.status},
                          {"prompt_tokens", x.prompt_tokens},
                          {"completion_tokens", x.completion_tokens},
                          {"chunks", x.chunks}});
    }
    j["records"] = std::move(recs);
  }
  return j;
}

std::string records_csv(const BenchReport& r) {
  std::ostringstream ss;
  ss << std::setprecision(9);
  ss << "index,sent_s,done_s,latency_s,status,prompt_tokens,completion_tokens,chunks\n";
  for (const auto& x : r.records) {
    ss << x.index << ',' << x.sent_s << ',' << x.done_s << ',' << x.latency_s() << ',' << x.status << ','
       << x.prompt_tokens << ',' << x.completion_tokens << ',' << x.chunks << '\n';
  }
  return ss.str();
}

json to_json(const std::vector<SweepPoint>& table) {
  json rows = json::array();
  for (const auto& p : table) {
    json row = {{"rate", rate_label(p.rate)}, {"instances", p.instances}, {"concurrency", p.concurrency}};
    if (p.report) {
      row["report"] = to_json(*p.report, false);
    } else {
      row["error"] = p.error;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepPoint>& table) {
  std::ostringstream ss;
  ss << std::setprecision(9);
  ss << "rate,instances,concurrency,succeeded,failed,duration_s,request_throughput,output_token_throughput,"
        "median_e2e_latency_s,p90_e2e_latency_s,error\n";
  for (const auto& p : table) {
    ss << rate_label(p.rate) << ',' << p.instances << ',' << p.concurrency << ',';
    if (p.report) {
      const auto& r = *p.report;
      ss << r.succeeded << ',' << r.failed << ',' << r.duration_s << ',' << r.request_throughput << ','
         << r.output_token_throughput << ',' << r.median_e2e_latency_s << ',' << r.p90_e2e_latency_s << ",\n";
    } else {
      ss << ",,,,,,,\"" << p.error << "\"\n";
    }
  }
  return ss.str();
}

}  // namespace fedgate::bench
