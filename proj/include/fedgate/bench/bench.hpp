#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedgate/gateway/config.hpp"

namespace fedgate::bench {

inline constexpr double kInfiniteRate = std::numeric_limits<double>::infinity();

/// Prompt/output length model. Log-normal lengths stand in for the
/// conversational datasets usually used for serving benchmarks.
struct LengthDistribution {
  bool fixed = false;
  int prompt_tokens = 128;  // fixed mode
  int output_tokens = 128;  // fixed mode
  double prompt_mu = 5.0;
  double prompt_sigma = 1.0;
  double output_mu = 5.2;
  double output_sigma = 0.8;
  int min_tokens = 4;
  int max_prompt_tokens = 2048;
  int max_output_tokens = 1024;
};

enum class Mode { kOnline, kBatch };

struct WorkloadSpec {
  std::string model = "meta-llama/Llama-3.3-70B-Instruct";
  int n_requests = 1000;
  double rate = kInfiniteRate;  // req/s; infinity = all at once
  Mode mode = Mode::kOnline;
  LengthDistribution lengths;
  std::uint64_t seed = 0;
  double duration_cap_s = 0.0;  // 0 = none; later arrivals are not sent
  bool stream = false;
  // Closed loop: this many sessions each send their next request as soon as
  // the previous one finishes. 0 = open loop.
  int concurrency = 0;
  // Client connection pool: at most this many requests in flight.
  // 0 = unbounded. Applies to the infinite-rate schedule only.
  int pool = 512;
  double max_error_rate = 0.05;
  int min_samples_for_abort = 50;
  int users = 1;  // distinct principals the requests are spread over
};

struct RequestSpec {
  int index = 0;
  double send_offset_s = 0.0;  // open loop only
  int prompt_tokens = 0;
  int output_tokens = 0;
  std::string prompt;
};

/// Deterministic request sequence for a spec: same seed, same requests.
std::vector<RequestSpec> make_workload(const WorkloadSpec& spec);

/// OpenAI request body for one workload entry.
nlohmann::json request_body(const WorkloadSpec& spec, const RequestSpec& r);

struct RequestRecord {
  int index = 0;
  double sent_s = 0.0;
  double done_s = 0.0;
  int status = 0;
  int prompt_tokens = 0;
  int completion_tokens = 0;
  int chunks = 0;
  bool ok() const { return status == 200; }
  double latency_s() const { return done_s - sent_s; }
};

struct BenchReport {
  std::string target;  // "inproc" or a URL
  WorkloadSpec spec;
  int instances = 0;
  int sent = 0;
  int succeeded = 0;
  int failed = 0;
  bool aborted = false;
  std::string abort_reason;
  double start_s = 0.0;
  double end_s = 0.0;
  double duration_s = 0.0;
  double request_throughput = 0.0;       // successful req/s
  double output_token_throughput = 0.0;  // tok/s over successful requests
  double median_e2e_latency_s = 0.0;
  double p90_e2e_latency_s = 0.0;
  double p99_e2e_latency_s = 0.0;
  double mean_e2e_latency_s = 0.0;
  std::int64_t output_tokens = 0;
  std::vector<RequestRecord> records;

  // Second measurement path (in-process runs only).
  std::optional<double> store_request_throughput;
  std::optional<double> store_output_token_throughput;
  std::optional<std::int64_t> telemetry_tokens;        // sum over usage records
  std::optional<std::int64_t> telemetry_completion_tokens;
  std::optional<std::int64_t> backend_tokens;          // emitted by the fabric
  std::optional<double> batch_processing_s;            // batch: in_progress -> finished
  std::optional<double> cold_start_s;                  // batch: submitted -> in_progress
  std::uint64_t peak_pending = 0;
  std::uint64_t rejected = 0;
};

nlohmann::json to_json(const BenchReport& r, bool include_records = true);
std::string records_csv(const BenchReport& r);

/// Fills the aggregate metrics from `records` (throughput counts successes
/// only; latency is send to final byte).
void summarize(BenchReport& r);

struct InprocOptions {
  int prewarm_instances = 0;         // bring this many online instances up first
  std::optional<int> max_instances;  // override max_instances_per_model
  bool disable_rate_limit = true;
};

/// Runs a workload against an in-process gateway on a virtual clock.
BenchReport run_inproc(const WorkloadSpec& spec, gateway::ServiceConfig config, const InprocOptions& opts = {});

/// Runs a workload against a live server over HTTP (wall clock).
BenchReport run_http(const WorkloadSpec& spec, const std::string& base_url, const std::string& token);

/// Same scheduling machinery with a target that answers instantly; reports
/// wall-clock harness cost per request in seconds.
double harness_overhead_per_request(const WorkloadSpec& spec);

struct SweepPoint {
  double rate = kInfiniteRate;
  int instances = 1;
  int concurrency = 0;
  std::optional<BenchReport> report;
  std::string error;
};

struct SweepSpec {
  WorkloadSpec base;
  std::vector<double> rates;       // empty: base.rate only
  std::vector<int> instances;      // empty: {1}
  std::vector<int> concurrencies;  // empty: open loop
};

/// One in-process run per grid point. Each point gets a fresh service with
/// max_instances_per_model set to the point's instance count and that many
/// instances pre-warmed, so cold starts do not blur throughput ratios.
std::vector<SweepPoint> run_sweep(const SweepSpec& sweep, const gateway::ServiceConfig& config);

nlohmann::json to_json(const std::vector<SweepPoint>& table);
std::string sweep_csv(const std::vector<SweepPoint>& table);

double parse_rate(const std::string& s);
std::string rate_label(double rate);

}  // namespace fedgate::bench
