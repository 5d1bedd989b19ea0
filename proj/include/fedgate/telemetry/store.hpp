#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fedgate/sim/time.hpp"

namespace fedgate::telemetry {

/// One line of the usage log. Timestamps are microseconds on the service
/// clock.
struct UsageRecord {
  std::string task_id;
  std::string subject;
  std::string model;
  std::string endpoint;
  std::string kind;
  int prompt_tokens = 0;
  int completion_tokens = 0;
  Instant arrived_at{};
  Instant dispatched_at{};
  Instant completed_at{};
  std::string outcome = "ok";  // "ok" or an error code
  int status = 200;
  std::int64_t instance_id = -1;
  // Cold-start breakdown; all zero when the request hit a running instance.
  Duration queue_wait{0};
  Duration allocation{0};
  Duration load{0};
  Duration service{0};

  bool ok() const { return outcome == "ok"; }
  std::int64_t total_tokens() const { return std::int64_t{prompt_tokens} + completion_tokens; }
  Duration latency() const { return completed_at - arrived_at; }
};

nlohmann::json to_json(const UsageRecord& r);
UsageRecord usage_from_json(const nlohmann::json& j);

struct LatencyQuantiles {
  double p50 = 0.0;
  double p90 = 0.0;
  double p99 = 0.0;
};

struct InstanceCounts {
  int queued = 0;
  int starting = 0;
  int running = 0;
};

struct MetricsSnapshot {
  double window_s = 0.0;
  std::int64_t completed_requests = 0;
  std::int64_t failed_requests = 0;
  std::int64_t output_tokens = 0;
  double request_throughput = 0.0;       // req/s
  double output_token_throughput = 0.0;  // tok/s
  LatencyQuantiles latency_s;
  // Filled by the gateway from the fabric.
  std::map<std::string, InstanceCounts> instances;
  std::map<std::string, std::int64_t> queue_depths;
  std::int64_t lifetime_tokens = 0;
};

nlohmann::json to_json(const MetricsSnapshot& s);

struct TelemetryConfig {
  std::string log_path;  // empty: in-memory only
  Duration flush_interval = std::chrono::seconds(1);
  // Durable log byte budget; 0 = unlimited. Past it, records are dropped
  // from the log (counted) while in-memory metrics keep working.
  std::uint64_t max_bytes = 0;
  std::size_t channel_capacity = 1 << 16;
};

struct TokenTotals {
  std::int64_t prompt = 0;
  std::int64_t completion = 0;
  std::int64_t total() const { return prompt + completion; }
};

/// Append-only usage log with an in-memory index for metrics.
///
/// Producers call record() from any thread; a single writer thread turns
/// records into JSON lines and persists them every flush interval (or on
/// flush()). Records not yet flushed are lost on a crash.
class TelemetryStore {
 public:
  explicit TelemetryStore(TelemetryConfig config = {});
  ~TelemetryStore();

  TelemetryStore(const TelemetryStore&) = delete;
  TelemetryStore& operator=(const TelemetryStore&) = delete;

  void record(UsageRecord r);
  /// Persists everything recorded so far and fsyncs the log.
  void flush();

  std::size_t size() const;
  std::vector<UsageRecord> records() const;
  TokenTotals totals() const;
  std::uint64_t dropped() const;
  bool lossy() const;

  /// Metrics over records completed in (now - window, now].
  MetricsSnapshot snapshot(Duration window, Instant now) const;

  /// Reads a usage log back; malformed trailing lines are skipped.
  static std::vector<UsageRecord> load(const std::string& path);

 private:
  void writer_loop(std::stop_token stop);
  void write_out(std::deque<UsageRecord>& batch);

  TelemetryConfig config_;

  mutable std::mutex mu_;
  std::vector<UsageRecord> records_;
  TokenTotals totals_;

  std::mutex chan_mu_;
  std::condition_variable chan_cv_;
  std::condition_variable chan_space_cv_;
  std::condition_variable flushed_cv_;
  std::deque<UsageRecord> channel_;
  std::uint64_t enqueued_ = 0;
  std::uint64_t persisted_ = 0;
  bool flush_requested_ = false;

  std::uint64_t bytes_written_ = 0;
  std::uint64_t dropped_ = 0;
  int fd_ = -1;
  std::jthread writer_;
};

}  // namespace fedgate::telemetry
