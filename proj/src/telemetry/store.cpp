#include "fedgate/telemetry/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "fedgate/telemetry/quantile.hpp"

namespace fedgate::telemetry {

using nlohmann::json;

json to_json(const UsageRecord& r) {
  return json{{"task_id", r.task_id},
              {"subject", r.subject},
              {"model", r.model},
              {"endpoint", r.endpoint},
              {"kind", r.kind},
              {"prompt_tokens", r.prompt_tokens},
              {"completion_tokens", r.completion_tokens},
              {"arrived_us", r.arrived_at.time_since_epoch().count()},
              {"dispatched_us", r.dispatched_at.time_since_epoch().count()},
              {"completed_us", r.completed_at.time_since_epoch().count()},
              {"outcome", r.outcome},
              {"status", r.status},
              {"instance_id", r.instance_id},
              {"queue_wait_us", r.queue_wait.count()},
              {"allocation_us", r.allocation.count()},
              {"load_us", r.load.count()},
              {"service_us", r.service.count()}};
}

UsageRecord usage_from_json(const json& j) {
  UsageRecord r;
  r.task_id = j.at("task_id").get<std::string>();
  r.subject = j.value("subject", "");
  r.model = j.value("model", "");
  r.endpoint = j.value("endpoint", "");
  r.kind = j.value("kind", "");
  r.prompt_tokens = j.value("prompt_tokens", 0);
  r.completion_tokens = j.value("completion_tokens", 0);
  r.arrived_at = Instant{Duration{j.value("arrived_us", std::int64_t{0})}};
  r.dispatched_at = Instant{Duration{j.value("dispatched_us", std::int64_t{0})}};
  r.completed_at = Instant{Duration{j.value("completed_us", std::int64_t{0})}};
  r.outcome = j.value("outcome", "ok");
  r.status = j.value("status", 200);
  r.instance_id = j.value("instance_id", std::int64_t{-1});
  r.queue_wait = Duration{j.value("queue_wait_us", std::int64_t{0})};
  r.allocation = Duration{j.value("allocation_us", std::int64_t{0})};
  r.load = Duration{j.value("load_us", std::int64_t{0})};
  r.service = Duration{j.value("service_us", std::int64_t{0})};
  return r;
}

json to_json(const MetricsSnapshot& s) {
  json instances = json::object();
  for (const auto& [model, c] : s.instances) {
    instances[model] = {{"queued", c.queued}, {"starting", c.starting}, {"running", c.running}};
  }
  return json{{"window_s", s.window_s},
              {"completed_requests", s.completed_requests},
              {"failed_requests", s.failed_requests},
              {"output_tokens", s.output_tokens},
              {"request_throughput", s.request_throughput},
              {"output_token_throughput", s.output_token_throughput},
              {"latency_s", {{"p50", s.latency_s.p50}, {"p90", s.latency_s.p90}, {"p99", s.latency_s.p99}}},
              {"instances", instances},
              {"queue_depths", s.queue_depths},
              {"lifetime_tokens", s.lifetime_tokens}};
}

TelemetryStore::TelemetryStore(TelemetryConfig config) : config_(std::move(config)) {
  if (!config_.log_path.empty()) {
    fd_ = ::open(config_.log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd_ < 0) throw std::runtime_error("cannot open usage log " + config_.log_path);
    bytes_written_ = static_cast<std::uint64_t>(::lseek(fd_, 0, SEEK_END));
    writer_ = std::jthread([this](std::stop_token st) { writer_loop(st); });
  }
}

TelemetryStore::~TelemetryStore() {
  if (writer_.joinable()) {
    writer_.request_stop();
    chan_cv_.notify_all();
    writer_.join();
  }
  if (fd_ >= 0) ::close(fd_);
}

void TelemetryStore::record(UsageRecord r) {
  {
    std::lock_guard lock(mu_);
    totals_.prompt += r.prompt_tokens;
    totals_.completion += r.completion_tokens;
    records_.push_back(r);
  }
  if (fd_ < 0) return;
  std::unique_lock lock(chan_mu_);
  chan_space_cv_.wait(lock, [&] { return channel_.size() < config_.channel_capacity; });
  channel_.push_back(std::move(r));
  ++enqueued_;
}

void TelemetryStore::flush() {
  if (fd_ < 0) return;
  std::unique_lock lock(chan_mu_);
  const std::uint64_t target = enqueued_;
  flush_requested_ = true;
  chan_cv_.notify_all();
  flushed_cv_.wait(lock, [&] { return persisted_ >= target; });
}

void TelemetryStore::writer_loop(std::stop_token stop) {
  std::unique_lock lock(chan_mu_);
  for (;;) {
    chan_cv_.wait_for(lock, config_.flush_interval, [&] { return flush_requested_ || stop.stop_requested(); });
    std::deque<UsageRecord> batch;
    batch.swap(channel_);
    flush_requested_ = false;
    lock.unlock();
    chan_space_cv_.notify_all();
    write_out(batch);
    lock.lock();
    persisted_ += batch.size();
    flushed_cv_.notify_all();
    if (stop.stop_requested() && channel_.empty()) return;
  }
}

void TelemetryStore::write_out(std::deque<UsageRecord>& batch) {
  if (batch.empty()) return;
  std::string buf;
  std::uint64_t dropped = 0;
  for (const auto& r : batch) {
    std::string line = to_json(r).dump();
    line.push_back('\n');
    if (config_.max_bytes != 0 && bytes_written_ + buf.size() + line.size() > config_.max_bytes) {
      ++dropped;
      continue;
    }
    buf += line;
  }
  std::size_t off = 0;
  while (off < buf.size()) {
    const ssize_t n = ::write(fd_, buf.data() + off, buf.size() - off);
    if (n <= 0) {
      // Disk refused the rest: count what did not make it.
      dropped += static_cast<std::uint64_t>(std::count(buf.begin() + static_cast<std::ptrdiff_t>(off), buf.end(), '\n'));
      break;
    }
    off += static_cast<std::size_t>(n);
  }
  ::fsync(fd_);
  std::lock_guard lock(mu_);
  bytes_written_ += off;
  dropped_ += dropped;
}

std::size_t TelemetryStore::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

std::vector<UsageRecord> TelemetryStore::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

TokenTotals TelemetryStore::totals() const {
  std::lock_guard lock(mu_);
  return totals_;
}

std::uint64_t TelemetryStore::dropped() const {
  std::lock_guard lock(mu_);
  return dropped_;
}

bool TelemetryStore::lossy() const { return dropped() > 0; }

MetricsSnapshot TelemetryStore::snapshot(Duration window, Instant now) const {
  MetricsSnapshot s;
  if (window <= Duration::zero()) throw std::invalid_argument("snapshot window must be positive");
  s.window_s = to_seconds(window);
  const Instant from = now - window;
  std::vector<double> latencies;
  {
    std::lock_guard lock(mu_);
    s.lifetime_tokens = totals_.total();
    for (const auto& r : records_) {
      if (r.completed_at <= from || r.completed_at > now) continue;
      if (!r.ok()) {
        ++s.failed_requests;
        continue;
      }
      ++s.completed_requests;
      s.output_tokens += r.completion_tokens;
      latencies.push_back(to_seconds(r.latency()));
    }
  }
  std::sort(latencies.begin(), latencies.end());
  s.request_throughput = static_cast<double>(s.completed_requests) / s.window_s;
  s.output_token_throughput = static_cast<double>(s.output_tokens) / s.window_s;
  s.latency_s.p50 = quantile_sorted(latencies, 0.50);
  s.latency_s.p90 = quantile_sorted(latencies, 0.90);
  s.latency_s.p99 = quantile_sorted(latencies, 0.99);
  return s;
}

std::vector<UsageRecord> TelemetryStore::load(const std::string& path) {
  std::vector<UsageRecord> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("task_id")) continue;
    out.push_back(usage_from_json(j));
  }
  return out;
}

}  // namespace fedgate::telemetry
