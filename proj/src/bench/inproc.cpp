#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <sstream>

#include "fedgate/bench/bench.hpp"
#include "fedgate/errors.hpp"
#include "fedgate/gateway/gateway.hpp"

namespace fedgate::bench {

using nlohmann::json;

namespace {

auth::GroupSet all_required_groups(const gateway::ServiceConfig& c) {
  auth::GroupSet g;
  for (const auto& m : c.models) g.insert(m.required_groups.begin(), m.required_groups.end());
  return g;
}

/// Open/closed-loop scheduler shared by the real and the null target.
class Driver {
 public:
  using Send = std::function<void(const RequestSpec&, std::function<void(RequestRecord)>)>;

  Driver(const WorkloadSpec& spec, EventLoop& loop, Send send)
      : spec_(spec), loop_(loop), send_(std::move(send)), work_(make_workload(spec)) {}

  void start() {
    t0_ = loop_.now();
    if (spec_.concurrency > 0) {
      const int sessions = std::min<int>(spec_.concurrency, static_cast<int>(work_.size()));
      for (int i = 0; i < sessions; ++i) send_next();
    } else if (std::isinf(spec_.rate)) {
      const std::size_t pool = spec_.pool > 0 ? static_cast<std::size_t>(spec_.pool) : work_.size();
      for (std::size_t i = 0; i < std::min(pool, work_.size()); ++i) send_next();
    } else {
      for (const auto& r : work_) {
        if (spec_.duration_cap_s > 0 && r.send_offset_s > spec_.duration_cap_s) break;
        ++scheduled_;
        loop_.schedule_at(t0_ + from_seconds(r.send_offset_s), [this, idx = r.index] { issue(idx); });
      }
    }
  }

  bool finished() const {
    if (aborted_) return outstanding_ == 0;
    if (std::isinf(spec_.rate) || spec_.concurrency > 0) return next_ >= work_.size() && outstanding_ == 0;
    return completed_ >= scheduled_;
  }

  std::vector<RequestRecord> take_records() { return std::move(records_); }
  bool aborted() const { return aborted_; }
  const std::string& abort_reason() const { return abort_reason_; }
  Instant t0() const { return t0_; }

 private:
  void send_next() {
    if (aborted_ || next_ >= work_.size()) return;
    if (spec_.duration_cap_s > 0 && to_seconds(loop_.now() - t0_) > spec_.duration_cap_s) {
      next_ = work_.size();
      return;
    }
    issue(static_cast<int>(next_++));
  }

  void issue(int idx) {
    if (aborted_) {
      ++completed_;
      return;
    }
    ++outstanding_;
    send_(work_[static_cast<std::size_t>(idx)], [this](RequestRecord rec) {
      --outstanding_;
      ++completed_;
      if (!rec.ok()) ++errors_;
      records_.push_back(rec);
      const auto done = static_cast<int>(records_.size());
      if (!aborted_ && done >= spec_.min_samples_for_abort &&
          static_cast<double>(errors_) / done > spec_.max_error_rate) {
        aborted_ = true;
        std::ostringstream why;
        why << errors_ << " of " << done << " requests failed";
        abort_reason_ = why.str();
      }
      if (std::isinf(spec_.rate) || spec_.concurrency > 0) send_next();
    });
  }

  const WorkloadSpec& spec_;
  EventLoop& loop_;
  Send send_;
  std::vector<RequestSpec> work_;
  std::size_t next_ = 0;
  std::size_t scheduled_ = 0;
  std::size_t completed_ = 0;
  int outstanding_ = 0;
  int errors_ = 0;
  bool aborted_ = false;
  std::string abort_reason_;
  Instant t0_{};
  std::vector<RequestRecord> records_;
};

RequestRecord record_from_sink(const gateway::RecordingSink& sink, const RequestSpec& r, Instant sent) {
  RequestRecord rec;
  rec.index = r.index;
  rec.sent_s = to_seconds(sent.time_since_epoch());
  rec.done_s = to_seconds(sink.finished_at.value_or(sent).time_since_epoch());
  rec.status = sink.status;
  rec.prompt_tokens = r.prompt_tokens;
  if (sink.streaming) {
    rec.chunks = static_cast<int>(sink.events.size());
    rec.completion_tokens = sink.saw_done ? rec.chunks : 0;
    if (!sink.saw_done) rec.status = 502;
  } else if (sink.status == 200) {
    const auto body = sink.json();
    if (body.contains("usage")) {
      rec.prompt_tokens = body["usage"].value("prompt_tokens", 0);
      rec.completion_tokens = body["usage"].value("completion_tokens", 0);
    }
  }
  return rec;
}

BenchReport run_batch(const WorkloadSpec& spec, gateway::Gateway& gw, const std::string& token) {
  BenchReport report;
  report.target = "inproc";
  report.spec = spec;
  auto work = make_workload(spec);
  std::string jsonl;
  for (const auto& r : work) {
    WorkloadSpec line_spec = spec;
    line_spec.stream = false;
    jsonl += json{{"custom_id", "req-" + std::to_string(r.index)},
                  {"method", "POST"},
                  {"url", "/v1/chat/completions"},
                  {"body", request_body(line_spec, r)}}
                 .dump();
    jsonl += '\n';
  }
  auto& loop = gw.loop();
  const Instant submitted = loop.now();
  auto sink = std::make_shared<gateway::RecordingSink>([&loop] { return loop.now(); });
  gateway::HttpRequest req;
  req.method = "POST";
  req.path = "/v1/batches";
  req.headers["authorization"] = "Bearer " + token;
  req.headers["content-type"] = "application/jsonl";
  req.query["model"] = spec.model;
  req.body = std::move(jsonl);
  loop.post([&gw, req, sink] { gw.handle(req, sink); });
  loop.run_while([&] { return !sink->finished; });
  if (sink->status != 200) throw Error(ErrorCode::kInternal, "batch submit failed: " + sink->body);
  const std::string id = sink->json()["id"].get<std::string>();
  const auto* job = gw.batches().find(id);
  loop.run_while([&] { return !batch::is_terminal(job->status); });

  const Instant finished = job->finished_at.value_or(loop.now());
  report.batch_processing_s = job->started_at ? to_seconds(finished - *job->started_at) : 0.0;
  report.cold_start_s = job->started_at ? to_seconds(*job->started_at - submitted) : 0.0;

  auth::Principal owner;
  owner.subject = job->subject;
  std::istringstream lines(gw.batches().results(id, owner));
  std::map<std::string, RequestRecord> by_id;
  for (const auto& r : work) {
    RequestRecord rec;
    rec.index = r.index;
    rec.sent_s = to_seconds(submitted.time_since_epoch());
    rec.done_s = to_seconds(finished.time_since_epoch());
    rec.prompt_tokens = r.prompt_tokens;
    rec.status = 0;
    by_id["req-" + std::to_string(r.index)] = rec;
  }
  std::string line;
  while (std::getline(lines, line)) {
    auto j = json::parse(line, nullptr, false);
    if (!j.is_object()) continue;
    auto it = by_id.find(j.value("custom_id", ""));
    if (it == by_id.end()) continue;
    if (j.contains("response")) {
      it->second.status = 200;
      it->second.completion_tokens = j["response"]["usage"].value("completion_tokens", 0);
    } else {
      it->second.status = j["error"].value("code", 500);
    }
  }
  for (auto& [_, rec] : by_id) report.records.push_back(rec);
  std::sort(report.records.begin(), report.records.end(),
            [](const RequestRecord& a, const RequestRecord& b) { return a.index < b.index; });
  summarize(report);
  return report;
}

}  // namespace

BenchReport run_inproc(const WorkloadSpec& spec, gateway::ServiceConfig config, const InprocOptions& opts) {
  config.clock = ClockMode::kVirtual;
  if (opts.disable_rate_limit) config.rate_limit.enabled = false;
  const gateway::ModelDecl* decl = nullptr;
  for (const auto& m : config.models) {
    if (m.spec.name == spec.model) decl = &m;
  }
  if (decl == nullptr) throw Error(ErrorCode::kUnknownModel, "model '" + spec.model + "' is not in the config");
  if (opts.max_instances) {
    for (auto& ep : config.endpoints) {
      if (std::find(decl->endpoints.begin(), decl->endpoints.end(), ep.endpoint_id) != decl->endpoints.end()) {
        ep.max_instances_per_model = *opts.max_instances;
      }
    }
  }
  const auth::GroupSet groups = all_required_groups(config);
  gateway::Gateway gw(std::move(config));
  auto& loop = gw.loop();

  std::vector<std::string> tokens;
  for (int u = 0; u < std::max(1, spec.users); ++u) {
    tokens.push_back(gw.mint_token("bench-user-" + std::to_string(u) + "@example.org", groups).raw);
  }

  if (spec.mode == Mode::kBatch) {
    BenchReport r = run_batch(spec, gw, tokens.front());
    r.telemetry_tokens = gw.telemetry().totals().total();
    r.telemetry_completion_tokens = gw.telemetry().totals().completion;
    r.backend_tokens = static_cast<std::int64_t>(gw.fabric().tokens_emitted());
    return r;
  }

  int instances = 0;
  if (opts.prewarm_instances > 0) {
    const std::string endpoint = router::route(spec.model, gw.registry(), gw.fabric().active_instances(), gw.prober());
    auto ids = gw.fabric().prewarm(spec.model, endpoint, opts.prewarm_instances);
    instances = static_cast<int>(ids.size());
    auto all_running = [&] {
      for (auto id : ids) {
        const auto* m = gw.fabric().instance(id);
        if (m == nullptr || m->state != fabric::InstanceState::kRunning) return false;
      }
      return true;
    };
    loop.run_while([&] { return !all_running(); });
    if (!all_running()) throw Error(ErrorCode::kInsufficientResources, "could not bring up the requested instances");
  }

  const std::string path = "/v1/chat/completions";
  Driver driver(spec, loop, [&](const RequestSpec& r, std::function<void(RequestRecord)> done) {
    gateway::HttpRequest req;
    req.method = "POST";
    req.path = path;
    req.headers["authorization"] = "Bearer " + tokens[static_cast<std::size_t>(r.index) % tokens.size()];
    req.body = request_body(spec, r).dump();
    const Instant sent = loop.now();
    auto sink = std::make_shared<gateway::RecordingSink>([&loop] { return loop.now(); });
    sink->on_finish = [r, sent, done = std::move(done)](gateway::RecordingSink& s) {
      done(record_from_sink(s, r, sent));
    };
    gw.handle(std::move(req), sink);
  });
  driver.start();
  loop.run_while([&] { return !driver.finished(); });

  BenchReport report;
  report.target = "inproc";
  report.spec = spec;
  report.instances = instances;
  report.records = driver.take_records();
  std::sort(report.records.begin(), report.records.end(),
            [](const RequestRecord& a, const RequestRecord& b) { return a.index < b.index; });
  report.aborted = driver.aborted();
  report.abort_reason = driver.abort_reason();
  summarize(report);

  if (report.duration_s > 0) {
    const Instant end{from_seconds(report.end_s)};
    const auto snap = gw.telemetry().snapshot(end - Instant{from_seconds(report.start_s)}, end);
    report.store_request_throughput = snap.request_throughput;
    report.store_output_token_throughput = snap.output_token_throughput;
  }
  report.telemetry_tokens = gw.telemetry().totals().total();
  report.telemetry_completion_tokens = gw.telemetry().totals().completion;
  report.backend_tokens = static_cast<std::int64_t>(gw.fabric().tokens_emitted());
  report.peak_pending = gw.stats().peak_pending;
  report.rejected = gw.stats().rejected;
  return report;
}

double harness_overhead_per_request(const WorkloadSpec& spec) {
  EventLoop loop(ClockMode::kVirtual);
  const auto wall0 = std::chrono::steady_clock::now();
  Driver driver(spec, loop, [&](const RequestSpec& r, std::function<void(RequestRecord)> done) {
    auto body = request_body(spec, r).dump();
    RequestRecord rec;
    rec.index = r.index;
    rec.sent_s = to_seconds(loop.now().time_since_epoch());
    rec.done_s = rec.sent_s;
    rec.status = body.empty() ? 500 : 200;
    rec.completion_tokens = r.output_tokens;
    loop.post([rec, done = std::move(done)] { done(rec); });
  });
  driver.start();
  loop.run_while([&] { return !driver.finished(); });
  BenchReport report;
  report.records = driver.take_records();
  summarize(report);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return report.records.empty() ? 0.0 : wall / static_cast<double>(report.records.size());
}

std::vector<SweepPoint> run_sweep(const SweepSpec& sweep, const gateway::ServiceConfig& config) {
  std::vector<double> rates = sweep.rates.empty() ? std::vector<double>{sweep.base.rate} : sweep.rates;
  std::vector<int> instances = sweep.instances.empty() ? std::vector<int>{1} : sweep.instances;
  std::vector<int> conc = sweep.concurrencies.empty() ? std::vector<int>{0} : sweep.concurrencies;
  std::vector<SweepPoint> out;
  for (int k : instances) {
    for (int c : conc) {
      for (double rate : (c > 0 ? std::vector<double>{kInfiniteRate} : rates)) {
        SweepPoint p;
        p.rate = rate;
        p.instances = k;
        p.concurrency = c;
        WorkloadSpec spec = sweep.base;
        spec.rate = rate;
        spec.concurrency = c;
        InprocOptions opts;
        opts.prewarm_instances = k;
        opts.max_instances = k;
        try {
          p.report = run_inproc(spec, config, opts);
        } catch (const std::exception& e) {
          p.error = e.what();
        }
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

}  // namespace fedgate::bench
