#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedgate/auth/authenticator.hpp"
#include "fedgate/auth/identity_provider.hpp"
#include "fedgate/batch/batch_engine.hpp"
#include "fedgate/batch/file_store.hpp"
#include "fedgate/fabric/fabric.hpp"
#include "fedgate/gateway/config.hpp"
#include "fedgate/gateway/rate_limiter.hpp"
#include "fedgate/router/registry.hpp"
#include "fedgate/router/selection.hpp"
#include "fedgate/sim/event_loop.hpp"
#include "fedgate/telemetry/store.hpp"

namespace fedgate::gateway {

using Headers = std::map<std::string, std::string>;

struct HttpRequest {
  std::string method = "GET";
  std::string path;
  Headers headers;  // lower-case names
  std::map<std::string, std::string> query;
  std::string body;

  std::string header(const std::string& name) const;
};

/// Where a response goes. Called on the loop thread only.
class ResponseSink {
 public:
  virtual ~ResponseSink() = default;
  virtual void send(int status, const std::string& content_type, std::string body, const Headers& headers) = 0;
  /// 200 text/event-stream.
  virtual void start_stream() = 0;
  /// One SSE event; the sink adds the `data: ` framing.
  virtual void stream_event(std::string data) = 0;
  virtual void end_stream() = 0;
  /// Polled before each event; a closed client cancels its task.
  virtual bool closed() const { return false; }
};

/// In-process sink that keeps everything it receives.
class RecordingSink final : public ResponseSink {
 public:
  explicit RecordingSink(std::function<Instant()> clock = {}) : clock_(std::move(clock)) {}

  void send(int status, const std::string& content_type, std::string body, const Headers& headers) override;
  void start_stream() override;
  void stream_event(std::string data) override;
  void end_stream() override;

  int status = 0;
  std::string content_type;
  std::string body;
  Headers headers;
  std::vector<std::string> events;  // without the [DONE] sentinel
  bool saw_done = false;
  bool streaming = false;
  bool finished = false;
  std::optional<Instant> first_byte_at;
  std::optional<Instant> finished_at;
  std::function<void(RecordingSink&)> on_finish;

  nlohmann::json json() const { return nlohmann::json::parse(body, nullptr, false); }

 private:
  void mark_first();
  void mark_finished();
  std::function<Instant()> clock_;
};

struct GatewayStats {
  std::uint64_t requests = 0;
  std::uint64_t accepted = 0;   // tasks handed to the fabric
  std::uint64_t rejected = 0;   // answered with an error before dispatch
  std::uint64_t completed = 0;  // tasks answered with a result
  std::uint64_t failed = 0;     // tasks answered with an error
  std::size_t pending = 0;      // accepted and not yet answered
  std::size_t peak_pending = 0;
  std::uint64_t backpressure_rejections = 0;
};

/// The service: owns the loop, registry, identity plumbing, fabric,
/// telemetry and batch engine, and turns HTTP requests into tasks.
///
/// handle() and everything reachable from it run on the loop thread.
class Gateway {
 public:
  explicit Gateway(ServiceConfig config);
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void handle(HttpRequest req, std::shared_ptr<ResponseSink> sink);

  /// Mints a token on the embedded identity provider. Throws when the
  /// gateway is wired to an external one.
  auth::AccessToken mint_token(const std::string& subject, auth::GroupSet groups,
                               std::optional<Duration> ttl = std::nullopt);

  EventLoop& loop() { return loop_; }
  router::Registry& registry() { return registry_; }
  fabric::Fabric& fabric() { return *fabric_; }
  router::ClusterProber& prober() { return *prober_; }
  telemetry::TelemetryStore& telemetry() { return *telemetry_; }
  auth::Authenticator& authenticator() { return *authenticator_; }
  auth::IdentityProvider& identity() { return *identity_; }
  auth::MockIdentityProvider* mock_identity() { return mock_identity_; }
  batch::BatchEngine& batches() { return *batches_; }
  batch::FileStore& files() { return files_; }
  RateLimiter& rate_limiter() { return limiter_; }
  const ServiceConfig& config() const { return config_; }
  const GatewayStats& stats() const { return stats_; }
  double unix_offset_s() const { return unix_offset_s_; }

  /// Endpoint chosen for each dispatched task, in dispatch order (bounded).
  const std::vector<std::string>& routing_log() const { return routing_log_; }
  void set_routing_log_limit(std::size_t n) { routing_log_limit_ = n; }

  nlohmann::json jobs_json(bool include_stopped) const;
  nlohmann::json metrics_json(Duration window) const;
  nlohmann::json models_json() const;

 private:
  using Handler = void (Gateway::*)(const HttpRequest&, const auth::Principal&, const std::shared_ptr<ResponseSink>&,
                                    Instant);

  void authenticated(const HttpRequest& req, const std::shared_ptr<ResponseSink>& sink, Handler handler,
                     Instant arrived);
  void inference(TaskKind kind, const HttpRequest& req, const auth::Principal& p,
                 const std::shared_ptr<ResponseSink>& sink, Instant arrived);
  void chat(const HttpRequest& req, const auth::Principal& p, const std::shared_ptr<ResponseSink>& sink, Instant a);
  void completion(const HttpRequest& req, const auth::Principal& p, const std::shared_ptr<ResponseSink>& sink,
                  Instant a);
  void embedding(const HttpRequest& req, const auth::Principal& p, const std::shared_ptr<ResponseSink>& sink,
                 Instant a);
  void list_models(const HttpRequest& req, const auth::Principal& p, const std::shared_ptr<ResponseSink>& sink,
                   Instant a);
  void jobs(const HttpRequest& req, const auth::Principal& p, const std::shared_ptr<ResponseSink>& sink, Instant a);
  void metrics(const HttpRequest& req, const auth::Principal& p, const std::shared_ptr<ResponseSink>& sink,
               Instant a);
  void admin_models(const HttpRequest& req, const auth::Principal& p, const std::shared_ptr<ResponseSink>& sink,
                    Instant a);
  void batches_route(const HttpRequest& req, const auth::Principal& p, const std::shared_ptr<ResponseSink>& sink,
                     Instant a);

  void send_json(ResponseSink& sink, int status, const nlohmann::json& body, const Headers& headers = {});
  void send_error(ResponseSink& sink, const ApiError& err, const Headers& headers = {});
  bool is_admin(const auth::Principal& p) const;
  std::int64_t unix_now() const;

  ServiceConfig config_;
  EventLoop loop_;
  router::Registry registry_;
  std::unique_ptr<auth::IdentityProvider> identity_;
  auth::MockIdentityProvider* mock_identity_ = nullptr;
  std::unique_ptr<auth::Authenticator> authenticator_;
  RateLimiter limiter_;
  std::unique_ptr<telemetry::TelemetryStore> telemetry_;
  std::unique_ptr<fabric::Fabric> fabric_;
  std::unique_ptr<router::ClusterProber> prober_;
  batch::FileStore files_;
  std::unique_ptr<batch::BatchEngine> batches_;
  IdGenerator ids_;
  double unix_offset_s_ = 0.0;

  GatewayStats stats_;
  std::vector<std::string> routing_log_;
  std::size_t routing_log_limit_ = 1'000'000;
};

/// Splits "a=1&b=two" into a map (percent-decoding values).
std::map<std::string, std::string> parse_query(std::string_view q);

}  // namespace fedgate::gateway
