#include "fedgate/server/http_frontend.hpp"

#include <condition_variable>
#include <deque>
#include <future>
#include <mutex>
#include <stdexcept>

#include <httplib.h>

#include "fedgate/errors.hpp"

namespace fedgate::server {

using nlohmann::json;

namespace {

/// Bridges one connection thread and the loop thread.
class BridgeSink final : public gateway::ResponseSink {
 public:
  void send(int status, const std::string& content_type, std::string body,
            const gateway::Headers& headers) override {
    std::lock_guard lock(mu_);
    status_ = status;
    content_type_ = content_type;
    body_ = std::move(body);
    headers_ = headers;
    ready_ = true;
    done_ = true;
    cv_.notify_all();
  }
  void start_stream() override {
    std::lock_guard lock(mu_);
    status_ = 200;
    content_type_ = "text/event-stream";
    streaming_ = true;
    ready_ = true;
    cv_.notify_all();
  }
  void stream_event(std::string data) override {
    std::lock_guard lock(mu_);
    events_.push_back(std::move(data));
    cv_.notify_all();
  }
  void end_stream() override {
    std::lock_guard lock(mu_);
    done_ = true;
    cv_.notify_all();
  }
  bool closed() const override { return closed_.load(); }

  void wait_ready() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return ready_; });
  }

  /// Next batch of events; empty with `finished` set when the stream is over.
  std::deque<std::string> next_events(bool& finished) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !events_.empty() || done_; });
    std::deque<std::string> out;
    out.swap(events_);
    finished = done_ && out.empty();
    return out;
  }

  void mark_closed() { closed_.store(true); }

  int status_ = 500;
  std::string content_type_;
  std::string body_;
  gateway::Headers headers_;
  bool streaming_ = false;

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  bool ready_ = false;
  bool done_ = false;
  std::deque<std::string> events_;
  std::atomic<bool> closed_{false};
};

gateway::HttpRequest to_request(const httplib::Request& req) {
  gateway::HttpRequest out;
  out.method = req.method;
  out.path = req.path;
  for (const auto& [k, v] : req.headers) {
    std::string key = k;
    for (auto& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.headers[key] = v;
  }
  for (const auto& [k, v] : req.params) out.query[k] = v;
  out.body = req.body;
  // Multipart upload: the batch file travels in the "file" part.
  if (req.is_multipart_form_data()) {
    if (req.has_file("file")) out.body = req.get_file_value("file").content;
    if (req.has_file("model")) out.query["model"] = req.get_file_value("model").content;
  }
  return out;
}

void mount_idp(httplib::Server& srv, auth::MockIdentityProvider& idp, const std::string& prefix,
               std::function<bool(const httplib::Request&)> may_mint) {
  srv.Post(prefix + "/introspect", [&idp](const httplib::Request& req, httplib::Response& res) {
    std::string token = req.has_param("token") ? req.get_param_value("token") : std::string{};
    if (token.empty() && req.has_file("token")) token = req.get_file_value("token").content;
    const auto r = idp.introspect_now(token);
    json body = {{"active", r.active}};
    if (!r.subject.empty()) {
      const double offset = auth::unix_offset_for(idp.loop());
      body["sub"] = r.subject;
      body["groups"] = r.groups;
      if (r.has_expiry) body["exp"] = static_cast<std::int64_t>(to_seconds(r.expires_at.time_since_epoch()) + offset);
    }
    res.set_content(body.dump(), "application/json");
  });
  srv.Post(prefix + "/mint", [&idp, may_mint](const httplib::Request& req, httplib::Response& res) {
    if (may_mint && !may_mint(req)) {
      res.status = 403;
      res.set_content(R"({"error":{"message":"minting requires an admin token","type":"forbidden","code":403}})",
                      "application/json");
      return;
    }
    json b = json::parse(req.body, nullptr, false);
    if (!b.is_object() || !b.contains("subject") || !b["subject"].is_string()) {
      res.status = 422;
      res.set_content(R"({"error":{"message":"subject is required","type":"invalid_request","code":422}})",
                      "application/json");
      return;
    }
    auth::GroupSet groups;
    for (const auto& g : b.value("groups", json::array())) {
      if (g.is_string()) groups.insert(g.get<std::string>());
    }
    try {
      const auto ttl = b.contains("ttl_s") ? from_seconds(b["ttl_s"].get<double>()) : auth::kDefaultTokenTtl;
      auto tok = idp.mint(b["subject"].get<std::string>(), groups, ttl);
      const double offset = auth::unix_offset_for(idp.loop());
      json out = {{"access_token", tok.raw},
                  {"token_type", "Bearer"},
                  {"sub", tok.subject},
                  {"groups", tok.groups},
                  {"expires_at", static_cast<std::int64_t>(to_seconds(tok.expires_at.time_since_epoch()) + offset)}};
      res.set_content(out.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 422;
      res.set_content(json{{"error", {{"message", e.what()}, {"type", "invalid_request"}, {"code", 422}}}}.dump(),
                      "application/json");
    }
  });
}

}  // namespace

struct HttpFrontend::Impl {
  gateway::Gateway& gw;
  FrontendOptions opts;
  httplib::Server srv;
  std::jthread loop_thread;
  std::jthread listen_thread;
  std::mutex stop_mu;
  std::condition_variable stop_cv;
  bool stopped = false;

  Impl(gateway::Gateway& g, FrontendOptions o) : gw(g), opts(std::move(o)) {}

  void serve(const httplib::Request& req, httplib::Response& res) {
    auto sink = std::make_shared<BridgeSink>();
    gw.loop().post([this, r = to_request(req), sink]() mutable { gw.handle(std::move(r), sink); });
    sink->wait_ready();
    for (const auto& [k, v] : sink->headers_) res.set_header(k, v);
    res.status = sink->status_;
    if (!sink->streaming_) {
      res.set_content(sink->body_, sink->content_type_);
      return;
    }
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [sink](std::size_t, httplib::DataSink& out) {
      bool finished = false;
      auto events = sink->next_events(finished);
      for (const auto& e : events) {
        const std::string frame = "data: " + e + "\n\n";
        if (!out.is_writable() || !out.write(frame.data(), frame.size())) {
          sink->mark_closed();
          return false;
        }
      }
      if (finished) out.done();
      return true;
    }, [sink](bool success) {
      if (!success) sink->mark_closed();
    });
  }
};

HttpFrontend::HttpFrontend(gateway::Gateway& gateway, FrontendOptions options)
    : impl_(std::make_unique<Impl>(gateway, std::move(options))) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) { impl_->serve(req, res); };
  auto& srv = impl_->srv;
  srv.new_task_queue = [n = impl_->opts.threads] { return new httplib::ThreadPool(static_cast<size_t>(n)); };
  for (const char* route : {"/v1/chat/completions", "/v1/completions", "/v1/embeddings", "/admin/models",
                            "/v1/batches", R"(/v1/batches/([^/]+)/cancel)"}) {
    srv.Post(route, handler);
  }
  for (const char* route : {"/v1/models", "/jobs", "/metrics", "/healthz", "/v1/batches", R"(/v1/batches/([^/]+))",
                            R"(/v1/batches/([^/]+)/output)"}) {
    srv.Get(route, handler);
  }
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(json{{"error", {{"message", "not found"}, {"type", "not_found"}, {"code", res.status}}}}.dump(),
                      "application/json");
    }
  });
  if (impl_->opts.expose_idp && gateway.mock_identity() != nullptr) {
    auto& gw = impl_->gw;
    mount_idp(srv, *gateway.mock_identity(), "/idp", [&gw](const httplib::Request& req) {
      // Minting needs an admin bearer token (checked synchronously here).
      const auto header = req.get_header_value("Authorization");
      const auto token = auth::bearer_token(header);
      const auto r = gw.mock_identity()->introspect_now(token);
      return r.active && r.groups.contains(gw.config().admin_group);
    });
  }
}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::start(bool drive_loop) {
  auto& im = *impl_;
  if (im.gw.loop().mode() != ClockMode::kWall) throw std::runtime_error("the HTTP frontend needs a wall-clock loop");
  if (im.opts.port == 0) {
    port_ = im.srv.bind_to_any_port(im.opts.host);
  } else {
    port_ = im.srv.bind_to_port(im.opts.host, im.opts.port) ? im.opts.port : -1;
  }
  if (port_ <= 0) throw std::runtime_error("cannot bind " + im.opts.host + ":" + std::to_string(im.opts.port));
  if (drive_loop) {
    im.loop_thread = std::jthread([&im](std::stop_token st) { im.gw.loop().run_forever(st); });
  }
  im.listen_thread = std::jthread([&im] { im.srv.listen_after_bind(); });
  im.srv.wait_until_ready();
  return port_;
}

void HttpFrontend::stop() {
  if (!impl_) return;
  auto& im = *impl_;
  im.srv.stop();
  if (im.listen_thread.joinable()) im.listen_thread.join();
  if (im.loop_thread.joinable()) {
    im.loop_thread.request_stop();
    im.loop_thread.join();
  }
  {
    std::lock_guard lock(im.stop_mu);
    im.stopped = true;
  }
  im.stop_cv.notify_all();
}

void HttpFrontend::wait() {
  std::unique_lock lock(impl_->stop_mu);
  impl_->stop_cv.wait(lock, [&] { return impl_->stopped; });
}

std::string HttpFrontend::base_url() const { return "http://" + impl_->opts.host + ":" + std::to_string(port_); }

struct IdpServer::Impl {
  Impl(auth::MockIdentityProvider& p, std::string h, int pt) : idp(p), host(std::move(h)), port(pt) {}
  auth::MockIdentityProvider& idp;
  std::string host;
  int port;
  httplib::Server srv;
  std::jthread thread;
};

IdpServer::IdpServer(auth::MockIdentityProvider& provider, std::string host, int port)
    : impl_(std::make_unique<Impl>(provider, std::move(host), port)) {
  mount_idp(impl_->srv, provider, "", nullptr);
}

IdpServer::~IdpServer() { stop(); }

int IdpServer::start() {
  auto& im = *impl_;
  port_ = im.port == 0 ? im.srv.bind_to_any_port(im.host) : (im.srv.bind_to_port(im.host, im.port) ? im.port : -1);
  if (port_ <= 0) throw std::runtime_error("cannot bind identity provider on " + im.host);
  im.thread = std::jthread([&im] { im.srv.listen_after_bind(); });
  im.srv.wait_until_ready();
  return port_;
}

void IdpServer::stop() {
  if (!impl_) return;
  impl_->srv.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string IdpServer::base_url() const { return "http://" + impl_->host + ":" + std::to_string(port_); }

}  // namespace fedgate::server
