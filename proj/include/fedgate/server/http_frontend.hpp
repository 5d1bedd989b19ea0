#pragma once

#include <memory>
#include <string>
#include <thread>

#include "fedgate/auth/identity_provider.hpp"
#include "fedgate/gateway/gateway.hpp"

namespace fedgate::server {

struct FrontendOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 = pick a free port
  int threads = 64;
  // Expose the embedded identity provider under /idp (introspect, mint).
  bool expose_idp = true;
};

/// HTTP/SSE front door. Requests are handed to the gateway's loop and the
/// answer (or the event stream) is relayed back to the connection.
///
/// The gateway loop must be driven in wall-clock mode, either by start()
/// or by the caller.
class HttpFrontend {
 public:
  HttpFrontend(gateway::Gateway& gateway, FrontendOptions options = {});
  ~HttpFrontend();

  HttpFrontend(const HttpFrontend&) = delete;
  HttpFrontend& operator=(const HttpFrontend&) = delete;

  /// Binds, starts the loop thread (if `drive_loop`) and the listener thread.
  /// Returns the bound port. Throws std::runtime_error when binding fails.
  int start(bool drive_loop = true);
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();

  int port() const { return port_; }
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

/// Standalone identity provider speaking the introspection wire contract:
/// POST /introspect (form field `token`) and POST /mint (JSON
/// {subject, groups, ttl_s}).
class IdpServer {
 public:
  explicit IdpServer(auth::MockIdentityProvider& provider, std::string host = "127.0.0.1", int port = 0);
  ~IdpServer();

  IdpServer(const IdpServer&) = delete;
  IdpServer& operator=(const IdpServer&) = delete;

  int start();
  void stop();
  int port() const { return port_; }
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace fedgate::server
