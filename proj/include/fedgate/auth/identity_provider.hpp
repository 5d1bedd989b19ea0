#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "fedgate/auth/token.hpp"
#include "fedgate/sim/event_loop.hpp"

namespace fedgate::auth {

using IntrospectionCallback = std::function<void(Introspection)>;

/// Token introspection source. Implementations may answer synchronously or
/// later; `done` is always invoked exactly once.
class IdentityProvider {
 public:
  virtual ~IdentityProvider() = default;
  virtual void introspect(const std::string& token, IntrospectionCallback done) = 0;
  /// Number of introspection requests the provider has served.
  virtual std::uint64_t calls() const = 0;
};

/// In-process identity provider used for tests, benchmarks and the embedded
/// server mode. Answers after a configurable delay measured on the loop's
/// clock.
class MockIdentityProvider final : public IdentityProvider {
 public:
  MockIdentityProvider(EventLoop& loop, std::uint64_t seed = 0x5eed);

  AccessToken mint(const std::string& subject, GroupSet groups, Duration ttl = kDefaultTokenTtl);

  void introspect(const std::string& token, IntrospectionCallback done) override;
  /// Synchronous lookup, used by the HTTP introspection route.
  Introspection introspect_now(const std::string& token);

  std::uint64_t calls() const override { return calls_.load(); }
  void set_delay(Duration d) { delay_ = d; }
  Duration delay() const { return delay_; }
  Instant now() const { return loop_.now(); }
  const EventLoop& loop() const { return loop_; }

 private:
  EventLoop& loop_;
  Duration delay_{0};
  std::atomic<std::uint64_t> calls_{0};
  std::mutex mu_;
  std::mt19937_64 rng_;
  std::uint64_t minted_ = 0;
  std::map<std::string, AccessToken> tokens_;
};

/// Talks to an identity provider over HTTP: POST {base}/introspect with form
/// field `token`, JSON reply {active, sub, exp, groups}. Each call runs on a
/// worker thread and the answer is posted back onto the loop.
class HttpIdentityProvider final : public IdentityProvider {
 public:
  HttpIdentityProvider(EventLoop& loop, std::string base_url, Duration timeout = std::chrono::seconds(10));
  ~HttpIdentityProvider() override;

  void introspect(const std::string& token, IntrospectionCallback done) override;
  std::uint64_t calls() const override { return calls_.load(); }

  /// Blocking variant, callable from any thread.
  Introspection introspect_blocking(const std::string& token);

 private:
  EventLoop& loop_;
  std::string base_url_;
  Duration timeout_;
  // Offset between unix seconds on the wire and the loop clock.
  double unix_offset_s_;
  std::atomic<std::uint64_t> calls_{0};
  struct Worker {
    std::jthread thread;
    std::shared_ptr<std::atomic<bool>> finished;
  };
  std::mutex workers_mu_;
  std::vector<Worker> workers_;
};

/// Unix seconds <-> loop clock mapping for wall-clock loops.
double unix_offset_for(const EventLoop& loop);

}  // namespace fedgate::auth
