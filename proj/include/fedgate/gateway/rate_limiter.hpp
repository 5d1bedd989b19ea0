#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>

#include "fedgate/sim/time.hpp"

namespace fedgate::gateway {

struct RateLimitConfig {
  bool enabled = true;
  double capacity = 100.0;     // requests
  double refill_per_s = 50.0;  // requests/s
};

/// Token bucket in fixed point (1 request = 1e9 units) so refill arithmetic
/// is exact: a bucket starts full and each admitted request costs one unit
/// request.
class TokenBucket {
 public:
  static constexpr std::int64_t kUnit = 1'000'000'000;

  TokenBucket(double capacity, double refill_per_s, Instant now);

  bool try_acquire(Instant now);
  /// Current level in requests (refilled to `now`).
  double level(Instant now);
  /// Time until one request's worth of tokens is available.
  Duration retry_after(Instant now);

  std::int64_t capacity_units() const { return capacity_; }
  std::int64_t level_units() const { return level_; }

 private:
  void refill(Instant now);

  std::int64_t capacity_;
  std::int64_t refill_units_per_us_;
  std::int64_t level_;
  Instant last_;
};

struct RateDecision {
  bool pass = true;
  Duration retry_after{0};
};

/// Per-principal token buckets.
class RateLimiter {
 public:
  explicit RateLimiter(RateLimitConfig config = {}) : config_(config) {}

  RateDecision check(const std::string& subject, Instant now);
  const RateLimitConfig& config() const { return config_; }

 private:
  RateLimitConfig config_;
  std::mutex mu_;
  std::map<std::string, TokenBucket> buckets_;
};

}  // namespace fedgate::gateway
