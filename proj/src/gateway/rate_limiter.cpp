#include "fedgate/gateway/rate_limiter.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedgate::gateway {

TokenBucket::TokenBucket(double capacity, double refill_per_s, Instant now)
    : capacity_(static_cast<std::int64_t>(std::llround(capacity * kUnit))),
      // units per microsecond = refill_per_s * 1e9 / 1e6
      refill_units_per_us_(static_cast<std::int64_t>(std::llround(refill_per_s * 1000.0))),
      level_(capacity_),
      last_(now) {
  if (capacity_ < kUnit) throw std::invalid_argument("bucket capacity must be at least one request");
  if (refill_units_per_us_ < 0) throw std::invalid_argument("refill rate must be non-negative");
}

void TokenBucket::refill(Instant now) {
  if (now <= last_) return;
  const std::int64_t elapsed = (now - last_).count();
  const std::int64_t room = capacity_ - level_;
  // Avoid overflow on long idle gaps.
  if (refill_units_per_us_ > 0 && elapsed >= room / refill_units_per_us_ + 1) {
    level_ = capacity_;
  } else {
    level_ = std::min(capacity_, level_ + elapsed * refill_units_per_us_);
  }
  last_ = now;
}

bool TokenBucket::try_acquire(Instant now) {
  refill(now);
  if (level_ < kUnit) return false;
  level_ -= kUnit;
  return true;
}

double TokenBucket::level(Instant now) {
  refill(now);
  return static_cast<double>(level_) / kUnit;
}

Duration TokenBucket::retry_after(Instant now) {
  refill(now);
  if (level_ >= kUnit) return Duration::zero();
  if (refill_units_per_us_ == 0) return Duration::max();
  const std::int64_t missing = kUnit - level_;
  return Duration{(missing + refill_units_per_us_ - 1) / refill_units_per_us_};
}

RateDecision RateLimiter::check(const std::string& subject, Instant now) {
  if (!config_.enabled) return {};
  std::lock_guard lock(mu_);
  auto it = buckets_.find(subject);
  if (it == buckets_.end()) {
    it = buckets_.emplace(subject, TokenBucket(config_.capacity, config_.refill_per_s, now)).first;
  }
  RateDecision d;
  d.pass = it->second.try_acquire(now);
  if (!d.pass) d.retry_after = it->second.retry_after(now);
  return d;
}

}  // namespace fedgate::gateway
