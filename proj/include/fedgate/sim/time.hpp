#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>

namespace fedgate {

// All simulated and wall time is carried at microsecond resolution. One
// microsecond is the "tick" that latency checks are stated against.
using Duration = std::chrono::microseconds;

struct SimEpoch {
  using duration = Duration;
  using rep = Duration::rep;
  using period = Duration::period;
  using time_point = std::chrono::time_point<SimEpoch, Duration>;
  static constexpr bool is_steady = true;
};

using Instant = SimEpoch::time_point;

inline constexpr Duration kTick{1};

inline Duration from_seconds(double s) {
  return Duration{static_cast<std::int64_t>(std::llround(s * 1e6))};
}

inline double to_seconds(Duration d) { return static_cast<double>(d.count()) / 1e6; }

inline double to_seconds(Instant t) { return to_seconds(t.time_since_epoch()); }

inline Instant at_seconds(double s) { return Instant{from_seconds(s)}; }

}  // namespace fedgate
