#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <queue>
#include <stop_token>
#include <unordered_set>
#include <vector>

#include "fedgate/sim/time.hpp"

namespace fedgate {

enum class ClockMode { kVirtual, kWall };

using EventId = std::uint64_t;

/// Single-threaded discrete-event loop.
///
/// Every state mutation in the fabric, router and gateway core happens on
/// this loop. Events are ordered by (time, insertion sequence), which makes
/// virtual-time runs fully deterministic. In wall mode the loop sleeps on a
/// condition variable until the next deadline or until another thread
/// posts work; there is no polling interval anywhere.
class EventLoop {
 public:
  explicit EventLoop(ClockMode mode = ClockMode::kVirtual);

  EventLoop(const EventLoop&) = delete;
  EventLoop& operator=(const EventLoop&) = delete;

  ClockMode mode() const { return mode_; }
  Instant now() const;

  EventId schedule_at(Instant when, std::function<void()> fn);
  EventId schedule_after(Duration delay, std::function<void()> fn);
  void cancel(EventId id);

  /// Thread-safe: enqueue work to run on the loop at the current time.
  void post(std::function<void()> fn);

  /// Runs one event. Returns false when nothing is runnable.
  bool step();
  void run();
  void run_until(Instant deadline);
  /// Runs while `keep_going()` holds and events remain.
  void run_while(const std::function<bool()>& keep_going);

  /// Wall mode: blocks, dispatching events as they come due, until stop is
  /// requested.
  void run_forever(std::stop_token stop);

  /// Called after every dispatched event (used for invariant checking).
  void set_after_event_hook(std::function<void()> hook) { after_event_ = std::move(hook); }

  std::uint64_t events_processed() const { return processed_; }
  std::size_t pending_events() const { return queue_.size(); }

 private:
  struct Event {
    Instant when;
    std::uint64_t seq;
    EventId id;
    std::function<void()> fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.when != b.when) return a.when > b.when;
      return a.seq > b.seq;
    }
  };

  void drain_inbox_locked(std::unique_lock<std::mutex>& lock);
  void dispatch(Event ev);

  ClockMode mode_;
  Instant virtual_now_{};
  std::chrono::steady_clock::time_point wall_start_;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::unordered_set<EventId> cancelled_;
  std::uint64_t next_seq_ = 0;
  EventId next_id_ = 1;
  std::uint64_t processed_ = 0;
  std::function<void()> after_event_;

  std::mutex inbox_mu_;
  std::condition_variable inbox_cv_;
  std::vector<std::function<void()>> inbox_;
};

}  // namespace fedgate
