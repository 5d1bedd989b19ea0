#include "fedgate/sim/event_loop.hpp"

#include <stop_token>
#include <utility>

namespace fedgate {

EventLoop::EventLoop(ClockMode mode)
    : mode_(mode), wall_start_(std::chrono::steady_clock::now()) {}

Instant EventLoop::now() const {
  if (mode_ == ClockMode::kVirtual) return virtual_now_;
  return Instant{std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now() -
                                                      wall_start_)};
}

EventId EventLoop::schedule_at(Instant when, std::function<void()> fn) {
  if (mode_ == ClockMode::kVirtual && when < virtual_now_) when = virtual_now_;
  const EventId id = next_id_++;
  queue_.push(Event{when, next_seq_++, id, std::move(fn)});
  return id;
}

EventId EventLoop::schedule_after(Duration delay, std::function<void()> fn) {
  return schedule_at(now() + delay, std::move(fn));
}

void EventLoop::cancel(EventId id) { cancelled_.insert(id); }

void EventLoop::post(std::function<void()> fn) {
  {
    std::lock_guard lock(inbox_mu_);
    inbox_.push_back(std::move(fn));
  }
  inbox_cv_.notify_one();
}

void EventLoop::drain_inbox_locked(std::unique_lock<std::mutex>& lock) {
  std::vector<std::function<void()>> work;
  work.swap(inbox_);
  lock.unlock();
  for (auto& fn : work) {
    schedule_at(now(), std::move(fn));
  }
  lock.lock();
}

void EventLoop::dispatch(Event ev) {
  if (auto it = cancelled_.find(ev.id); it != cancelled_.end()) {
    cancelled_.erase(it);
    return;
  }
  if (mode_ == ClockMode::kVirtual && ev.when > virtual_now_) virtual_now_ = ev.when;
  ++processed_;
  ev.fn();
  if (after_event_) after_event_();
}

bool EventLoop::step() {
  {
    std::unique_lock lock(inbox_mu_);
    if (!inbox_.empty()) drain_inbox_locked(lock);
  }
  if (queue_.empty()) return false;
  Event ev = queue_.top();
  queue_.pop();
  dispatch(std::move(ev));
  return true;
}

void EventLoop::run() {
  while (step()) {
  }
}

void EventLoop::run_until(Instant deadline) {
  for (;;) {
    {
      std::unique_lock lock(inbox_mu_);
      if (!inbox_.empty()) drain_inbox_locked(lock);
    }
    if (queue_.empty() || queue_.top().when > deadline) break;
    Event ev = queue_.top();
    queue_.pop();
    dispatch(std::move(ev));
  }
  if (mode_ == ClockMode::kVirtual && virtual_now_ < deadline) virtual_now_ = deadline;
}

void EventLoop::run_while(const std::function<bool()>& keep_going) {
  while (keep_going() && step()) {
  }
}

void EventLoop::run_forever(std::stop_token stop) {
  std::stop_callback wake(stop, [this] { inbox_cv_.notify_all(); });
  std::unique_lock lock(inbox_mu_);
  while (!stop.stop_requested()) {
    if (!inbox_.empty()) drain_inbox_locked(lock);
    if (!queue_.empty() && queue_.top().when <= now()) {
      Event ev = queue_.top();
      queue_.pop();
      lock.unlock();
      dispatch(std::move(ev));
      lock.lock();
      continue;
    }
    auto ready = [&] { return stop.stop_requested() || !inbox_.empty(); };
    if (queue_.empty()) {
      inbox_cv_.wait(lock, ready);
    } else {
      const auto wait_for = queue_.top().when - now();
      inbox_cv_.wait_for(lock, wait_for, ready);
    }
  }
}

}  // namespace fedgate
