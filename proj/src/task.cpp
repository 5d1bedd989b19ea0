#include "fedgate/task.hpp"

#include <atomic>

namespace fedgate {

namespace {
std::atomic<std::uint64_t> g_double_resolutions{0};

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kChat: return "chat";
    case TaskKind::kCompletion: return "completion";
    case TaskKind::kEmbedding: return "embedding";
  }
  return "chat";
}

bool InferenceTask::resolve(const TaskOutcome& outcome, Instant now) {
  if (resolved_) {
    ++g_double_resolutions;
    return false;
  }
  resolved_ = true;
  completed_at = now;
  if (on_done) on_done(outcome);
  return true;
}

void InferenceTask::deliver_token(std::string_view piece) {
  const int index = tokens_delivered++;
  if (on_token) on_token(piece, index);
}

std::uint64_t InferenceTask::double_resolutions() { return g_double_resolutions.load(); }

std::string make_ulid(std::uint64_t millis, std::uint64_t rand_hi, std::uint64_t rand_lo) {
  static constexpr char kAlphabet[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
  // 128 bits: 48 time + 80 random, rendered as 26 base32 chars.
  unsigned __int128 v = (static_cast<unsigned __int128>(millis & 0xFFFFFFFFFFFFULL) << 80) |
                        (static_cast<unsigned __int128>(rand_hi & 0xFFFFULL) << 64) | rand_lo;
  std::string out(26, '0');
  for (int i = 25; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kAlphabet[static_cast<unsigned>(v & 31U)];
    v >>= 5;
  }
  return out;
}

IdGenerator::IdGenerator(std::uint64_t seed) : state_(seed) {}

std::string IdGenerator::next(std::string_view prefix, Instant now) {
  const auto millis = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count());
  const std::uint64_t hi = splitmix64(state_);
  const std::uint64_t lo = splitmix64(state_);
  return std::string(prefix) + make_ulid(millis, hi, lo);
}

}  // namespace fedgate
