#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedgate/backends/profile.hpp"
#include "fedgate/task.hpp"

namespace fedgate::backends {

struct Generation {
  std::vector<std::string> tokens;  // pseudo-words; streamed one per delta
  int prompt_tokens = 0;
  std::string finish_reason = "stop";

  int completion_tokens() const { return static_cast<int>(tokens.size()); }
  /// Concatenation of the stream deltas.
  std::string text() const;
};

/// Whitespace-separated word count; the mock's notion of a token.
int count_tokens(std::string_view text);

/// Text the mock hashes for a payload (messages, prompt or inputs).
std::string prompt_text(const TaskPayload& payload);

/// Deterministic text generation. Emits exactly min(max_tokens, target)
/// tokens where target is the payload's target length or the profile default.
Generation generate(const BackendProfile& profile, const TaskPayload& payload, std::uint64_t seed);

/// Unit-norm pseudo-random vectors, one per input, determined by (seed, input).
std::vector<std::vector<float>> embed(const BackendProfile& profile, std::span<const std::string> inputs,
                                      int dim, std::uint64_t seed);

/// Per-slot inter-token interval. With `max_parallel` busy slots the instance
/// emits `service_rate` tokens/s in aggregate.
Duration token_interval(const BackendProfile& profile, int max_parallel);

/// Time from execution start until the `index`-th token (1-based) is out.
Duration token_offset(const BackendProfile& profile, int max_parallel, int index);

/// Total service time for a request producing `tokens` output tokens.
Duration service_time(const BackendProfile& profile, int max_parallel, int tokens);

}  // namespace fedgate::backends
