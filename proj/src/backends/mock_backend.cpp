#include "fedgate/backends/mock_backend.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace fedgate::backends {

namespace {

constexpr std::array<std::string_view, 32> kVocab = {
    "the",    "model",  "node",    "cluster", "result", "energy", "protein", "sample",
    "data",   "signal", "grid",    "field",   "value",  "state",  "flux",    "phase",
    "graph",  "token",  "stream",  "vector",  "layer",  "kernel", "batch",   "queue",
    "matrix", "solver", "gradient", "tensor", "mesh",   "scale",  "orbit",   "decay"};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void BackendProfile::validate() const {
  if (kind == BackendKind::kMock && !(service_rate > 0.0)) {
    throw std::invalid_argument("mock backend service_rate must be positive");
  }
  if (kind == BackendKind::kPassthrough && base_url.empty()) {
    throw std::invalid_argument("passthrough backend requires base_url");
  }
  if (per_request_overhead < Duration::zero()) throw std::invalid_argument("negative per_request_overhead");
}

std::string Generation::text() const {
  std::string out;
  for (const auto& t : tokens) out += t;
  return out;
}

int count_tokens(std::string_view text) {
  int n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

std::string prompt_text(const TaskPayload& payload) {
  std::string text;
  for (const auto& m : payload.messages) {
    text += m.role;
    text += ": ";
    text += m.content;
    text += '\n';
  }
  text += payload.prompt;
  for (const auto& in : payload.inputs) {
    text += in;
    text += '\n';
  }
  return text;
}

Generation generate(const BackendProfile& profile, const TaskPayload& payload, std::uint64_t seed) {
  Generation gen;
  const std::string text = prompt_text(payload);
  gen.prompt_tokens = count_tokens(text);

  const int target = payload.target_tokens.value_or(profile.default_output_tokens);
  const int limit = payload.max_tokens > 0 ? payload.max_tokens : target;
  const int n = std::max(0, std::min(limit, target));
  gen.finish_reason = (target > limit) ? "length" : "stop";

  const std::uint64_t base = mix(fnv1a(text) ^ mix(seed));
  gen.tokens.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto word = kVocab[mix(base + static_cast<std::uint64_t>(i)) % kVocab.size()];
    std::string tok;
    if (i > 0) tok.push_back(' ');
    tok.append(word);
    gen.tokens.push_back(std::move(tok));
  }
  return gen;
}

std::vector<std::vector<float>> embed(const BackendProfile&, std::span<const std::string> inputs, int dim,
                                      std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("embedding dim must be >= 1");
  std::vector<std::vector<float>> out;
  out.reserve(inputs.size());
  for (const auto& input : inputs) {
    const std::uint64_t base = mix(fnv1a(input) ^ mix(seed ^ 0xe5bedULL));
    std::vector<double> v(static_cast<std::size_t>(dim));
    double norm2 = 0.0;
    for (int i = 0; i < dim; ++i) {
      // Uniform in [-1, 1).
      const double u = static_cast<double>(mix(base + static_cast<std::uint64_t>(i)) >> 11) * 0x1.0p-53;
      v[static_cast<std::size_t>(i)] = 2.0 * u - 1.0;
      norm2 += v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
    }
    if (norm2 == 0.0) {
      v[0] = 1.0;
      norm2 = 1.0;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    std::vector<float> f(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) f[i] = static_cast<float>(v[i] * inv);
    out.push_back(std::move(f));
  }
  return out;
}

Duration token_interval(const BackendProfile& profile, int max_parallel) {
  return from_seconds(static_cast<double>(std::max(1, max_parallel)) / profile.service_rate);
}

Duration token_offset(const BackendProfile& profile, int max_parallel, int index) {
  // Computed from the exact rate rather than a rounded interval so long
  // generations do not accumulate rounding error.
  const double per_token = static_cast<double>(std::max(1, max_parallel)) / profile.service_rate;
  return profile.per_request_overhead + from_seconds(per_token * index);
}

Duration service_time(const BackendProfile& profile, int max_parallel, int tokens) {
  return token_offset(profile, max_parallel, tokens);
}

}  // namespace fedgate::backends
