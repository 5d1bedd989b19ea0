#include "fedgate/auth/authenticator.hpp"

#include <openssl/evp.h>

#include <algorithm>

namespace fedgate::auth {

TokenDigest digest_token(const std::string& token) {
  TokenDigest out{};
  unsigned int len = 0;
  EVP_Digest(token.data(), token.size(), out.data(), &len, EVP_sha256(), nullptr);
  return out;
}

std::string bearer_token(const std::string& header) {
  constexpr std::string_view kScheme = "Bearer ";
  if (header.size() <= kScheme.size()) return {};
  for (std::size_t i = 0; i < kScheme.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(header[i])) !=
        std::tolower(static_cast<unsigned char>(kScheme[i]))) {
      return {};
    }
  }
  auto token = header.substr(kScheme.size());
  auto first = token.find_first_not_of(' ');
  auto last = token.find_last_not_of(' ');
  if (first == std::string::npos) return {};
  return token.substr(first, last - first + 1);
}

Authenticator::Authenticator(IdentityProvider& provider, std::function<Instant()> clock, AuthConfig config)
    : provider_(provider), clock_(std::move(clock)), config_(config) {}

std::size_t Authenticator::cache_size() const {
  std::lock_guard lock(mu_);
  return cache_.size();
}

void Authenticator::introspect(const std::string& token, AuthCallback done) {
  if (token.empty()) {
    done(ApiError{ErrorCode::kInvalidToken, "missing bearer token"});
    return;
  }
  const TokenDigest key = digest_token(token);
  const Instant now = clock_();
  {
    std::unique_lock lock(mu_);
    if (config_.cache_enabled) {
      if (auto it = cache_.find(key); it != cache_.end()) {
        if (now < it->second.cached_until) {
          ++hits_;
          Principal p = it->second.principal;
          lock.unlock();
          done(p);
          return;
        }
        const bool expired = now >= it->second.principal.expires_at;
        cache_.erase(it);
        if (expired) {
          lock.unlock();
          done(ApiError{ErrorCode::kExpiredToken, "token has expired"});
          return;
        }
      }
    }
    auto [slot, first] = inflight_.try_emplace(key);
    slot->second.push_back(std::move(done));
    if (!first) return;  // coalesced onto the in-flight call
  }
  provider_.introspect(token, [this, key](const Introspection& result) { finish(key, result); });
}

void Authenticator::finish(const TokenDigest& key, const Introspection& result) {
  const Instant now = clock_();
  AuthOutcome outcome;
  if (result.has_expiry && now >= result.expires_at) {
    outcome = ApiError{ErrorCode::kExpiredToken, "token has expired"};
  } else if (!result.active) {
    outcome = ApiError{ErrorCode::kInvalidToken, "token is not active"};
  } else {
    Principal p{result.subject, result.groups, now,
                result.has_expiry ? result.expires_at : now + config_.cache_ttl};
    outcome = p;
  }

  std::vector<AuthCallback> waiters;
  {
    std::lock_guard lock(mu_);
    if (config_.cache_enabled) {
      if (const auto* p = std::get_if<Principal>(&outcome)) {
        cache_[key] = Entry{*p, std::min(now + config_.cache_ttl, p->expires_at)};
      }
    }
    if (auto it = inflight_.find(key); it != inflight_.end()) {
      waiters = std::move(it->second);
      inflight_.erase(it);
    }
  }
  for (auto& w : waiters) w(outcome);
}

}  // namespace fedgate::auth
