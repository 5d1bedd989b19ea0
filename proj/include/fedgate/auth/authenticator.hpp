#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <variant>
#include <vector>

#include "fedgate/auth/identity_provider.hpp"
#include "fedgate/errors.hpp"

namespace fedgate::auth {

struct AuthConfig {
  bool cache_enabled = true;
  Duration cache_ttl = std::chrono::seconds(600);
};

using AuthOutcome = std::variant<Principal, ApiError>;
using AuthCallback = std::function<void(const AuthOutcome&)>;

using TokenDigest = std::array<std::uint8_t, 32>;
TokenDigest digest_token(const std::string& token);

/// Resource-server side of token validation: introspects bearer tokens,
/// caches principals by token digest, and coalesces concurrent lookups of the
/// same token onto one provider call.
///
/// A cached entry lives for min(cache_ttl, token expiry); at or after the
/// token's expiry it is never served.
class Authenticator {
 public:
  Authenticator(IdentityProvider& provider, std::function<Instant()> clock, AuthConfig config = {});

  void introspect(const std::string& token, AuthCallback done);

  std::size_t cache_size() const;
  std::uint64_t cache_hits() const { return hits_; }
  const AuthConfig& config() const { return config_; }

 private:
  struct Entry {
    Principal principal;
    Instant cached_until{};
  };

  void finish(const TokenDigest& key, const Introspection& result);

  IdentityProvider& provider_;
  std::function<Instant()> clock_;
  AuthConfig config_;

  mutable std::mutex mu_;
  std::map<TokenDigest, Entry> cache_;
  std::map<TokenDigest, std::vector<AuthCallback>> inflight_;
  std::uint64_t hits_ = 0;
};

/// Extracts the token from an `Authorization: Bearer <token>` header value.
/// Returns an empty string when the scheme is missing or wrong.
std::string bearer_token(const std::string& authorization_header);

}  // namespace fedgate::auth
