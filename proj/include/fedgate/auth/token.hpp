#pragma once

#include <set>
#include <string>

#include "fedgate/sim/time.hpp"

namespace fedgate::auth {

using GroupSet = std::set<std::string>;

inline constexpr Duration kDefaultTokenTtl = std::chrono::hours(48);

struct AccessToken {
  std::string raw;
  Instant issued_at{};
  Instant expires_at{};
  std::string subject;
  GroupSet groups;

  bool usable_at(Instant now) const { return now < expires_at; }
};

/// An authenticated identity. `groups` is the membership captured when the
/// token was introspected; it is not refreshed while cached.
struct Principal {
  std::string subject;
  GroupSet groups;
  Instant introspected_at{};
  Instant expires_at{};

  friend bool operator==(const Principal&, const Principal&) = default;
};

/// What an identity provider reports about a token.
struct Introspection {
  bool active = false;
  std::string subject;
  GroupSet groups;
  // Set when the provider knows the token; also reported for expired tokens.
  bool has_expiry = false;
  Instant expires_at{};
};

}  // namespace fedgate::auth
