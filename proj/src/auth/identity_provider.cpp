#include "fedgate/auth/identity_provider.hpp"

#include <httplib.h>

#include <cstdio>
#include <json.hpp>

namespace fedgate::auth {

namespace {

constexpr double kVirtualUnixEpoch = 1.7e9;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

double unix_offset_for(const EventLoop& loop) {
  if (loop.mode() == ClockMode::kVirtual) return kVirtualUnixEpoch;
  const double unix_now =
      std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
  return unix_now - to_seconds(loop.now());
}

MockIdentityProvider::MockIdentityProvider(EventLoop& loop, std::uint64_t seed) : loop_(loop), rng_(seed) {}

AccessToken MockIdentityProvider::mint(const std::string& subject, GroupSet groups, Duration ttl) {
  if (ttl <= Duration::zero()) throw std::invalid_argument("token ttl must be positive");
  std::lock_guard lock(mu_);
  AccessToken token;
  token.raw = "fg_" + hex64(rng_()) + hex64(rng_()) + hex64(++minted_);
  token.issued_at = loop_.now();
  token.expires_at = token.issued_at + ttl;
  token.subject = subject;
  token.groups = std::move(groups);
  tokens_[token.raw] = token;
  return token;
}

Introspection MockIdentityProvider::introspect_now(const std::string& token) {
  ++calls_;
  std::lock_guard lock(mu_);
  Introspection out;
  auto it = tokens_.find(token);
  if (it == tokens_.end()) return out;
  out.has_expiry = true;
  out.expires_at = it->second.expires_at;
  out.subject = it->second.subject;
  out.groups = it->second.groups;
  out.active = it->second.usable_at(loop_.now());
  return out;
}

void MockIdentityProvider::introspect(const std::string& token, IntrospectionCallback done) {
  if (delay_ <= Duration::zero()) {
    done(introspect_now(token));
    return;
  }
  // The provider sees the request when it arrives and answers after the delay.
  loop_.schedule_after(delay_, [this, token, done = std::move(done)] { done(introspect_now(token)); });
}

HttpIdentityProvider::HttpIdentityProvider(EventLoop& loop, std::string base_url, Duration timeout)
    : loop_(loop), base_url_(std::move(base_url)), timeout_(timeout), unix_offset_s_(unix_offset_for(loop)) {}

HttpIdentityProvider::~HttpIdentityProvider() {
  std::lock_guard lock(workers_mu_);
  workers_.clear();  // joins
}

Introspection HttpIdentityProvider::introspect_blocking(const std::string& token) {
  ++calls_;
  Introspection out;
  // base_url may carry a path prefix: http://host:port/prefix
  std::string origin = base_url_;
  std::string prefix;
  if (auto scheme = origin.find("://"); scheme != std::string::npos) {
    if (auto slash = origin.find('/', scheme + 3); slash != std::string::npos) {
      prefix = origin.substr(slash);
      origin.resize(slash);
    }
  }
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  httplib::Client client(origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_).count();
  client.set_connection_timeout(secs);
  client.set_read_timeout(secs);
  httplib::Params form{{"token", token}};
  auto res = client.Post(prefix + "/introspect", form);
  if (!res || res->status != 200) return out;
  auto body = nlohmann::json::parse(res->body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) return out;
  out.active = body.value("active", false);
  out.subject = body.value("sub", std::string{});
  if (body.contains("exp") && body["exp"].is_number()) {
    out.has_expiry = true;
    out.expires_at = at_seconds(body["exp"].get<double>() - unix_offset_s_);
  }
  if (body.contains("groups") && body["groups"].is_array()) {
    for (const auto& g : body["groups"]) {
      if (g.is_string()) out.groups.insert(g.get<std::string>());
    }
  }
  return out;
}

void HttpIdentityProvider::introspect(const std::string& token, IntrospectionCallback done) {
  std::lock_guard lock(workers_mu_);
  std::erase_if(workers_, [](const Worker& w) { return w.finished->load(); });
  auto finished = std::make_shared<std::atomic<bool>>(false);
  std::jthread thread([this, token, finished, done = std::move(done)]() mutable {
    Introspection result = introspect_blocking(token);
    loop_.post([done = std::move(done), result = std::move(result)] { done(result); });
    finished->store(true);
  });
  workers_.push_back(Worker{std::move(thread), std::move(finished)});
}

}  // namespace fedgate::auth
