#include <gtest/gtest.h>

#include <httplib.h>

#include "fedgate/bench/bench.hpp"
#include "fedgate/server/http_frontend.hpp"
#include "helpers.hpp"

using namespace fedgate;
using namespace fedgate::testing;
using nlohmann::json;

namespace {

// Wall-clock service with near-instant startup so round trips stay short.
gateway::ServiceConfig wall_config() {
  auto c = small_config(100000);
  c.clock = ClockMode::kWall;
  c.fabric.launch_overhead = std::chrono::milliseconds(5);
  c.fabric.load_base = std::chrono::milliseconds(5);
  c.fabric.load_bandwidth = 1e15;
  c.fabric.tick = std::chrono::milliseconds(50);
  return c;
}

httplib::Headers bearer(const std::string& token) { return {{"Authorization", "Bearer " + token}}; }

class FrontendTest : public ::testing::Test {
 protected:
  explicit FrontendTest(gateway::ServiceConfig cfg = wall_config())
      : gw(std::move(cfg)), front(gw, server::FrontendOptions{"127.0.0.1", 0, 16, true}) {
    front.start();
    client = std::make_unique<httplib::Client>(front.base_url());
    client->set_read_timeout(30, 0);
    user = gw.mint_token("alice@example.org", {}).raw;
    admin = gw.mint_token("admin@example.org", {"admin"}).raw;
  }
  ~FrontendTest() override { front.stop(); }

  gateway::Gateway gw;
  server::HttpFrontend front;
  std::unique_ptr<httplib::Client> client;
  std::string user;
  std::string admin;
};

}  // namespace

TEST_F(FrontendTest, ChatRoundTrip) {
  auto r = client->Post("/v1/chat/completions", bearer(user), chat_body("m", 9).dump(), "application/json");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  auto j = json::parse(r->body);
  EXPECT_EQ(j["object"], "chat.completion");
  EXPECT_EQ(j["usage"]["completion_tokens"], 9);
}

TEST_F(FrontendTest, SseStreamFramesAndDone) {
  std::string raw;
  int status = 0;
  std::string content_type;
  httplib::Request req;
  req.method = "POST";
  req.path = "/v1/chat/completions";
  req.headers = bearer(user);
  req.body = chat_body("m", 12, true).dump();
  req.set_header("Content-Type", "application/json");
  req.response_handler = [&](const httplib::Response& res) {
    status = res.status;
    content_type = res.get_header_value("Content-Type");
    return true;
  };
  req.content_receiver = [&](const char* data, std::size_t n, std::uint64_t, std::uint64_t) {
    raw.append(data, n);
    return true;
  };
  auto r = client->send(req);
  ASSERT_TRUE(r);
  EXPECT_EQ(status, 200);
  EXPECT_EQ(content_type, "text/event-stream");
  std::vector<std::string> frames;
  std::size_t pos = 0;
  while ((pos = raw.find("data: ", pos)) != std::string::npos) {
    const auto end = raw.find("\n\n", pos);
    ASSERT_NE(end, std::string::npos);
    frames.push_back(raw.substr(pos + 6, end - pos - 6));
    pos = end + 2;
  }
  ASSERT_EQ(frames.size(), 13U);
  EXPECT_EQ(frames.back(), "[DONE]");
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) EXPECT_EQ(json::parse(frames[i])["object"], "chat.completion.chunk");
}

TEST_F(FrontendTest, ErrorsCarryStatusAndBody) {
  auto r = client->Post("/v1/chat/completions", chat_body("m", 1).dump(), "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 401);
  EXPECT_EQ(r->get_header_value("WWW-Authenticate"), "Bearer");
  EXPECT_EQ(json::parse(r->body)["error"]["type"], "invalid_token");
  auto missing = client->Get("/nowhere", bearer(user));
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body)["error"]["type"], "not_found");
}

TEST_F(FrontendTest, ConsoleRoutes) {
  ASSERT_EQ(client->Post("/v1/chat/completions", bearer(user), chat_body("m", 3).dump(), "application/json")->status,
            200);
  auto models = client->Get("/v1/models", bearer(user));
  ASSERT_TRUE(models);
  EXPECT_EQ(json::parse(models->body)["data"].size(), 2U);
  auto jobs = client->Get("/jobs?include_stopped=1", bearer(user));
  ASSERT_TRUE(jobs);
  auto jj = json::parse(jobs->body);
  EXPECT_EQ(jj["running"].size(), 1U);
  EXPECT_EQ(jj["stopped"].size(), 1U);
  auto metrics = client->Get("/metrics?window_s=600", bearer(user));
  ASSERT_TRUE(metrics);
  EXPECT_EQ(json::parse(metrics->body)["completed_requests"], 1);
  auto add = client->Post("/admin/models", bearer(admin),
                          json{{"name", "extra"}, {"endpoints", {"ep0"}}}.dump(), "application/json");
  ASSERT_TRUE(add);
  EXPECT_EQ(add->status, 201) << add->body;
  auto denied = client->Post("/admin/models", bearer(user), json{{"name", "x2"}, {"endpoints", {"ep0"}}}.dump(),
                             "application/json");
  EXPECT_EQ(denied->status, 403);
}

TEST_F(FrontendTest, BatchUploadAndOutput) {
  std::string file;
  for (int i = 0; i < 3; ++i) {
    file += json{{"custom_id", "b" + std::to_string(i)},
                 {"body", {{"model", "m"}, {"prompt", "x"}, {"max_tokens", 2}}},
                 {"url", "/v1/completions"}}
                .dump() + "\n";
  }
  auto r = client->Post("/v1/batches", bearer(user), file, "application/jsonl");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  const std::string id = json::parse(r->body)["id"];
  std::string status;
  for (int i = 0; i < 200 && status != "completed"; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    status = json::parse(client->Get("/v1/batches/" + id, bearer(user))->body)["status"];
  }
  ASSERT_EQ(status, "completed");
  auto out = client->Get("/v1/batches/" + id + "/output", bearer(user));
  EXPECT_EQ(std::count(out->body.begin(), out->body.end(), '\n'), 3);
}

TEST_F(FrontendTest, MintRequiresAdmin) {
  const std::string body = json{{"subject", "eve@example.org"}, {"groups", {"lab"}}}.dump();
  auto anon = client->Post("/idp/mint", body, "application/json");
  ASSERT_TRUE(anon);
  EXPECT_EQ(anon->status, 403);
  EXPECT_EQ(client->Post("/idp/mint", bearer(user), body, "application/json")->status, 403);
  auto ok = client->Post("/idp/mint", bearer(admin), body, "application/json");
  ASSERT_EQ(ok->status, 200);
  const std::string tok = json::parse(ok->body)["access_token"];
  auto use = client->Post("/v1/chat/completions", bearer(tok), chat_body("m", 1).dump(), "application/json");
  EXPECT_EQ(use->status, 200);
}

TEST_F(FrontendTest, HttpBenchAgainstLiveServer) {
  for (bool stream : {false, true}) {
    bench::WorkloadSpec s;
    s.model = "m";
    s.n_requests = 40;
    s.rate = 200;
    s.stream = stream;
    s.lengths.fixed = true;
    s.lengths.output_tokens = 6;
    auto r = bench::run_http(s, front.base_url(), user);
    EXPECT_EQ(r.succeeded, 40) << (r.aborted ? r.abort_reason : "");
    EXPECT_EQ(r.output_tokens, 40 * 6);
    EXPECT_GT(r.request_throughput, 0.0);
  }
}

TEST(IdpWire, IntrospectionOverHttp) {
  EventLoop idp_loop(ClockMode::kWall);
  auth::MockIdentityProvider idp(idp_loop);
  server::IdpServer srv(idp);
  srv.start();
  auto tok = idp.mint("frank@example.org", {"lab", "ops"});
  auto short_lived = idp.mint("gina@example.org", {}, std::chrono::milliseconds(1));
  std::this_thread::sleep_for(std::chrono::milliseconds(5));

  EventLoop loop(ClockMode::kWall);
  auth::HttpIdentityProvider remote(loop, srv.base_url());
  auto r = remote.introspect_blocking(tok.raw);
  EXPECT_TRUE(r.active);
  EXPECT_EQ(r.subject, "frank@example.org");
  EXPECT_EQ(r.groups, (auth::GroupSet{"lab", "ops"}));
  EXPECT_FALSE(remote.introspect_blocking("nope").active);
  auto expired = remote.introspect_blocking(short_lived.raw);
  EXPECT_FALSE(expired.active);
  EXPECT_EQ(remote.calls(), 3U);
  srv.stop();
}

TEST(IdpWire, GatewayUsesExternalProvider) {
  EventLoop idp_loop(ClockMode::kWall);
  auth::MockIdentityProvider idp(idp_loop);
  server::IdpServer srv(idp);
  srv.start();
  auto cfg = wall_config();
  cfg.identity_kind = "http";
  cfg.identity_url = srv.base_url();
  gateway::Gateway gw(cfg);
  server::HttpFrontend front(gw, server::FrontendOptions{"127.0.0.1", 0, 8, true});
  front.start();
  httplib::Client c(front.base_url());
  const auto tok = idp.mint("hank@example.org", {});
  auto ok = c.Post("/v1/chat/completions", bearer(tok.raw), chat_body("m", 2).dump(), "application/json");
  ASSERT_TRUE(ok);
  EXPECT_EQ(ok->status, 200) << ok->body;
  auto bad = c.Post("/v1/chat/completions", bearer("forged"), chat_body("m", 2).dump(), "application/json");
  EXPECT_EQ(bad->status, 401);
  EXPECT_THROW(gw.mint_token("x", {}), std::exception);
  front.stop();
  srv.stop();
}
