#include <gtest/gtest.h>

#include "fedgate/gateway/config.hpp"

using namespace fedgate;
using namespace fedgate::gateway;
using nlohmann::json;

TEST(Config, SampleFileLoads) {
  auto c = load_config(std::string(FEDGATE_SOURCE_DIR) + "/configs/sophia.json");
  EXPECT_EQ(c.clock, ClockMode::kWall);
  ASSERT_EQ(c.clusters.size(), 1U);
  EXPECT_EQ(c.clusters[0].nodes, 24);
  EXPECT_EQ(c.clusters[0].vram_per_gpu, 40ULL * 1000 * 1000 * 1000);
  ASSERT_EQ(c.models.size(), 3U);
  EXPECT_EQ(c.models[0].spec.gpus_required, 4);
  EXPECT_EQ(c.models[0].spec.backend.service_rate, 1432);
  EXPECT_EQ(c.models[2].spec.kind, router::ModelKind::kEmbedding);
  EXPECT_EQ(c.fabric.idle_timeout, std::chrono::seconds(7200));
  EXPECT_EQ(c.rate_limit.refill_per_s, 50);
}

TEST(Config, DefaultsWhenKeysMissing) {
  auto c = parse_config(json::object());
  EXPECT_EQ(c.clock, ClockMode::kVirtual);
  EXPECT_TRUE(c.rate_limit.enabled);
  EXPECT_EQ(c.fabric.retry_cap, 2);
  EXPECT_TRUE(c.models.empty());
}

TEST(Config, RejectsBadValues) {
  EXPECT_THROW(parse_config(json{{"clock", "sundial"}}), std::invalid_argument);
  EXPECT_THROW(parse_config(json{{"auth", {{"provider", {{"kind", "ldap"}}}}}}), std::invalid_argument);
  EXPECT_THROW(parse_config(json{{"clusters", json::array({json{{"nodes", 2}}})}}), std::invalid_argument);
  EXPECT_THROW(load_config("/nonexistent/fedgate.json"), std::exception);
}

TEST(Config, ModelDeclaration) {
  auto d = parse_model(json{{"name", "x"},
                            {"params_billions", 13},
                            {"gpus_required", 2},
                            {"endpoints", {"a", "b"}},
                            {"required_groups", {"g"}},
                            {"backend", {{"kind", "passthrough"}, {"base_url", "http://h:1"}}}});
  EXPECT_EQ(d.spec.gpus_required, 2);
  EXPECT_EQ(d.endpoints, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(d.required_groups, (auth::GroupSet{"g"}));
  EXPECT_EQ(d.spec.backend.kind, backends::BackendKind::kPassthrough);
  EXPECT_EQ(d.spec.backend.base_url, "http://h:1");
}

TEST(Config, BuiltInDefaultIsServable) {
  auto c = default_config();
  EXPECT_FALSE(c.models.empty());
  for (const auto& m : c.models) {
    ASSERT_FALSE(m.endpoints.empty());
    EXPECT_EQ(m.endpoints[0], c.endpoints[0].endpoint_id);
  }
}
