#include <gtest/gtest.h>

#include <random>

#include "fedgate/errors.hpp"
#include "fedgate/fabric/fabric.hpp"
#include "helpers.hpp"

using namespace fedgate;
using namespace fedgate::fabric;
using fedgate::testing::make_endpoint;
using fedgate::testing::make_model;

namespace {

constexpr std::uint64_t k40GB = 40ULL * 1000 * 1000 * 1000;

// Independent first-fit placement: per-node occupancy bitmaps.
struct PlacementOracle {
  int gpn;
  std::vector<std::vector<std::int64_t>> owner;  // node -> gpu -> owner or -1

  PlacementOracle(int nodes, int gpus_per_node)
      : gpn(gpus_per_node), owner(static_cast<std::size_t>(nodes), std::vector<std::int64_t>(gpus_per_node, -1)) {}

  std::optional<std::vector<GpuSlot>> allocate(int g, std::int64_t who) {
    std::vector<GpuSlot> out;
    if (g <= gpn) {
      for (int n = 0; n < static_cast<int>(owner.size()); ++n) {
        int free = 0;
        for (auto o : owner[n]) free += o < 0 ? 1 : 0;
        if (free < g) continue;
        for (int i = 0; i < gpn && static_cast<int>(out.size()) < g; ++i) {
          if (owner[n][i] < 0) {
            owner[n][i] = who;
            out.push_back({n, i});
          }
        }
        return out;
      }
      return std::nullopt;
    }
    const int need = (g + gpn - 1) / gpn;
    std::vector<int> nodes;
    for (int n = 0; n < static_cast<int>(owner.size()) && static_cast<int>(nodes.size()) < need; ++n) {
      if (std::all_of(owner[n].begin(), owner[n].end(), [](auto o) { return o < 0; })) nodes.push_back(n);
    }
    if (static_cast<int>(nodes.size()) < need) return std::nullopt;
    for (int n : nodes) {
      for (int i = 0; i < gpn; ++i) {
        owner[n][i] = who;
        out.push_back({n, i});
      }
    }
    return out;
  }

  void release(std::int64_t who) {
    for (auto& node : owner) {
      for (auto& o : node) {
        if (o == who) o = -1;
      }
    }
  }
};

struct FabricRig {
  EventLoop loop;
  router::Registry reg;
  std::unique_ptr<Fabric> fab;

  explicit FabricRig(int nodes = 24, int max_instances = 1, int parallel = 16, double params = 8, int gpus = 1,
                     FabricConfig cfg = {}) {
    reg.add_endpoint(make_endpoint("ep", "c", max_instances, parallel));
    reg.register_model(make_model("m", params, gpus, 1000), {"ep"});
    fab = std::make_unique<Fabric>(loop, reg, cfg);
    fab->add_cluster(ClusterConfig{"c", nodes, 8, k40GB});
  }

  TaskPtr task(int tokens = 20, std::string function = "infer_v1") {
    auto t = std::make_shared<InferenceTask>();
    t->id = "t" + std::to_string(++n);
    t->model = "m";
    t->function = std::move(function);
    t->payload.max_tokens = tokens;
    t->payload.target_tokens = tokens;
    t->payload.messages = {{"user", "hi"}};
    t->arrived_at = loop.now();
    t->on_done = [this](const TaskOutcome& o) {
      ++resolutions;
      if (std::holds_alternative<ApiError>(o)) last_error = std::get<ApiError>(o);
    };
    return t;
  }

  void run_until_running(InstanceId id) {
    loop.run_while([&] { return fab->instance(id)->state != InstanceState::kRunning && fab->instance(id)->live(); });
  }

  int n = 0;
  int resolutions = 0;
  std::optional<ApiError> last_error;
};

}  // namespace

TEST(Cluster, FreshClusterAllFree) {
  Cluster c(ClusterConfig{"c", 24, 8, k40GB});
  EXPECT_EQ(c.free_nodes(), 24);
  EXPECT_EQ(c.free_gpus(), 24 * 8);
}

TEST(Cluster, SixPlusOnePlusOneFillsANode) {
  Cluster c(ClusterConfig{"c", 2, 8, k40GB});
  auto a = c.allocate(6, 1);
  auto b = c.allocate(1, 2);
  auto d = c.allocate(1, 3);
  ASSERT_TRUE(a && b && d);
  for (const auto* s : {&*a, &*b, &*d}) {
    for (const auto& g : *s) EXPECT_EQ(g.node_id, 0);
  }
  EXPECT_EQ(c.nodes()[0].gpu_free.size(), 0U);
  EXPECT_EQ(c.free_nodes(), 1);
  EXPECT_TRUE(c.check_gpu_partition());
}

TEST(Cluster, SixteenGpusTakeTwoWholeNodes) {
  Cluster c(ClusterConfig{"c", 4, 8, k40GB});
  c.allocate(1, 9);
  auto s = c.allocate(16, 1);
  ASSERT_TRUE(s);
  std::set<int> nodes;
  for (const auto& g : *s) nodes.insert(g.node_id);
  EXPECT_EQ(nodes, (std::set<int>{1, 2}));
  EXPECT_EQ(c.free_nodes(), 1);
}

TEST(Cluster, UnplaceableLeavesStateUntouched) {
  Cluster c(ClusterConfig{"c", 1, 8, k40GB});
  c.allocate(5, 1);
  EXPECT_FALSE(c.allocate(4, 2));
  EXPECT_EQ(c.free_gpus(), 3);
  EXPECT_FALSE(c.could_ever_fit(9));
}

TEST(Cluster, RandomStreamsMatchFirstFitOracle) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    Cluster c(ClusterConfig{"c", 6, 8, k40GB});
    PlacementOracle oracle(6, 8);
    std::map<std::int64_t, std::vector<GpuSlot>> live;
    std::int64_t next = 1;
    for (int step = 0; step < 200; ++step) {
      if (!live.empty() && rng() % 3 == 0) {
        auto it = std::next(live.begin(), static_cast<long>(rng() % live.size()));
        c.release(it->second, it->first);
        oracle.release(it->first);
        live.erase(it);
        continue;
      }
      const int g = static_cast<int>(1 + rng() % (rng() % 4 == 0 ? 24 : 8));
      const auto got = c.allocate(g, next);
      const auto want = oracle.allocate(g, next);
      ASSERT_EQ(got.has_value(), want.has_value()) << "trial " << trial << " step " << step;
      if (got) {
        auto a = *got;
        auto b = *want;
        auto key = [](const GpuSlot& s) { return std::pair{s.node_id, s.gpu}; };
        std::sort(a.begin(), a.end(), [&](auto& x, auto& y) { return key(x) < key(y); });
        std::sort(b.begin(), b.end(), [&](auto& x, auto& y) { return key(x) < key(y); });
        ASSERT_EQ(a, b);
        live[next] = *got;
      }
      ++next;
      ASSERT_TRUE(c.check_gpu_partition());
    }
  }
}

TEST(Transitions, LegalTable) {
  using S = InstanceState;
  EXPECT_TRUE(legal_transition(S::kQueued, S::kStarting));
  EXPECT_TRUE(legal_transition(S::kStarting, S::kRunning));
  EXPECT_TRUE(legal_transition(S::kRunning, S::kReleased));
  EXPECT_TRUE(legal_transition(S::kQueued, S::kFailed));
  EXPECT_TRUE(legal_transition(S::kStarting, S::kFailed));
  EXPECT_TRUE(legal_transition(S::kRunning, S::kFailed));
  EXPECT_TRUE(legal_transition(S::kFailed, S::kQueued));
  EXPECT_FALSE(legal_transition(S::kQueued, S::kRunning));
  EXPECT_FALSE(legal_transition(S::kReleased, S::kQueued));
  EXPECT_FALSE(legal_transition(S::kRunning, S::kStarting));
  EXPECT_FALSE(legal_transition(S::kReleased, S::kFailed));
}

TEST(Fabric, OneNodeInstanceConsumesOneNode) {
  FabricRig r(24, 1, 16, 70, 8);
  EXPECT_EQ(r.fab->cluster_status("c").free_nodes, 24);
  auto id = r.fab->ensure_instance("m", "ep");
  r.run_until_running(id);
  EXPECT_EQ(r.fab->cluster_status("c").free_nodes, 23);
}

TEST(Fabric, ColdRequestQueuesInstanceWhenClusterFull) {
  FabricRig r(1, 2, 16, 70, 8);
  auto first = r.fab->ensure_instance("m", "ep");
  EXPECT_EQ(r.fab->instance(first)->state, InstanceState::kStarting);
  r.reg.register_model(make_model("other", 8, 1), {"ep"});
  auto second = r.fab->ensure_instance("other", "ep");
  EXPECT_EQ(r.fab->instance(second)->state, InstanceState::kQueued);
}

TEST(Fabric, RepeatedEnsureReturnsSameInstance) {
  FabricRig r(24, 4);
  std::set<InstanceId> ids;
  for (int i = 0; i < 100; ++i) ids.insert(r.fab->ensure_instance("m", "ep"));
  EXPECT_EQ(ids.size(), 1U);
  EXPECT_EQ(r.fab->instances().size(), 1U);
}

TEST(Fabric, SaturationSpawnsSecondInstance) {
  FabricRig r(24, 2, 4);
  auto first = r.fab->ensure_instance("m", "ep");
  r.run_until_running(first);
  for (int i = 0; i < 9; ++i) r.fab->submit("ep", r.task(500));
  int live = 0;
  for (const auto* m : r.fab->instances()) live += m->live() ? 1 : 0;
  EXPECT_EQ(live, 2);
}

TEST(Fabric, AutoscaleRespectsCapAndIdleness) {
  FabricConfig cfg;
  cfg.scale_on_submit = false;
  FabricRig r(24, 4, 2, 8, 1, cfg);
  auto first = r.fab->ensure_instance("m", "ep");
  r.run_until_running(first);
  EXPECT_TRUE(r.fab->autoscale_tick("ep").empty());  // idle, empty queue
  // 1 saturated instance with 5 waiting.
  for (int i = 0; i < 7; ++i) r.fab->submit("ep", r.task(200'000));
  EXPECT_EQ(r.fab->pending("ep", "m"), 5U);
  EXPECT_EQ(r.fab->autoscale_tick("ep").size(), 1U);
  for (int i = 0; i < 30; ++i) r.fab->submit("ep", r.task(200'000));
  // Periodic ticks keep adding instances as each new one fills up.
  r.loop.run_until(r.loop.now() + std::chrono::seconds(300));
  int live = 0;
  for (const auto* m : r.fab->instances()) live += m->live() ? 1 : 0;
  EXPECT_EQ(live, 4);
  for (const auto* m : r.fab->instances()) EXPECT_EQ(m->in_flight, 2);
  EXPECT_GT(r.fab->pending("ep", "m"), 0U);
  EXPECT_TRUE(r.fab->autoscale_tick("ep").empty());  // at the cap
}

TEST(Fabric, IdleBoundaryAndActiveWorkPins) {
  FabricRig r;
  auto id = r.fab->ensure_instance("m", "ep");
  r.run_until_running(id);
  const Instant t0 = r.fab->instance(id)->last_active_at;
  EXPECT_TRUE(r.fab->idle_reaper_tick(t0 + std::chrono::seconds(7199)).empty());
  // Busy at the deadline: untouched.
  r.fab->submit("ep", r.task(1'000'000));
  EXPECT_TRUE(r.fab->idle_reaper_tick(t0 + std::chrono::seconds(7200)).empty());
  EXPECT_EQ(r.fab->instance(id)->state, InstanceState::kRunning);
}

TEST(Fabric, IdleReleaseReturnsNodes) {
  FabricRig r(24, 1, 16, 70, 8);
  auto id = r.fab->ensure_instance("m", "ep");
  r.run_until_running(id);
  const Instant t0 = r.fab->instance(id)->last_active_at;
  r.loop.run_until(t0 + std::chrono::seconds(7200));
  EXPECT_EQ(r.fab->instance(id)->state, InstanceState::kReleased);
  EXPECT_EQ(r.fab->cluster_status("c").free_nodes, 24);
}

TEST(Fabric, InFlightFailureRetriedOnceAndResolvedOnce) {
  FabricRig r;
  auto id = r.fab->ensure_instance("m", "ep");
  r.run_until_running(id);
  auto t = r.task(100);
  r.fab->submit("ep", t);
  r.loop.run_until(r.loop.now() + std::chrono::milliseconds(500));
  ASSERT_FALSE(t->resolved());
  const auto before = InferenceTask::double_resolutions();
  r.fab->fail_instance(id, "node crash");
  EXPECT_EQ(r.fab->instance(id)->state, InstanceState::kFailed);
  r.loop.run_while([&] { return !t->resolved(); });
  EXPECT_EQ(r.resolutions, 1);
  EXPECT_FALSE(r.last_error.has_value());
  EXPECT_EQ(t->attempts, 2);
  EXPECT_EQ(r.fab->instance(id)->state, InstanceState::kRunning);
  EXPECT_EQ(r.fab->instance(id)->restarts, 1);
  EXPECT_EQ(InferenceTask::double_resolutions(), before);
  EXPECT_EQ(r.fab->illegal_transitions(), 0U);
}

TEST(Fabric, ThreeFailuresExhaustRetries) {
  FabricRig r;
  auto id = r.fab->ensure_instance("m", "ep");
  auto t = r.task(100);
  r.fab->submit("ep", t);
  for (int round = 0; round < 3; ++round) {
    r.loop.run_while([&] { return !(r.fab->instance(id)->state == InstanceState::kRunning && t->started_at); });
    r.fab->fail_instance(id, "crash " + std::to_string(round));
  }
  r.loop.run_while([&] { return !t->resolved(); });
  ASSERT_TRUE(r.last_error.has_value());
  EXPECT_EQ(r.last_error->code, ErrorCode::kTaskFailed);
  EXPECT_EQ(r.last_error->status(), 502);
  EXPECT_EQ(r.resolutions, 1);
}

TEST(Fabric, UnregisteredFunctionRejected) {
  FabricRig r;
  auto id = r.fab->ensure_instance("m", "ep");
  r.run_until_running(id);
  auto t = r.task(5, "rm_rf_v1");
  r.fab->execute(id, t);
  ASSERT_TRUE(r.last_error.has_value());
  EXPECT_EQ(r.last_error->code, ErrorCode::kUnregisteredFunction);
}

TEST(Fabric, ExecuteNeverExceedsParallelCap) {
  FabricRig r(24, 1, 16);
  auto id = r.fab->ensure_instance("m", "ep");
  r.run_until_running(id);
  std::vector<TaskPtr> tasks;
  for (int i = 0; i < 100; ++i) {
    tasks.push_back(r.task(10 + i % 7));
    r.fab->execute(id, tasks.back());
  }
  int peak = 0;
  r.loop.set_after_event_hook([&] { peak = std::max(peak, r.fab->instance(id)->in_flight); });
  r.loop.run_while([&] { return r.resolutions < 100; });
  EXPECT_EQ(r.resolutions, 100);
  EXPECT_LE(r.fab->instance(id)->max_in_flight_seen, 16);
  EXPECT_EQ(r.fab->instance(id)->max_in_flight_seen, 16);
  EXPECT_LE(peak, 16);
}

TEST(Fabric, StoppedFabricRefusesWork) {
  FabricRig r;
  r.fab->set_up(false);
  try {
    r.fab->submit("ep", r.task());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEndpointDown);
    EXPECT_EQ(e.api_error().status(), 503);
  }
}

TEST(Fabric, OversizedWeightsFailWithInsufficientVram) {
  FabricRig r(4, 1, 16, 405, 8);
  auto t = r.task(4);
  r.fab->submit("ep", t);
  r.loop.run_while([&] { return !t->resolved(); });
  ASSERT_TRUE(r.last_error.has_value());
  EXPECT_EQ(r.last_error->code, ErrorCode::kInsufficientVram);
  const auto* m = r.fab->instances().front();
  EXPECT_EQ(m->state, InstanceState::kFailed);
  EXPECT_FALSE(m->restartable);
  EXPECT_EQ(r.fab->cluster_status("c").free_nodes, 4);
}

TEST(Fabric, LoadTimeFromWeights) {
  FabricRig r;
  // 10 s base + 16 GB at 2 GB/s.
  EXPECT_EQ(r.fab->load_time(make_model("x", 8)), std::chrono::seconds(18));
}

TEST(Fabric, PrewarmHonoursCap) {
  FabricRig r(24, 3);
  EXPECT_EQ(r.fab->prewarm("m", "ep", 5).size(), 3U);
  EXPECT_TRUE(r.fab->prewarm("m", "ep", 5).empty());
}

TEST(Fabric, DedicatedCancelBeforeRunReleasesOnArrival) {
  FabricRig r;
  bool ran = false;
  auto id = r.fab->launch_dedicated("m", "ep", {[&](InstanceId) { ran = true; }, {}});
  r.fab->cancel_dedicated(id);
  r.loop.run_while([&] { return r.fab->instance(id)->live(); });
  EXPECT_EQ(r.fab->instance(id)->state, InstanceState::kReleased);
  EXPECT_FALSE(ran);
  EXPECT_EQ(r.fab->cluster_status("c").free_nodes, 24);
  EXPECT_TRUE(r.fab->active_instances().empty());
}

TEST(Fabric, InvariantsHoldThroughLifecycle) {
  FabricRig r(3, 2, 4, 70, 4);
  std::string why;
  int violations = 0;
  r.loop.set_after_event_hook([&] { violations += r.fab->check_invariants(&why) ? 0 : 1; });
  for (int i = 0; i < 30; ++i) r.fab->submit("ep", r.task(50));
  r.loop.run_while([&] { return r.resolutions < 30; });
  EXPECT_EQ(violations, 0) << why;
  EXPECT_EQ(r.fab->illegal_transitions(), 0U);
}
