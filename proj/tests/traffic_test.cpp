#include "tgsim/traffic.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace tgsim;

namespace {

TrafficConfig base_config() {
  TrafficConfig c;
  return c;
}

GanConfig tiny_gan() {
  GanConfig g;
  g.embed_dim = 8;
  g.hidden_dim = 8;
  g.pool_dim = 8;
  g.z_dim = 4;
  return g;
}

std::string dump(const Scenario& s) {
  std::ostringstream out;
  write_scenario_rows(out, s);
  return out.str();
}

}  // namespace

TEST(Traffic, ParseMode) {
  EXPECT_EQ(parse_traffic_mode("idm"), TrafficMode::idm);
  EXPECT_EQ(parse_traffic_mode("traffic_gan"), TrafficMode::gan);
  EXPECT_THROW(parse_traffic_mode("mobil"), std::invalid_argument);
}

TEST(Traffic, GanModeNeedsGenerator) {
  EXPECT_THROW(TrafficWorld(base_config(), TrafficMode::gan), std::invalid_argument);
}

TEST(Traffic, IdmModeIsDeterministic) {
  TrafficWorld a(base_config(), TrafficMode::idm), b(base_config(), TrafficMode::idm);
  a.reset(5);
  b.reset(5);
  for (int k = 0; k < 400; ++k) {
    a.tick();
    b.tick();
  }
  EXPECT_EQ(dump(a.scenario()), dump(b.scenario()));
}

TEST(Traffic, EgoLaneChangeRequests) {
  TrafficWorld w(base_config(), TrafficMode::idm);
  w.reset(3);
  const std::size_t e = w.ego_index();
  // Clear the road around the ego so the change is unobstructed.
  for (auto& v : w.mutable_scenario().vehicles) {
    if (v.role != Role::ego) v.x += 2000.0 + 50.0 * v.id;
  }
  const int lane = w.scenario().vehicles[e].lane_index;
  const int dir = lane + 1 < w.scenario().road.lane_count ? 1 : -1;
  EXPECT_EQ(w.request_lane_change(e, dir == 1 ? -lane - 1 : w.scenario().road.lane_count - lane),
            LaneChangeRequest::no_lane);
  ASSERT_EQ(w.request_lane_change(e, dir), LaneChangeRequest::started);
  EXPECT_EQ(w.request_lane_change(e, dir), LaneChangeRequest::busy);
  // Duration 4 s at 0.1 s ticks.
  for (int k = 0; k < 39; ++k) w.tick();
  EXPECT_TRUE(w.ego_changing_lanes());
  w.tick();
  EXPECT_FALSE(w.ego_changing_lanes());
  for (int k = 0; k < 30; ++k) w.tick();
  const VehicleState& ego = w.scenario().vehicles[e];
  EXPECT_EQ(ego.lane_index, lane + dir);
  EXPECT_NEAR(ego.y, w.scenario().road.lane_center(lane + dir), 0.3);
}

TEST(Traffic, ManeuverReferenceFollowsProfile) {
  RoadConfig road;
  LaneChangeManeuver m{true, 0, 1, 0.0, 4.0};
  EXPECT_DOUBLE_EQ(m.reference_y(road), 2.0);
  m.elapsed = 2.0;
  EXPECT_DOUBLE_EQ(m.reference_y(road), 4.0);
  m.elapsed = 4.0;
  EXPECT_DOUBLE_EQ(m.reference_y(road), 6.0);
}

TEST(Traffic, RuleTrafficStaysOnRoadWithoutHardCrashes) {
  TrafficConfig cfg = base_config();
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    TrafficWorld w(cfg, TrafficMode::idm);
    w.reset(seed);
    for (int k = 0; k < 1500; ++k) {
      for (const auto& ev : w.tick()) {
        ASSERT_NE(ev.kind, CrashKind::hard) << "seed " << seed << " tick " << k;
      }
    }
    for (const auto& v : w.scenario().vehicles) {
      EXPECT_TRUE(w.scenario().road.on_road(v.y, 0.5 * v.width)) << v.id;
      EXPECT_GT(v.speed, 0.0);
    }
  }
}

TEST(Traffic, GenerativeTrafficRespectsBoundsAndLaneBands) {
  nn::Rng rng(1);
  Generator gen(tiny_gan(), rng);
  TrafficConfig cfg = base_config();
  cfg.sr_lc = 0.0;
  TrafficWorld w(cfg, TrafficMode::gan, &gen);
  w.reset(11);
  const int warmup = tiny_gan().o_l - 1;
  for (int k = 0; k < 200; ++k) {
    w.tick();
    for (const auto& v : w.scenario().vehicles) {
      ASSERT_TRUE(std::isfinite(v.x) && std::isfinite(v.y));
      if (v.role == Role::ego || k < warmup) continue;
      ASSERT_GE(v.accel, cfg.gan_accel_min - 1e-12);
      ASSERT_LE(v.accel, cfg.gan_accel_max + 1e-12);
      // Lateral target is held inside the road; allow a small tracking overshoot.
      ASSERT_TRUE(w.scenario().road.on_road(v.y, 0.5 * v.width - 0.1)) << "tick " << k << " id " << v.id;
    }
  }
}

TEST(Traffic, GenerativeTrafficIsDeterministic) {
  nn::Rng rng(1);
  Generator gen(tiny_gan(), rng);
  TrafficWorld a(base_config(), TrafficMode::gan, &gen), b(base_config(), TrafficMode::gan, &gen);
  a.reset(2);
  b.reset(2);
  for (int k = 0; k < 100; ++k) {
    a.tick();
    b.tick();
  }
  EXPECT_EQ(dump(a.scenario()), dump(b.scenario()));
}

TEST(Traffic, InjectedLaneChangesHappenInGenerativeMode) {
  nn::Rng rng(1);
  Generator gen(tiny_gan(), rng);
  TrafficConfig cfg = base_config();
  cfg.t_m_override = 50;
  TrafficWorld w(cfg, TrafficMode::gan, &gen);
  w.reset(4);
  int started = 0;
  std::vector<int> lanes;
  for (const auto& v : w.scenario().vehicles) lanes.push_back(v.lane_index);
  for (int k = 0; k < 300; ++k) {
    w.tick();
    for (std::size_t i = 0; i < lanes.size(); ++i) {
      if (w.scenario().vehicles[i].lane_index != lanes[i]) ++started;
      lanes[i] = w.scenario().vehicles[i].lane_index;
    }
  }
  EXPECT_GT(started, 5);
}

TEST(Traffic, SyntheticTrajectoriesRoundTrip) {
  TrafficConfig cfg = base_config();
  const auto records = generate_synthetic_trajectories(cfg, 2, 50, 9);
  EXPECT_EQ(records.size(), 2u * 51u * static_cast<std::size_t>(cfg.scenario.m));
  std::stringstream buf;
  write_native(buf, records);
  const auto parsed = parse_trajectories(buf, TrajectoryFormat::native);
  ASSERT_EQ(parsed.size(), records.size());
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    EXPECT_EQ(parsed[i].vehicle_id, records[i].vehicle_id);
    EXPECT_EQ(parsed[i].x, records[i].x);
  }
  const auto seqs = resample(parsed, 0.1);
  EXPECT_EQ(seqs.size(), 2u * static_cast<std::size_t>(cfg.scenario.m));
}
