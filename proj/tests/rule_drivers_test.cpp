#include "tgsim/rule_drivers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace tgsim;

TEST(Idm, EquilibriumAtStandstill) {
  EXPECT_NEAR(idm_acceleration(0.0, 25.0, 2.0, 0.0, {}), 0.0, 1e-12);
}

TEST(Idm, FreeRoadAcceleration) {
  // 0.7 (1 - 0.8^4) minus a far-gap term of 0.7 (34/10000)^2.
  EXPECT_NEAR(idm_acceleration(20.0, 25.0, 10000.0, 0.0, {}), 0.7 * (1 - 0.4096), 1e-3);
}

TEST(Idm, OutputWithinTableBounds) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> v(0, 40), vd(5, 40), gap(0.01, 500), dv(-30, 30);
  for (int k = 0; k < 100000; ++k) {
    const double a = idm_acceleration(v(rng), vd(rng), gap(rng), dv(rng), {});
    ASSERT_GE(a, -20.0);
    ASSERT_LE(a, 0.7);
  }
}

TEST(Idm, NonPositiveGapIsRejected) {
  EXPECT_THROW(idm_acceleration(10, 25, 0.0, 0, {}), std::domain_error);
  EXPECT_THROW(idm_acceleration(10, 25, -1.0, 0, {}), std::domain_error);
}

TEST(Idm, MonotoneInClosingSpeedAndGap) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> v(0, 40), vd(5, 40), gap(0.5, 300), dv(-30, 30), step(0, 5);
  for (int k = 0; k < 100000; ++k) {
    const double s = v(rng), d = vd(rng), g = gap(rng), c = dv(rng), h = step(rng);
    ASSERT_LE(idm_acceleration(s, d, g, c + h, {}), idm_acceleration(s, d, g, c, {}));
    ASSERT_GE(idm_acceleration(s, d, g + h, c, {}), idm_acceleration(s, d, g, c, {}));
  }
}

TEST(Idm, PlatoonSettlesToEquilibrium) {
  // Followers behind a leader cruising at 20 m/s (below their desired 25 m/s).
  const IdmParams p;
  const int n = 5;
  std::vector<double> x(n), v(n, 15.0), a(n);
  for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = 60.0 * i;  // index n-1 leads
  v.back() = 20.0;
  const double len = 4.5, dt = 0.1;
  for (int k = 0; k < 3000; ++k) {
    for (int i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      a[u] = i == n - 1 ? 0.0
                        : idm_acceleration(v[u], 25.0, x[u + 1] - x[u] - len, v[u] - v[u + 1], p);
    }
    for (std::size_t u = 0; u < x.size(); ++u) {
      x[u] += v[u] * dt;
      v[u] = std::max(0.0, v[u] + a[u] * dt);
    }
  }
  for (double ai : a) EXPECT_LT(std::abs(ai), 1e-3);
  // Equilibrium bumper gap s*(v) / sqrt(1 - (v/v_des)^4) with v = 20.
  const double s_e = (2.0 + 20.0 * 1.6) / std::sqrt(1 - std::pow(0.8, 4));
  for (int i = 0; i + 1 < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    EXPECT_NEAR(x[u + 1] - x[u] - len, s_e, 0.01);
  }
}

namespace {

LaneContext lane(double lead_gap, double lead_speed, double follow_gap, double follow_speed) {
  LaneContext c;
  c.exists = true;
  c.leader = {true, lead_gap, lead_speed, 25.0};
  c.follower = {true, follow_gap, follow_speed, 25.0};
  return c;
}

MobilContext random_context(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> speed(5, 30), gap(-2, 120), u(0, 1);
  auto neighbor = [&] {
    Neighbor n;
    n.present = u(rng) < 0.7;
    n.gap = gap(rng);
    n.speed = speed(rng);
    n.desired_speed = 18 + 8 * u(rng);
    return n;
  };
  auto make_lane = [&](bool exists) {
    LaneContext c;
    c.exists = exists;
    if (exists) {
      c.leader = neighbor();
      c.follower = neighbor();
    }
    return c;
  };
  MobilContext ctx;
  ctx.speed = speed(rng);
  ctx.desired_speed = 18 + 8 * u(rng);
  ctx.current = make_lane(true);
  if (ctx.current.leader.gap <= 0) ctx.current.leader.gap = 1.0;
  if (ctx.current.follower.gap <= 0) ctx.current.follower.gap = 1.0;
  ctx.left = make_lane(u(rng) < 0.8);
  ctx.right = make_lane(u(rng) < 0.8);
  return ctx;
}

LaneDecision mirror(LaneDecision d) {
  return d == LaneDecision::left ? LaneDecision::right
                                 : (d == LaneDecision::right ? LaneDecision::left : d);
}

}  // namespace

TEST(Mobil, SymmetricTrafficStays) {
  MobilContext ctx;
  ctx.speed = 20;
  ctx.current = ctx.left = ctx.right = lane(40, 20, 40, 20);
  EXPECT_EQ(mobil_decide(ctx, {}, {}), LaneDecision::stay);
  // Leaders only: every acceleration difference is exactly zero.
  ctx.current.follower.present = ctx.left.follower.present = ctx.right.follower.present = false;
  EXPECT_EQ(*mobil_incentive(ctx, ctx.left, {}, {}), 0.0);
  EXPECT_EQ(mobil_decide(ctx, {}, {}), LaneDecision::stay);
}

TEST(Mobil, ChangesTowardEmptyLaneBehindSlowLeader) {
  const IdmParams idm;
  MobilContext ctx;
  ctx.speed = 20;
  ctx.desired_speed = 25;
  ctx.current.exists = true;
  ctx.current.leader = {true, 40.0, 17.0, 20.0};
  ctx.left.exists = true;
  // Hand evaluation: s* = 2 + 32 + 20*3/(2 sqrt(1.19)) = 61.49; own_before = 0.7(1-0.4096-2.363).
  const double s_star = 2 + 20 * 1.6 + 20 * 3 / (2 * std::sqrt(0.7 * 1.7));
  const double before = 0.7 * (1 - std::pow(0.8, 4) - std::pow(s_star / 40, 2));
  const double after = 0.7 * (1 - std::pow(0.8, 4) - std::pow(34.0 / 10000, 2));
  ASSERT_GT(after - before, 0.5);
  EXPECT_NEAR(*mobil_incentive(ctx, ctx.left, idm, {}), after - before, 1e-12);
  EXPECT_EQ(mobil_decide(ctx, idm, {}), LaneDecision::left);
  EXPECT_EQ(mobil_decide(mirrored(ctx), idm, {}), LaneDecision::right);
}

TEST(Mobil, UnsafeNewFollowerRejectsDespiteGain) {
  MobilContext ctx;
  ctx.speed = 20;
  ctx.current.exists = true;
  ctx.current.leader = {true, 10.0, 5.0, 25.0};  // big incentive to leave
  ctx.left.exists = true;
  ctx.left.follower = {true, 8.0, 24.0, 25.0};
  const double imposed = idm_acceleration(24.0, 25.0, 8.0, 4.0, {});
  ASSERT_LT(imposed, -4.0);
  EXPECT_FALSE(mobil_incentive(ctx, ctx.left, {}, {}).has_value());
  EXPECT_EQ(mobil_decide(ctx, {}, {}), LaneDecision::stay);
}

TEST(Mobil, MissingLaneIsNeverChosen) {
  MobilContext ctx;
  ctx.speed = 20;
  ctx.current.exists = true;
  ctx.current.leader = {true, 5.0, 0.0, 25.0};
  EXPECT_EQ(mobil_decide(ctx, {}, {}), LaneDecision::stay);
}

TEST(Mobil, MirrorSymmetryOverRandomContexts) {
  std::mt19937_64 rng(3);
  int violations = 0, ties = 0, changes = 0;
  for (int k = 0; k < 1000; ++k) {
    const MobilContext ctx = random_context(rng);
    const LaneDecision d = mobil_decide(ctx, {}, {});
    const LaneDecision m = mobil_decide(mirrored(ctx), {}, {});
    if (d != LaneDecision::stay) ++changes;
    if (m == mirror(d)) continue;
    const auto l = mobil_incentive(ctx, ctx.left, {}, {});
    const auto r = mobil_incentive(ctx, ctx.right, {}, {});
    if (l && r && *l == *r && d == LaneDecision::left) {
      ++ties;
    } else {
      ++violations;
    }
  }
  EXPECT_EQ(violations, 0);
  EXPECT_GT(changes, 50);  // the sample actually exercises lane changes
  (void)ties;
}

TEST(Mobil, SafetyCriterionHoldsOverRandomContexts) {
  std::mt19937_64 rng(4);
  const IdmParams idm;
  int unsafe_seen = 0;
  for (int k = 0; k < 5000; ++k) {
    const MobilContext ctx = random_context(rng);
    const LaneDecision d = mobil_decide(ctx, idm, {});
    for (const auto& [dir, target] : {std::pair{LaneDecision::left, ctx.left},
                                      std::pair{LaneDecision::right, ctx.right}}) {
      if (!target.exists || !target.follower.present || target.follower.gap <= 0) continue;
      const Neighbor& f = target.follower;
      const double imposed = idm_acceleration(f.speed, f.desired_speed, f.gap, f.speed - ctx.speed, idm);
      if (imposed < -4.0) {
        ++unsafe_seen;
        ASSERT_NE(d, dir);
      }
    }
  }
  EXPECT_GT(unsafe_seen, 100);
}

TEST(Mobil, LaneNeighborsFindsNearest) {
  const RoadConfig road{3, 4.0, 1000};
  std::vector<VehicleState> v(4);
  for (int i = 0; i < 4; ++i) {
    v[static_cast<std::size_t>(i)].id = i;
    v[static_cast<std::size_t>(i)].lane_index = 1;
    v[static_cast<std::size_t>(i)].speed = 10.0 + i;
  }
  v[0].x = 0;
  v[1].x = 50;  // subject
  v[2].x = 80;
  v[3].x = 120;
  const LaneContext c = lane_neighbors(v, 1, 1, road);
  ASSERT_TRUE(c.leader.present);
  EXPECT_DOUBLE_EQ(c.leader.gap, 30 - 4.5);
  EXPECT_DOUBLE_EQ(c.leader.speed, 12.0);
  ASSERT_TRUE(c.follower.present);
  EXPECT_DOUBLE_EQ(c.follower.gap, 50 - 4.5);
  EXPECT_FALSE(lane_neighbors(v, 1, 3, road).exists);
  EXPECT_FALSE(lane_neighbors(v, 1, 0, road).leader.present);
}
