#pragma once

#include "tgsim/vehicle.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>

namespace tgsim {

/// Intelligent Driver Model parameters.
struct IdmParams {
  double d_0 = 2.0;             ///< minimum gap [m]
  double T = 1.6;               ///< safe time headway [s]
  double b = 1.7;               ///< desired deceleration [m/s^2]
  double d_max_gap = 10000.0;   ///< gap assumed when the lane ahead is empty [m]
  double a_min = -20.0;         ///< [m/s^2]
  double a_max = 0.7;           ///< [m/s^2]
  double delta_exp = 4.0;

  void validate() const {
    if (!(d_0 > 0 && T > 0 && b > 0 && a_max > 0 && d_max_gap > 0)) {
      throw std::invalid_argument("idm: d_0, T, b, a_max and d_max_gap must be > 0");
    }
    if (!(a_min < 0)) throw std::invalid_argument("idm: a_min must be < 0");
  }
};

/// Generalised MOBIL with separate politeness weights for the follower in
/// the target (side) lane and the follower left behind in the current lane.
struct MobilParams {
  double a_th = 0.1;    ///< changing threshold [m/s^2]
  double q_rear = 0.5;  ///< weight on the follower left behind in the current lane
  double p_side = 1.0;  ///< weight on the prospective follower in the target lane
  double b_safe = 4.0;  ///< maximum deceleration imposed on the new follower [m/s^2]

  void validate() const {
    if (!(a_th > 0)) throw std::invalid_argument("mobil: a_th must be > 0");
    if (q_rear < 0 || p_side < 0) throw std::invalid_argument("mobil: politeness must be >= 0");
    if (!(b_safe > 0)) throw std::invalid_argument("mobil: b_safe must be > 0");
  }
};

/// a = a_max [1 - (v/v_des)^delta - (s*/gap)^2],
/// s* = d_0 + max(0, v T + v closing / (2 sqrt(a_max b))), clamped to [a_min, a_max].
/// `closing_speed` is own speed minus leader speed.
inline double idm_acceleration(double v, double v_des, double gap, double closing_speed,
                               const IdmParams& p) {
  if (!(gap > 0)) throw std::domain_error("idm_acceleration: gap must be > 0 (resolve crashes first)");
  if (!(v_des > 0)) throw std::invalid_argument("idm_acceleration: v_des must be > 0");
  const double dynamic = v * p.T + v * closing_speed / (2.0 * std::sqrt(p.a_max * p.b));
  const double s_star = p.d_0 + std::max(0.0, dynamic);
  const double ratio = s_star / gap;
  const double a = p.a_max * (1.0 - std::pow(v / v_des, p.delta_exp) - ratio * ratio);
  return std::clamp(a, p.a_min, p.a_max);
}

struct Neighbor {
  bool present = false;
  double gap = 0.0;    ///< bumper-to-bumper distance to the subject vehicle [m]
  double speed = 0.0;
  double desired_speed = 25.0;
};

struct LaneContext {
  bool exists = false;
  Neighbor leader;
  Neighbor follower;
};

/// Everything MOBIL needs about the deciding vehicle and its surroundings.
struct MobilContext {
  double speed = 0.0;
  double desired_speed = 25.0;
  double length = 4.5;
  LaneContext current;
  LaneContext left;
  LaneContext right;
};

enum class LaneDecision { stay, left, right };

/// IDM response to a leader that may be absent; overlapping vehicles get a_min.
inline double follow_acceleration(double v, double v_des, const Neighbor& leader, const IdmParams& p) {
  if (!leader.present) return idm_acceleration(v, v_des, p.d_max_gap, 0.0, p);
  if (leader.gap <= 0) return p.a_min;
  return idm_acceleration(v, v_des, leader.gap, v - leader.speed, p);
}

/// Incentive of moving into `target`, or nullopt when the lane is absent,
/// physically blocked, or the new follower would brake harder than b_safe.
/// Every vehicle other than the deciding one is frozen in place.
inline std::optional<double> mobil_incentive(const MobilContext& ctx, const LaneContext& target,
                                             const IdmParams& idm, const MobilParams& mobil) {
  if (!target.exists) return std::nullopt;
  if (target.leader.present && target.leader.gap <= 0) return std::nullopt;
  if (target.follower.present && target.follower.gap <= 0) return std::nullopt;

  double new_follower_gain = 0.0;
  if (target.follower.present) {
    const Neighbor& nf = target.follower;
    Neighbor nf_leader_before = target.leader;
    if (nf_leader_before.present) nf_leader_before.gap = nf.gap + ctx.length + target.leader.gap;
    const double before = follow_acceleration(nf.speed, nf.desired_speed, nf_leader_before, idm);
    const Neighbor ego_as_leader{true, nf.gap, ctx.speed, ctx.desired_speed};
    const double after = follow_acceleration(nf.speed, nf.desired_speed, ego_as_leader, idm);
    if (after < -mobil.b_safe) return std::nullopt;
    new_follower_gain = after - before;
  }

  double old_follower_gain = 0.0;
  if (ctx.current.follower.present) {
    const Neighbor& of = ctx.current.follower;
    const Neighbor ego_as_leader{true, of.gap, ctx.speed, ctx.desired_speed};
    const double before = follow_acceleration(of.speed, of.desired_speed, ego_as_leader, idm);
    Neighbor of_leader_after = ctx.current.leader;
    if (of_leader_after.present) of_leader_after.gap = of.gap + ctx.length + ctx.current.leader.gap;
    const double after = follow_acceleration(of.speed, of.desired_speed, of_leader_after, idm);
    old_follower_gain = after - before;
  }

  const double own_before = follow_acceleration(ctx.speed, ctx.desired_speed, ctx.current.leader, idm);
  const double own_after = follow_acceleration(ctx.speed, ctx.desired_speed, target.leader, idm);
  return (own_after - own_before) + mobil.p_side * new_follower_gain +
         mobil.q_rear * old_follower_gain;
}

/// Picks the qualifying lane with the larger incentive; equal incentives go left.
inline LaneDecision mobil_decide(const MobilContext& ctx, const IdmParams& idm, const MobilParams& mobil) {
  const auto left = mobil_incentive(ctx, ctx.left, idm, mobil);
  const auto right = mobil_incentive(ctx, ctx.right, idm, mobil);
  const bool left_ok = left && *left > mobil.a_th;
  const bool right_ok = right && *right > mobil.a_th;
  if (left_ok && right_ok) return *right > *left ? LaneDecision::right : LaneDecision::left;
  if (left_ok) return LaneDecision::left;
  if (right_ok) return LaneDecision::right;
  return LaneDecision::stay;
}

inline MobilContext mirrored(MobilContext ctx) {
  std::swap(ctx.left, ctx.right);
  return ctx;
}

/// Nearest vehicles ahead and behind `self` whose lane_index is `lane`.
inline LaneContext lane_neighbors(std::span<const VehicleState> vehicles, std::size_t self, int lane,
                                  const RoadConfig& road) {
  LaneContext ctx;
  ctx.exists = lane >= 0 && lane < road.lane_count;
  if (!ctx.exists) return ctx;
  const VehicleState& me = vehicles[self];
  double best_ahead = 1e300;
  double best_behind = 1e300;
  for (std::size_t j = 0; j < vehicles.size(); ++j) {
    if (j == self || vehicles[j].lane_index != lane) continue;
    const VehicleState& o = vehicles[j];
    const double dx = o.x - me.x;
    if (dx >= 0 && dx < best_ahead) {
      best_ahead = dx;
      ctx.leader = {true, o.rear() - me.front(), o.speed, o.desired_speed};
    } else if (dx < 0 && -dx < best_behind) {
      best_behind = -dx;
      ctx.follower = {true, me.rear() - o.front(), o.speed, o.desired_speed};
    }
  }
  return ctx;
}

inline MobilContext build_mobil_context(std::span<const VehicleState> vehicles, std::size_t self,
                                        const RoadConfig& road) {
  const VehicleState& me = vehicles[self];
  MobilContext ctx;
  ctx.speed = me.speed;
  ctx.desired_speed = me.desired_speed;
  ctx.length = me.length;
  ctx.current = lane_neighbors(vehicles, self, me.lane_index, road);
  ctx.left = lane_neighbors(vehicles, self, me.lane_index + 1, road);
  ctx.right = lane_neighbors(vehicles, self, me.lane_index - 1, road);
  return ctx;
}

}  // namespace tgsim
