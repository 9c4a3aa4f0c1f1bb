#pragma once

#include "tgsim/dynamics.hpp"
#include "tgsim/gan.hpp"
#include "tgsim/rule_drivers.hpp"
#include "tgsim/scenario.hpp"
#include "tgsim/stochastic_drivers.hpp"
#include "tgsim/trajectory_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgsim {

enum class TrafficMode { idm, gan };

inline const char* to_string(TrafficMode m) { return m == TrafficMode::idm ? "traffic_idm" : "traffic_gan"; }

inline TrafficMode parse_traffic_mode(const std::string& s) {
  if (s == "idm" || s == "traffic_idm") return TrafficMode::idm;
  if (s == "gan" || s == "traffic_gan") return TrafficMode::gan;
  throw std::invalid_argument("unknown traffic mode '" + s + "' (expected idm or gan)");
}

struct TrafficConfig {
  ScenarioConfig scenario;
  IdmParams idm;
  MobilParams mobil;
  TwoPointParams steering;
  int ticks_per_decision = 10;        ///< decision period in physics ticks
  double lane_change_duration = 4.0;  ///< ego and MOBIL maneuvers [s]
  double sr_lc = 0.1;                 ///< injected lane changes per vehicle per km
  double t_m_override = 0.0;          ///< > 0 replaces the per-vehicle derived t_m [steps]
  DurationModel durations;
  double gan_accel_min = -8.0;  ///< bounds on generative-driver acceleration [m/s^2]
  double gan_accel_max = 3.0;

  void validate() const {
    scenario.validate();
    idm.validate();
    mobil.validate();
    steering.validate();
    durations.validate();
    if (ticks_per_decision < 1) throw std::invalid_argument("traffic: ticks_per_decision must be >= 1");
    if (!(lane_change_duration > 0)) throw std::invalid_argument("traffic: lane_change_duration must be > 0");
    if (sr_lc < 0 || t_m_override < 0) throw std::invalid_argument("traffic: sr_lc and t_m_override must be >= 0");
    if (!(gan_accel_min < 0 && gan_accel_max > 0)) {
      throw std::invalid_argument("traffic: need gan_accel_min < 0 < gan_accel_max");
    }
  }

  double decision_period() const { return ticks_per_decision * scenario.sim_dt; }
};

/// Lane change along the quintic profile between two centerlines.
struct LaneChangeManeuver {
  bool active = false;
  int origin = 0;
  int target = 0;
  double elapsed = 0.0;
  double duration = 4.0;

  double reference_y(const RoadConfig& road) const {
    const double p = std::min(1.0, elapsed / duration);
    return road.lane_center(origin) + lateral_profile(p) * (road.lane_center(target) - road.lane_center(origin));
  }
};

struct DriverState {
  SteeringMemory steering;
  LaneChangeManeuver maneuver;  ///< ego and rule-based lane changes
  ManeuverState overlay;        ///< injected lane changes of generative drivers
  double t_m = 1.0;
  std::deque<Point2> history;   ///< most recent positions, oldest first
};

enum class LaneChangeRequest { started, busy, no_lane };

/// Multi-vehicle world advanced in physics ticks. The ego follows IDM toward
/// its lane leader and performs lane changes on request; background vehicles
/// follow IDM + MOBIL or the trajectory generator with the injected
/// lane-change layer.
class TrafficWorld {
 public:
  TrafficWorld(TrafficConfig cfg, TrafficMode mode, const Generator* generator = nullptr)
      : cfg_(std::move(cfg)), mode_(mode), generator_(generator) {
    cfg_.validate();
    if (mode_ == TrafficMode::gan && generator_ == nullptr) {
      throw std::invalid_argument("traffic_gan needs trained generator weights");
    }
  }

  void reset(std::uint64_t seed) {
    scenario_ = init_scenario(cfg_.scenario, seed);
    rng_ = nn::derive_rng(seed, 1);
    ticks_ = 0;
    drivers_.assign(scenario_.vehicles.size(), DriverState{});
    for (std::size_t i = 0; i < drivers_.size(); ++i) {
      const VehicleState& v = scenario_.vehicles[i];
      drivers_[i].steering.retarget(v.lane_index);
      if (v.role != Role::ego) {
        scenario_.vehicles[i].driver = mode_ == TrafficMode::gan ? DriverKind::generative : DriverKind::rule_based;
        if (cfg_.t_m_override > 0) {
          drivers_[i].t_m = cfg_.t_m_override;
        } else if (cfg_.sr_lc > 0) {
          drivers_[i].t_m = LaneChangeStats::from_rate(cfg_.sr_lc, v.desired_speed, cfg_.scenario.sim_dt).t_m;
        } else {
          drivers_[i].t_m = std::numeric_limits<double>::infinity();
        }
      }
      drivers_[i].history.push_back({v.x, v.y});
    }
  }

  const Scenario& scenario() const { return scenario_; }
  Scenario& mutable_scenario() { return scenario_; }
  const TrafficConfig& config() const { return cfg_; }
  TrafficMode mode() const { return mode_; }
  long ticks() const { return ticks_; }
  const DriverState& driver(std::size_t i) const { return drivers_[i]; }
  std::size_t ego_index() const { return scenario_.ego_index(); }
  bool ego_changing_lanes() const { return drivers_[ego_index()].maneuver.active; }

  /// direction +1 = left, -1 = right.
  LaneChangeRequest request_lane_change(std::size_t i, int direction) {
    DriverState& d = drivers_[i];
    if (d.maneuver.active) return LaneChangeRequest::busy;
    const int lane = scenario_.vehicles[i].lane_index;
    const int target = lane + direction;
    if (target < 0 || target >= scenario_.road.lane_count) return LaneChangeRequest::no_lane;
    d.maneuver = {true, lane, target, 0.0, cfg_.lane_change_duration};
    d.steering.retarget(target);
    return LaneChangeRequest::started;
  }

  /// Advances all vehicles by one physics tick; returns the collision events
  /// present after the move.
  std::vector<CrashEvent> tick() {
    const std::size_t n = scenario_.vehicles.size();
    std::vector<ControlInput> controls(n);
    const bool decide = ticks_ % cfg_.ticks_per_decision == 0;
    const bool generative = mode_ == TrafficMode::gan &&
                            static_cast<int>(drivers_[0].history.size()) >= generator_->config().o_l;
    std::vector<Point2> predicted;
    if (generative) {
      std::vector<std::vector<Point2>> hist;
      for (const auto& d : drivers_) hist.emplace_back(d.history.begin(), d.history.end());
      predicted = generate_next_position(*generator_, hist, rng_);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const VehicleState& v = scenario_.vehicles[i];
      if (v.role != Role::ego && generative) {
        controls[i] = generative_control(i, predicted[i]);
        continue;
      }
      if (v.role != Role::ego && mode_ == TrafficMode::idm && decide && !drivers_[i].maneuver.active) {
        const LaneDecision d = mobil_decide(build_mobil_context(scenario_.vehicles, i, scenario_.road), cfg_.idm,
                                            cfg_.mobil);
        if (d != LaneDecision::stay) request_lane_change(i, d == LaneDecision::left ? 1 : -1);
      }
      controls[i] = rule_control(i);
    }
    advance_world(scenario_, controls);
    ++ticks_;
    for (std::size_t i = 0; i < n; ++i) {
      LaneChangeManeuver& m = drivers_[i].maneuver;
      if (m.active) {
        m.elapsed += cfg_.scenario.sim_dt;
        if (m.elapsed >= m.duration - 1e-9) m.active = false;
      }
      auto& h = drivers_[i].history;
      h.push_back({scenario_.vehicles[i].x, scenario_.vehicles[i].y});
      const std::size_t keep = generator_ ? static_cast<std::size_t>(generator_->config().o_l) : 1;
      while (h.size() > keep) h.pop_front();
    }
    return detect_collisions(scenario_);
  }

  /// IDM toward the nearest leader in the current lane or the maneuver's
  /// target lane.
  double longitudinal_accel(std::size_t i) const {
    const VehicleState& me = scenario_.vehicles[i];
    const LaneChangeManeuver& m = drivers_[i].maneuver;
    Neighbor leader = lane_neighbors(scenario_.vehicles, i, me.lane_index, scenario_.road).leader;
    if (m.active && m.target != me.lane_index) {
      const Neighbor other = lane_neighbors(scenario_.vehicles, i, m.target, scenario_.road).leader;
      if (other.present && (!leader.present || other.gap < leader.gap)) leader = other;
    }
    return follow_acceleration(me.speed, me.desired_speed, leader, cfg_.idm);
  }

  double lateral_reference(std::size_t i) const {
    const LaneChangeManeuver& m = drivers_[i].maneuver;
    if (m.active) return m.reference_y(scenario_.road);
    return scenario_.road.lane_center(scenario_.vehicles[i].lane_index);
  }

 private:
  ControlInput rule_control(std::size_t i) {
    DriverState& d = drivers_[i];
    if (!d.maneuver.active) d.steering.retarget(scenario_.vehicles[i].lane_index);
    const double steer = two_point_steering(scenario_.vehicles[i], lateral_reference(i), cfg_.steering, d.steering,
                                            cfg_.scenario.sim_dt);
    return {longitudinal_accel(i), steer};
  }

  /// Inverse kinematics on the one-step prediction: acceleration that makes
  /// the next speed match the predicted displacement rate, steering toward the
  /// predicted lateral position held inside the current lane band (or toward
  /// the injected lane-change profile).
  ControlInput generative_control(std::size_t i, const Point2& next) {
    DriverState& d = drivers_[i];
    const VehicleState& v = scenario_.vehicles[i];
    const RoadConfig& road = scenario_.road;
    const double dt = cfg_.scenario.sim_dt;
    const LaneChangeStats stats{cfg_.sr_lc, d.t_m};
    const OverlayOutput overlay = overlay_lane_changes(d.overlay, v, road, stats, cfg_.durations, rng_, dt);
    double target_y;
    if (overlay.lateral_target) {
      target_y = *overlay.lateral_target;
      d.steering.retarget(d.overlay.target_lane);
    } else {
      const double half_band = 0.5 * (road.lane_width - v.width);
      const double center = road.lane_center(v.lane_index);
      target_y = std::clamp(next.y, center - half_band, center + half_band);
      d.steering.retarget(v.lane_index);
    }
    const double speed = std::hypot(next.x - v.x, next.y - v.y) / dt;
    const double accel = std::clamp((speed - v.speed) / dt, cfg_.gan_accel_min, cfg_.gan_accel_max);
    return {accel, two_point_steering(v, target_y, cfg_.steering, d.steering, dt)};
  }

  TrafficConfig cfg_;
  TrafficMode mode_;
  const Generator* generator_;
  Scenario scenario_;
  std::vector<DriverState> drivers_;
  nn::Rng rng_;
  long ticks_ = 0;
};

/// MOBIL decision for vehicle i in the current world state.
inline LaneDecision mobil_decision(const TrafficWorld& world, std::size_t i) {
  const auto& s = world.scenario();
  return mobil_decide(build_mobil_context(s.vehicles, i, s.road), world.config().idm, world.config().mobil);
}

/// Rule-driven trajectories in native format: `episodes` fresh scenarios of
/// `ticks` physics steps each, ego included and driven by IDM + MOBIL.
/// Vehicle ids are offset per episode and episodes are separated in time.
inline std::vector<TrajectoryRecord> generate_synthetic_trajectories(const TrafficConfig& cfg, int episodes, int ticks,
                                                                     std::uint64_t seed) {
  if (episodes < 0 || ticks < 0) throw std::invalid_argument("synthetic trajectories: counts must be >= 0");
  std::vector<TrajectoryRecord> out;
  const double dt = cfg.scenario.sim_dt;
  for (int e = 0; e < episodes; ++e) {
    TrafficWorld world(cfg, TrafficMode::idm);
    world.reset(seed + static_cast<std::uint64_t>(e));
    const int id_base = e * 1000;
    const double t_base = e * (ticks + 100) * dt;
    auto emit = [&](long k) {
      for (const auto& v : world.scenario().vehicles) {
        out.push_back({id_base + v.id, t_base + static_cast<double>(k) * dt, v.x, v.y});
      }
    };
    emit(0);
    for (int k = 1; k <= ticks; ++k) {
      if ((k - 1) % cfg.ticks_per_decision == 0 && !world.ego_changing_lanes()) {
        const LaneDecision d = mobil_decision(world, world.ego_index());
        if (d != LaneDecision::stay) world.request_lane_change(world.ego_index(), d == LaneDecision::left ? 1 : -1);
      }
      world.tick();
      emit(k);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.vehicle_id < b.vehicle_id; });
  return out;
}

}  // namespace tgsim
