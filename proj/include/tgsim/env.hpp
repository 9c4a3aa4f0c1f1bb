#pragma once

#include "tgsim/traffic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgsim {

enum class Action { keep = 0, left = 1, right = 2 };
inline constexpr int kActionCount = 3;

inline const char* to_string(Action a) {
  switch (a) {
    case Action::keep: return "keep";
    case Action::left: return "left";
    case Action::right: return "right";
  }
  return "?";
}

inline Action action_from_index(int i) {
  if (i < 0 || i >= kActionCount) throw std::out_of_range("action index must be 0, 1 or 2");
  return static_cast<Action>(i);
}

struct ObservationLimits {
  double ds_max = 200.0;  ///< [m]
  double v_max = 30.0;    ///< [m/s]
};

using Observation = std::vector<double>;

inline std::size_t observation_size(int m) { return 3 + 3 * static_cast<std::size_t>(m - 1); }

/// Ego speed ratio, left/right lane flags, then (dx, dv, lane offset) for every
/// other vehicle in id order. Left is the next higher lane index.
inline Observation encode_observation(const Scenario& s, const ObservationLimits& limits) {
  const VehicleState& ego = s.ego();
  Observation obs;
  obs.reserve(observation_size(static_cast<int>(s.vehicles.size())));
  obs.push_back(std::clamp(ego.speed / ego.desired_speed, -1.0, 1.0));
  obs.push_back(ego.lane_index + 1 < s.road.lane_count ? 1.0 : 0.0);
  obs.push_back(ego.lane_index > 0 ? 1.0 : 0.0);
  for (const auto& v : s.vehicles) {
    if (v.role == Role::ego) continue;
    obs.push_back(std::clamp((v.x - ego.x) / limits.ds_max, -1.0, 1.0));
    obs.push_back(std::clamp((v.speed - ego.speed) / limits.v_max, -1.0, 1.0));
    obs.push_back(std::clamp(0.5 * (v.lane_index - ego.lane_index), -1.0, 1.0));
  }
  return obs;
}

struct RewardParams {
  double speed_floor = 15.0;        ///< speed with zero speed reward [m/s]
  double harsh_accel = 1.7;         ///< |a| above this replaces the speed reward [m/s^2]
  double lane_change = -1.0;
  double out_of_road = -100.0;
  double hard_crash = -100.0;
  double soft_crash = -10.0;
  double goal = 100.0;
};

struct RewardBreakdown {
  double speed = 0.0;
  double low_acc = 0.0;
  double lane_change_penalty = 0.0;
  double out_of_road = 0.0;
  double hard_crash = 0.0;
  double soft_crash = 0.0;
  double goal = 0.0;
  double total = 0.0;

  double component_sum() const {
    return speed + low_acc + lane_change_penalty + out_of_road + hard_crash + soft_crash + goal;
  }
};

/// What happened to the ego during one decision step.
struct TransitionSummary {
  double ego_speed = 0.0;
  double ego_desired_speed = 25.0;
  double peak_abs_accel = 0.0;
  bool lane_change_started = false;
  bool out_of_road = false;
  bool hard_crash = false;
  bool soft_crash = false;
  bool goal = false;
};

inline double speed_reward(double v, double v_des, double floor) { return (v - floor) / (v_des - floor); }

inline RewardBreakdown compute_reward(const TransitionSummary& t, const RewardParams& p = {}) {
  RewardBreakdown r;
  r.speed = speed_reward(t.ego_speed, t.ego_desired_speed, p.speed_floor);
  if (t.peak_abs_accel > p.harsh_accel) r.low_acc = -r.speed;
  if (t.lane_change_started) r.lane_change_penalty = p.lane_change;
  if (t.out_of_road) {
    r.out_of_road = p.out_of_road;
  } else if (t.hard_crash) {
    r.hard_crash = p.hard_crash;
  } else if (t.goal) {
    r.goal = p.goal;
  }
  if (t.soft_crash) r.soft_crash = p.soft_crash;
  r.total = r.component_sum();
  return r;
}

enum class DoneReason { none, goal, hard_crash, out_of_road, step_limit };

inline const char* to_string(DoneReason d) {
  switch (d) {
    case DoneReason::none: return "none";
    case DoneReason::goal: return "goal";
    case DoneReason::hard_crash: return "hard_crash";
    case DoneReason::out_of_road: return "out_of_road";
    case DoneReason::step_limit: return "step_limit";
  }
  return "?";
}

struct StepInfo {
  std::optional<CrashKind> crash;  ///< worst ego crash this step
  double distance = 0.0;           ///< ego x travelled since reset [m]
  int step = 0;                    ///< decision steps taken, including this one
  DoneReason reason = DoneReason::none;
  int background_crashes = 0;      ///< hard events not involving the ego
};

struct StepResult {
  Observation observation;
  RewardBreakdown reward;
  bool done = false;
  StepInfo info;
};

struct EnvConfig {
  TrafficConfig traffic;
  ObservationLimits limits;
  RewardParams reward;
  int max_steps = 500;

  void validate() const {
    traffic.validate();
    if (!(limits.ds_max > 0 && limits.v_max > 0)) throw std::invalid_argument("env: observation limits must be > 0");
    if (max_steps < 1) throw std::invalid_argument("env: max_steps must be >= 1");
    if (!(traffic.scenario.v_des_ego > reward.speed_floor)) {
      throw std::invalid_argument("env: v_des_ego must exceed the speed-reward floor");
    }
  }
};

class HighwayEnv {
 public:
  explicit HighwayEnv(EnvConfig cfg, const Generator* generator = nullptr)
      : cfg_(std::move(cfg)), generator_(generator) {
    cfg_.validate();
  }

  Observation reset(TrafficMode mode, std::uint64_t seed) {
    if (mode == TrafficMode::gan && generator_ == nullptr) {
      throw std::invalid_argument("traffic_gan needs trained generator weights");
    }
    world_.emplace(cfg_.traffic, mode, mode == TrafficMode::gan ? generator_ : nullptr);
    world_->reset(seed);
    start_x_ = world_->scenario().ego().x;
    steps_ = 0;
    done_ = false;
    return observe();
  }

  StepResult step(Action action) {
    if (!world_) throw std::logic_error("env: step before reset");
    if (done_) throw std::logic_error("env: step on a finished episode; call reset");
    ++steps_;
    TransitionSummary t;
    StepResult out;
    const std::size_t e = world_->ego_index();
    t.ego_desired_speed = world_->scenario().vehicles[e].desired_speed;

    if (action != Action::keep && !world_->ego_changing_lanes()) {
      const auto r = world_->request_lane_change(e, action == Action::left ? 1 : -1);
      if (r == LaneChangeRequest::no_lane) {
        t.out_of_road = true;
      } else if (r == LaneChangeRequest::started) {
        t.lane_change_started = true;
      }
    }

    if (!t.out_of_road) {
      const int ego_id = world_->scenario().vehicles[e].id;
      for (int k = 0; k < cfg_.traffic.ticks_per_decision; ++k) {
        const auto events = world_->tick();
        const VehicleState& ego = world_->scenario().vehicles[e];
        t.peak_abs_accel = std::max(t.peak_abs_accel, std::abs(ego.accel));
        for (const auto& ev : events) {
          const bool mine = ev.vehicle_a == ego_id || ev.vehicle_b == ego_id;
          if (!mine) {
            if (ev.kind == CrashKind::hard) ++out.info.background_crashes;
            continue;
          }
          if (ev.kind == CrashKind::hard) {
            t.hard_crash = true;
          } else {
            t.soft_crash = true;
          }
        }
        if (t.hard_crash) break;
        if (ego.x >= cfg_.traffic.scenario.d_max) {
          t.goal = true;
          break;
        }
      }
    }

    const VehicleState& ego = world_->scenario().vehicles[e];
    t.ego_speed = ego.speed;
    out.reward = compute_reward(t, cfg_.reward);
    if (t.hard_crash) {
      out.info.crash = CrashKind::hard;
    } else if (t.soft_crash) {
      out.info.crash = CrashKind::soft;
    }
    if (t.out_of_road) {
      out.info.reason = DoneReason::out_of_road;
    } else if (t.hard_crash) {
      out.info.reason = DoneReason::hard_crash;
    } else if (t.goal) {
      out.info.reason = DoneReason::goal;
    } else if (steps_ >= cfg_.max_steps) {
      out.info.reason = DoneReason::step_limit;
    }
    out.done = out.info.reason != DoneReason::none;
    done_ = out.done;
    out.info.distance = ego.x - start_x_;
    out.info.step = steps_;
    out.observation = observe();
    return out;
  }

  Observation observe() const { return encode_observation(world_->scenario(), cfg_.limits); }

  const EnvConfig& config() const { return cfg_; }
  const TrafficWorld& world() const { return *world_; }
  bool done() const { return done_; }
  int steps() const { return steps_; }
  std::size_t observation_dim() const { return observation_size(cfg_.traffic.scenario.m); }

  /// Action MOBIL would take for the ego now; keep while a change is underway.
  Action mobil_action() const {
    if (world_->ego_changing_lanes()) return Action::keep;
    switch (mobil_decision(*world_, world_->ego_index())) {
      case LaneDecision::left: return Action::left;
      case LaneDecision::right: return Action::right;
      case LaneDecision::stay: break;
    }
    return Action::keep;
  }

 private:
  EnvConfig cfg_;
  const Generator* generator_;
  std::optional<TrafficWorld> world_;
  double start_x_ = 0.0;
  int steps_ = 0;
  bool done_ = false;
};

inline constexpr const char* kEpisodeLogHeader = "episode,step,action,reward_total,reward_speed,crash,ego_x,ego_lane";

inline void write_episode_log_row(std::ostream& out, int episode, Action action, const StepResult& r,
                                  const VehicleState& ego) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%d,%d,%.17g,%.17g,%s,%.17g,%d\n", episode, r.info.step,
                static_cast<int>(action), r.reward.total, r.reward.speed,
                r.info.crash ? to_string(*r.info.crash) : "none", ego.x, ego.lane_index);
  out << buf;
}

}  // namespace tgsim
