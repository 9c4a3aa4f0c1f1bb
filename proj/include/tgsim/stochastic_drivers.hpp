#pragma once

#include "tgsim/vehicle.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>

namespace tgsim {

/// Lane changes per vehicle per km: (n / q) (1000 / L).
inline double mean_lane_change_rate(double n, double q, double L) {
  if (!(q > 0)) throw std::invalid_argument("mean_lane_change_rate: q must be > 0");
  if (!(L > 0)) throw std::invalid_argument("mean_lane_change_rate: L must be > 0");
  if (n < 0) throw std::invalid_argument("mean_lane_change_rate: n must be >= 0");
  return (n / q) * (1000.0 / L);
}

struct LaneChangeStats {
  double sr_lc = 0.1;  ///< lane changes per vehicle per km
  double t_m = 100.0;  ///< hazard horizon [simulation steps]

  /// t_m = 1000 / (sr_lc v dt): steps needed to cover 1/sr_lc km at speed v.
  static LaneChangeStats from_rate(double sr_lc, double speed, double dt) {
    if (!(sr_lc > 0 && speed > 0 && dt > 0)) {
      throw std::invalid_argument("LaneChangeStats: sr_lc, speed and dt must be > 0");
    }
    return {sr_lc, 1000.0 / (sr_lc * speed * dt)};
  }

  void validate() const {
    if (sr_lc < 0) throw std::invalid_argument("LaneChangeStats: sr_lc must be >= 0");
    if (!(t_m > 0)) throw std::invalid_argument("LaneChangeStats: t_m must be > 0");
  }
};

/// p(change | t) = min(t / t_m, 1).
inline double lane_change_probability(double t, double t_m) {
  if (t < 0) throw std::invalid_argument("lane_change_probability: t must be >= 0");
  if (!(t_m > 0)) throw std::invalid_argument("lane_change_probability: t_m must be > 0");
  return std::min(t / t_m, 1.0);
}

struct DurationModel {
  double mean = 5.0;  ///< [s]
  double std = 1.5;   ///< [s]
  double clip_min = 1.5;
  double clip_max = 10.0;

  void validate() const {
    if (!(mean > 0)) throw std::invalid_argument("DurationModel: mean must be > 0");
    if (std < 0) throw std::invalid_argument("DurationModel: std must be >= 0");
    if (!(clip_min > 0 && clip_min <= mean && mean <= clip_max)) {
      throw std::invalid_argument("DurationModel: clip range must be positive and contain the mean");
    }
  }
};

template <class Rng>
double sample_lane_change_duration(const DurationModel& model, Rng& rng) {
  model.validate();
  if (model.std == 0) return model.mean;
  const double d = std::normal_distribution<double>(model.mean, model.std)(rng);
  return std::clamp(d, model.clip_min, model.clip_max);
}

/// Quintic ease 6p^5 - 15p^4 + 10p^3.
inline double lateral_profile(double p) {
  if (!(p >= 0 && p <= 1)) throw std::invalid_argument("lateral_profile: progress must be in [0, 1]");
  return p * p * p * (10.0 + p * (-15.0 + 6.0 * p));
}

/// Largest slope of the quintic ease, reached at p = 0.5.
inline constexpr double kLateralProfileMaxSlope = 1.875;

enum class ManeuverPhase { keeping, changing };

struct ManeuverState {
  ManeuverPhase phase = ManeuverPhase::keeping;
  int steps_since_last_change = 0;
  int origin_lane = 0;
  int target_lane = 0;
  double progress = 0.0;
  double duration = 0.0;  ///< [s]
};

struct OverlayOutput {
  std::optional<double> lateral_target;  ///< set only while a change is in progress
  bool started = false;
  bool completed = false;
};

/// One simulation step of the injected lane-change layer for a background
/// vehicle. In the keeping phase t is incremented and a change fires with
/// probability t / t_m toward a uniformly chosen neighbour lane. While
/// changing, progress advances by dt / duration and the lateral target follows
/// the quintic profile between the two centerlines.
template <class Rng>
OverlayOutput overlay_lane_changes(ManeuverState& m, const VehicleState& vehicle, const RoadConfig& road,
                                   const LaneChangeStats& stats, const DurationModel& durations, Rng& rng,
                                   double dt) {
  if (vehicle.role == Role::ego) throw std::invalid_argument("overlay_lane_changes: ego is agent-controlled");
  if (!(dt > 0)) throw std::invalid_argument("overlay_lane_changes: dt must be > 0");
  OverlayOutput out;
  if (m.phase == ManeuverPhase::keeping) {
    ++m.steps_since_last_change;
    const int lane = vehicle.lane_index;
    const bool has_left = lane + 1 < road.lane_count;
    const bool has_right = lane > 0;
    if (!has_left && !has_right) return out;
    const double p = lane_change_probability(m.steps_since_last_change, stats.t_m);
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) >= p) return out;
    int target = has_left ? lane + 1 : lane - 1;
    if (has_left && has_right && std::uniform_int_distribution<int>(0, 1)(rng) == 1) target = lane - 1;
    m.phase = ManeuverPhase::changing;
    m.origin_lane = lane;
    m.target_lane = target;
    m.progress = 0.0;
    m.duration = sample_lane_change_duration(durations, rng);
    out.started = true;
  }
  m.progress = std::min(1.0, m.progress + dt / m.duration);
  // Absorb rounding so an integer number of steps lands exactly on 1.
  if (1.0 - m.progress < 1e-9) m.progress = 1.0;
  const double y0 = road.lane_center(m.origin_lane);
  const double y1 = road.lane_center(m.target_lane);
  out.lateral_target = y0 + lateral_profile(m.progress) * (y1 - y0);
  if (m.progress >= 1.0) {
    m.phase = ManeuverPhase::keeping;
    m.steps_since_last_change = 0;
    out.completed = true;
  }
  return out;
}

}  // namespace tgsim
