#pragma once

#include "tgsim/dynamics.hpp"
#include "tgsim/vehicle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgsim {

struct SpeedRange {
  double min = 0.0;
  double max = 0.0;
};

/// Highway initialisation parameters. Defaults follow the reference traffic
/// setup (9 vehicles, 3 lanes, 25 m minimum gap within 200 m).
struct ScenarioConfig {
  double d_delta = 25.0;    ///< minimum bumper gap between vehicles sharing a lane [m]
  double d_long = 200.0;    ///< maximum initial spread of vehicle centres [m]
  double v_des_ego = 25.0;  ///< [m/s]
  double d_max = 5000.0;    ///< episode length [m]
  SpeedRange v_des_range{18.0, 26.0};
  SpeedRange v0_rear_range{15.0, 25.0};
  SpeedRange v0_front_range{10.0, 12.0};
  SpeedRange v0_ego_range{10.0, 15.0};
  int m = 9;
  int n = 3;
  double sim_dt = 0.1;
  double lane_width = 4.0;
  double vehicle_length = 4.5;
  double vehicle_width = 2.5;
  double soft_gap = 2.0;  ///< soft crash below this bumper gap [m]
  double soft_ttc = 1.0;  ///< soft crash below this time to collision [s]
  BicycleParams bicycle{};

  RoadConfig road() const { return {n, lane_width, d_max}; }

  /// Largest number of vehicles one lane can hold inside d_long.
  int lane_capacity() const {
    return 1 + static_cast<int>(std::floor(d_long / (d_delta + vehicle_length) + 1e-12));
  }

  void validate() const {
    road().validate(vehicle_width);
    bicycle.validate(vehicle_length);
    if (!(d_delta > 0)) throw std::invalid_argument("scenario: d_delta must be > 0");
    if (!(d_long > d_delta)) throw std::invalid_argument("scenario: d_long must exceed d_delta");
    for (const auto& [name, r] : {std::pair{"v_des_range", v_des_range}, std::pair{"v0_rear_range", v0_rear_range},
                                  std::pair{"v0_front_range", v0_front_range},
                                  std::pair{"v0_ego_range", v0_ego_range}}) {
      if (r.min > r.max) throw std::invalid_argument(std::string("scenario: ") + name + " is not ordered");
      if (r.min < 0) throw std::invalid_argument(std::string("scenario: ") + name + " is negative");
    }
    if (!(v_des_ego > 0)) throw std::invalid_argument("scenario: v_des_ego must be > 0");
    if (m < 1) throw std::invalid_argument("scenario: m must be >= 1");
    if (m % 2 == 0) throw std::invalid_argument("scenario: m must be odd so a median vehicle exists");
    if (!(sim_dt > 0)) throw std::invalid_argument("scenario: sim_dt must be > 0");
    if (soft_gap < 0 || soft_ttc < 0) throw std::invalid_argument("scenario: soft thresholds must be >= 0");
    // Balanced lane assignment is the most favourable packing.
    const int per_lane = (m + n - 1) / n;
    if (per_lane > lane_capacity()) {
      throw std::invalid_argument("scenario: infeasible packing, " + std::to_string(m) +
                                  " vehicles cannot keep d_delta gaps within d_long on " +
                                  std::to_string(n) + " lanes");
    }
  }
};

struct Scenario {
  ScenarioConfig config;
  RoadConfig road;
  std::vector<VehicleState> vehicles;  ///< ordered by id
  double clock = 0.0;
  std::mt19937_64 rng;

  std::size_t ego_index() const {
    for (std::size_t i = 0; i < vehicles.size(); ++i) {
      if (vehicles[i].role == Role::ego) return i;
    }
    throw std::logic_error("scenario has no ego vehicle");
  }
  const VehicleState& ego() const { return vehicles[ego_index()]; }
};

/// Places m vehicles: lanes uniform at random (redrawn while a lane would be
/// over capacity), per-lane positions uniform over configurations that keep
/// d_delta bumper gaps inside [0, d_long]. The median vehicle by x is ego.
inline Scenario init_scenario(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  Scenario s;
  s.config = config;
  s.road = config.road();
  s.rng.seed(seed);
  auto& rng = s.rng;
  auto uniform = [&rng](double lo, double hi) {
    return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  const int m = config.m;
  const int n = config.n;
  std::vector<int> lane(static_cast<std::size_t>(m));
  std::vector<int> per_lane(static_cast<std::size_t>(n));
  std::uniform_int_distribution<int> lane_dist(0, n - 1);
  do {
    std::fill(per_lane.begin(), per_lane.end(), 0);
    for (int& l : lane) {
      l = lane_dist(rng);
      ++per_lane[static_cast<std::size_t>(l)];
    }
  } while (*std::max_element(per_lane.begin(), per_lane.end()) > config.lane_capacity());

  const double pitch = config.d_delta + config.vehicle_length;
  std::vector<std::pair<double, int>> placed;  // (x, lane)
  for (int l = 0; l < n; ++l) {
    const int k = per_lane[static_cast<std::size_t>(l)];
    if (k == 0) continue;
    const double slack = config.d_long - (k - 1) * pitch;
    std::vector<double> u(static_cast<std::size_t>(k));
    for (double& v : u) v = uniform(0.0, slack);
    std::sort(u.begin(), u.end());
    for (int i = 0; i < k; ++i) placed.emplace_back(u[static_cast<std::size_t>(i)] + i * pitch, l);
  }
  std::sort(placed.begin(), placed.end());

  const int ego = m / 2;
  s.vehicles.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    VehicleState& v = s.vehicles[static_cast<std::size_t>(i)];
    v.id = i;
    v.x = placed[static_cast<std::size_t>(i)].first;
    v.lane_index = placed[static_cast<std::size_t>(i)].second;
    v.y = s.road.lane_center(v.lane_index);
    v.length = config.vehicle_length;
    v.width = config.vehicle_width;
    if (i == ego) {
      v.role = Role::ego;
      v.speed = uniform(config.v0_ego_range.min, config.v0_ego_range.max);
      v.desired_speed = config.v_des_ego;
    } else {
      const SpeedRange& r = i > ego ? config.v0_front_range : config.v0_rear_range;
      v.speed = uniform(r.min, r.max);
      v.desired_speed = uniform(config.v_des_range.min, config.v_des_range.max);
    }
  }
  return s;
}

/// Advances every vehicle by one sim_dt with its (accel, steer) control.
inline void advance_world(Scenario& s, std::span<const ControlInput> controls) {
  if (controls.size() != s.vehicles.size()) {
    throw std::invalid_argument("step_world: expected one control per vehicle");
  }
  for (std::size_t i = 0; i < s.vehicles.size(); ++i) {
    VehicleState next = bicycle_step(s.vehicles[i], controls[i], s.config.bicycle, s.config.sim_dt);
    next.lane_index = s.road.lane_of(next.y);
    s.vehicles[i] = next;
  }
  s.clock += s.config.sim_dt;
}

inline Scenario step_world(Scenario s, std::span<const ControlInput> controls) {
  advance_world(s, controls);
  return s;
}

enum class CrashKind { hard, soft };

inline const char* to_string(CrashKind k) { return k == CrashKind::hard ? "hard" : "soft"; }

struct CrashEvent {
  CrashKind kind = CrashKind::hard;
  int vehicle_a = 0;  ///< smaller id
  int vehicle_b = 0;
  double time = 0.0;
};

namespace detail {

inline std::array<std::array<double, 2>, 4> corners(const VehicleState& v) {
  const double c = std::cos(v.heading);
  const double s = std::sin(v.heading);
  const double hl = 0.5 * v.length;
  const double hw = 0.5 * v.width;
  std::array<std::array<double, 2>, 4> out{};
  const double signs[4][2] = {{1, 1}, {1, -1}, {-1, -1}, {-1, 1}};
  for (int k = 0; k < 4; ++k) {
    const double lx = signs[k][0] * hl;
    const double ly = signs[k][1] * hw;
    out[static_cast<std::size_t>(k)] = {v.x + c * lx - s * ly, v.y + s * lx + c * ly};
  }
  return out;
}

}  // namespace detail

/// Separating-axis test on the two oriented footprints. Touching edges do not
/// count as overlap.
inline bool rectangles_overlap(const VehicleState& a, const VehicleState& b) {
  const auto ca = detail::corners(a);
  const auto cb = detail::corners(b);
  for (const double heading : {a.heading, b.heading}) {
    for (const double angle : {heading, heading + M_PI / 2}) {
      const double ax = std::cos(angle);
      const double ay = std::sin(angle);
      double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
      for (const auto& p : ca) {
        const double d = p[0] * ax + p[1] * ay;
        amin = std::min(amin, d);
        amax = std::max(amax, d);
      }
      for (const auto& p : cb) {
        const double d = p[0] * ax + p[1] * ay;
        bmin = std::min(bmin, d);
        bmax = std::max(bmax, d);
      }
      if (amax <= bmin || bmax <= amin) return false;
    }
  }
  return true;
}

/// Classifies one vehicle pair; returns false when nothing happened.
inline bool classify_pair(const VehicleState& a, const VehicleState& b, const ScenarioConfig& cfg,
                          CrashKind& kind) {
  if (rectangles_overlap(a, b)) {
    kind = CrashKind::hard;
    return true;
  }
  if (a.lane_index != b.lane_index) return false;
  const VehicleState& rear = a.x <= b.x ? a : b;
  const VehicleState& front = a.x <= b.x ? b : a;
  const double gap = front.rear() - rear.front();
  const double closing = rear.speed - front.speed;
  if (gap < cfg.soft_gap || (closing > 0 && gap / closing < cfg.soft_ttc)) {
    kind = CrashKind::soft;
    return true;
  }
  return false;
}

inline std::vector<CrashEvent> detect_collisions(const Scenario& s) {
  std::vector<CrashEvent> events;
  for (std::size_t i = 0; i < s.vehicles.size(); ++i) {
    for (std::size_t j = i + 1; j < s.vehicles.size(); ++j) {
      CrashKind kind;
      if (classify_pair(s.vehicles[i], s.vehicles[j], s.config, kind)) {
        const int a = std::min(s.vehicles[i].id, s.vehicles[j].id);
        const int b = std::max(s.vehicles[i].id, s.vehicles[j].id);
        events.push_back({kind, a, b, s.clock});
      }
    }
  }
  return events;
}

// Scenario dump CSV.

inline constexpr const char* kScenarioDumpHeader =
    "t,vehicle_id,x_m,y_m,heading_rad,speed_mps,lane_index,role";

inline void write_scenario_rows(std::ostream& out, const Scenario& s) {
  char line[256];
  for (const auto& v : s.vehicles) {
    std::snprintf(line, sizeof line, "%.3f,%d,%.6f,%.6f,%.6f,%.6f,%d,%s\n", s.clock, v.id, v.x, v.y,
                  v.heading, v.speed, v.lane_index, to_string(v.role));
    out << line;
  }
}

}  // namespace tgsim
