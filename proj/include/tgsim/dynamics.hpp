#pragma once

#include "tgsim/vehicle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tgsim {

struct BicycleParams {
  double l_f = 2.25;  ///< front axle to centre of gravity [m]
  double l_r = 2.25;  ///< rear axle to centre of gravity [m]
  double max_steer = 0.6;

  void validate(double vehicle_length = 4.5) const {
    if (!(l_f > 0 && l_r > 0)) throw std::invalid_argument("bicycle: axle distances must be > 0");
    if (l_f + l_r > vehicle_length + 1e-12) {
      throw std::invalid_argument("bicycle: wheelbase exceeds vehicle length");
    }
    if (!(max_steer > 0)) throw std::invalid_argument("bicycle: max_steer must be > 0");
  }
};

struct ControlInput {
  double accel = 0.0;  ///< [m/s^2]
  double steer = 0.0;  ///< front wheel angle [rad]
};

/// Kinematic bicycle model, one explicit Euler step about the centre of
/// gravity. Steering is clamped to +-max_steer and speed never goes negative.
inline VehicleState bicycle_step(VehicleState s, const ControlInput& u, const BicycleParams& p,
                                 double dt) {
  if (!(dt > 0)) throw std::invalid_argument("bicycle_step: dt must be > 0");
  const double steer = std::clamp(u.steer, -p.max_steer, p.max_steer);
  const double beta = std::atan(p.l_r / (p.l_f + p.l_r) * std::tan(steer));
  const double v = s.speed;
  s.x += v * std::cos(s.heading + beta) * dt;
  s.y += v * std::sin(s.heading + beta) * dt;
  s.heading += v / p.l_r * std::sin(beta) * dt;
  s.speed = std::max(0.0, v + u.accel * dt);
  s.accel = u.accel;
  return s;
}

/// Turning radius of the kinematic bicycle at constant steer.
inline double turning_radius(double steer, const BicycleParams& p) {
  const double beta = std::atan(p.l_r / (p.l_f + p.l_r) * std::tan(steer));
  return p.l_r / std::sin(beta);
}

/// Near/far road-point steering. Bearings are taken from the vehicle heading
/// to points on the target centerline `near_distance` and `far_distance`
/// ahead; the near bearing also feeds an integral term.
struct TwoPointParams {
  double near_distance = 8.0;
  double far_distance = 30.0;
  double k_near = 0.3;
  double k_far = 0.5;
  double k_heading = 0.05;  ///< gain on the integrated near-point bearing [1/s]
  double max_steer = 0.6;

  void validate() const {
    if (!(near_distance > 0 && far_distance > near_distance)) {
      throw std::invalid_argument("two-point: need 0 < near_distance < far_distance");
    }
    if (k_near < 0 || k_far < 0 || k_heading < 0) {
      throw std::invalid_argument("two-point: gains must be >= 0");
    }
  }
};

/// Integral state of the two-point law; cleared when the target lane changes.
struct SteeringMemory {
  double integral = 0.0;
  int target_lane = -1;

  void retarget(int lane) {
    if (lane != target_lane) {
      integral = 0.0;
      target_lane = lane;
    }
  }
};

inline double wrap_angle(double a) { return std::remainder(a, 2.0 * M_PI); }

inline double two_point_steering(const VehicleState& s, double target_lane_center,
                                 const TwoPointParams& p, SteeringMemory& memory, double dt) {
  const double lateral = target_lane_center - s.y;
  const double near = wrap_angle(std::atan2(lateral, p.near_distance) - s.heading);
  const double far = wrap_angle(std::atan2(lateral, p.far_distance) - s.heading);
  memory.integral += near * dt;
  const double steer = p.k_far * far + p.k_near * near + p.k_heading * memory.integral;
  return std::clamp(steer, -p.max_steer, p.max_steer);
}

/// Stateless variant (no integral contribution).
inline double two_point_steering(const VehicleState& s, double target_lane_center,
                                 const TwoPointParams& p) {
  SteeringMemory memory;
  return two_point_steering(s, target_lane_center, p, memory, 0.0);
}

}  // namespace tgsim
