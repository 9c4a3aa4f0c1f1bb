#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tgsim {

enum class Role { ego, other };
enum class DriverKind { rule_based, generative };

inline const char* to_string(Role r) { return r == Role::ego ? "ego" : "other"; }

/// Straight multi-lane road. Lane 0 is the rightmost lane; lateral position y
/// is 0 at the right road edge and grows to the left.
struct RoadConfig {
  int lane_count = 3;
  double lane_width = 4.0;
  double episode_length = 5000.0;

  void validate(double vehicle_width = 2.5) const {
    if (lane_count < 1) throw std::invalid_argument("road: lane_count must be >= 1");
    if (!(lane_width > vehicle_width)) {
      throw std::invalid_argument("road: lane_width must exceed vehicle width");
    }
    if (!(episode_length > 0)) throw std::invalid_argument("road: episode_length must be > 0");
  }

  double lane_center(int lane) const { return (lane + 0.5) * lane_width; }
  double width() const { return lane_count * lane_width; }

  /// Nearest lane centerline, clamped to the road.
  int lane_of(double y) const {
    const int lane = static_cast<int>(std::floor(y / lane_width));
    return lane < 0 ? 0 : (lane >= lane_count ? lane_count - 1 : lane);
  }
  bool on_road(double y, double half_width = 0.0) const {
    return y - half_width >= 0.0 && y + half_width <= width();
  }
};

struct VehicleState {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
  double accel = 0.0;
  int lane_index = 0;
  double length = 4.5;
  double width = 2.5;
  double desired_speed = 25.0;
  Role role = Role::other;
  DriverKind driver = DriverKind::rule_based;

  double front() const { return x + 0.5 * length; }
  double rear() const { return x - 0.5 * length; }
};

}  // namespace tgsim
