#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace scriptdrive::world {

inline constexpr double kDefaultDt = 0.1;

/// Straight multi-lane ring road. Lane 0 is the rightmost lane and its
/// centerline is y = 0; lane i has its centerline at y = i * lane_width.
/// The longitudinal coordinate wraps with period segment_length for
/// background traffic, so relative positions are always taken modulo it.
struct RoadNetwork {
  int lane_count = 3;
  double lane_width = 3.5;
  double segment_length = 1000.0;
  double speed_limit = 15.0;
  std::vector<int> lane_directions;  // +1 forward, -1 oncoming; empty = all forward

  int direction(int lane) const;
  double lane_center(int lane) const { return lane * lane_width; }
  /// Lane whose centerline is closest to y, clamped to the road.
  int nearest_lane(double y) const;
  double right_edge() const { return -0.5 * lane_width; }
  double left_edge() const { return lane_count * lane_width - 0.5 * lane_width; }
  /// Signed shortest longitudinal offset from `from` to `to` on the ring.
  double wrap_dx(double from, double to) const;
  void validate() const;
};

enum class VehicleKind { ego, background };

struct VehicleState {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
  double length = 5.0;
  double width = 2.0;
  VehicleKind kind = VehicleKind::background;
  double desired_speed = 0.0;  // IDM v0 for background vehicles; 0 = speed limit

  double longitudinal_speed() const;
};

struct IdmParams {
  double desired_speed = 15.0;
  double time_headway = 1.5;
  double min_gap = 2.0;
  double max_accel = 1.5;
  double comfort_decel = 2.0;
  double exponent = 4.0;
  /// Hardest braking the model may command; returned for degenerate overlap.
  double max_decel = 8.0;
};

struct ControlLimits {
  double accel_min = -4.0;
  double accel_max = 3.0;
  double steer_max = 0.6;
};

struct ControlCommand {
  double acceleration = 0.0;
  double steering_angle = 0.0;

  bool within(const ControlLimits& limits) const;
  ControlCommand clamped(const ControlLimits& limits) const;
};

struct VehicleGeometry {
  double wheelbase = 2.8;
  double length = 5.0;
  double width = 2.0;
};

struct WorldState {
  RoadNetwork road;
  std::vector<VehicleState> vehicles;  // vehicles[0] is the ego
  double time = 0.0;
  std::int64_t tick = 0;
  std::uint64_t rng_seed = 0;
  IdmParams idm;
  ControlLimits limits;
  VehicleGeometry ego_geometry;
  double ego_distance = 0.0;  // odometer, longitudinal
  bool last_command_saturated = false;

  const VehicleState& ego() const { return vehicles.front(); }
  VehicleState& ego() { return vehicles.front(); }
  void validate() const;
};

/// Kinematic bicycle step shared by the simulator and the planners so that
/// planned poses re-integrate exactly.
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
};

Pose bicycle_step(const Pose& pose, const ControlCommand& cmd, double wheelbase, double dt);

WorldState step_world(const WorldState& world, const ControlCommand& ego_cmd,
                      double dt = kDefaultDt);

enum class Slot { front = 0, rear, left_front, left_rear, right_front, right_rear };
inline constexpr std::array<Slot, 6> kAllSlots = {Slot::front,       Slot::rear,
                                                  Slot::left_front,  Slot::left_rear,
                                                  Slot::right_front, Slot::right_rear};
std::string to_string(Slot slot);

struct Neighbor {
  int id = 0;
  double gap = 0.0;             // bumper to bumper, >= 0
  double relative_speed = 0.0;  // neighbor minus ego, longitudinal
  double neighbor_speed = 0.0;
  double center_dx = 0.0;       // signed center offset along the road
  double raw_gap = 0.0;         // unclamped bumper gap
  double length = 5.0;
  double width = 2.0;
  int lane = 0;
};

struct Observation {
  VehicleState ego;
  std::array<std::optional<Neighbor>, 6> neighbors;
  int lane_index = 0;
  int lane_count = 1;
  double lane_width = 3.5;
  double speed_limit = 15.0;
  double sensor_range = 100.0;
  bool left_open = false;   // adjacent left lane exists with the ego's direction
  bool right_open = false;
  int lanes_left = 0;   // contiguous same-direction lanes on each side
  int lanes_right = 0;
  double time = 0.0;
  double dist_traveled = 0.0;

  const std::optional<Neighbor>& slot(Slot s) const { return neighbors[static_cast<int>(s)]; }
  std::optional<Neighbor>& slot(Slot s) { return neighbors[static_cast<int>(s)]; }
  double lane_center(int lane) const { return lane * lane_width; }
};

inline constexpr double kDefaultSensorRange = 100.0;

/// Observation from the ego's point of view.
Observation observe(const WorldState& world, double sensor_range = kDefaultSensorRange);
/// Observation from an arbitrary vehicle; used for slot-symmetry checks.
Observation observe_from(const WorldState& world, int vehicle_id,
                         double sensor_range = kDefaultSensorRange);

struct CollisionEvent {
  int other_id = 0;
  std::int64_t tick = 0;
};

std::optional<CollisionEvent> check_collision(const WorldState& world);
bool check_drivable(const WorldState& world);

/// Oriented-rectangle separating-axis overlap. Touching counts as overlap.
bool rectangles_overlap(const VehicleState& a, const VehicleState& b);

struct LeaderInfo {
  double gap = 0.0;
  double speed = 0.0;
};

double idm_acceleration(double speed, const std::optional<LeaderInfo>& leader,
                        const IdmParams& params);
/// Same-lane wrapper without ring wrap-around; gap is bumper to bumper.
double idm_acceleration(const VehicleState& follower, const std::optional<VehicleState>& leader,
                        const IdmParams& params);

}  // namespace scriptdrive::world
