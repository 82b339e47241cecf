#include "scriptdrive/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace scriptdrive::world {

namespace {

constexpr double kLateralMargin = 0.2;

struct Corners {
  std::array<double, 4> x;
  std::array<double, 4> y;
};

Corners footprint(const VehicleState& v, double x_shift = 0.0) {
  const double c = std::cos(v.heading);
  const double s = std::sin(v.heading);
  const double hl = 0.5 * v.length;
  const double hw = 0.5 * v.width;
  constexpr std::array<double, 4> sl = {1.0, 1.0, -1.0, -1.0};
  constexpr std::array<double, 4> sw = {1.0, -1.0, -1.0, 1.0};
  Corners out{};
  for (int i = 0; i < 4; ++i) {
    out.x[i] = v.x + x_shift + c * sl[i] * hl - s * sw[i] * hw;
    out.y[i] = v.y + s * sl[i] * hl + c * sw[i] * hw;
  }
  return out;
}

bool separated_on_axis(const Corners& a, const Corners& b, double ax, double ay) {
  double amin = std::numeric_limits<double>::infinity();
  double amax = -amin;
  double bmin = amin;
  double bmax = -amin;
  for (int i = 0; i < 4; ++i) {
    const double pa = a.x[i] * ax + a.y[i] * ay;
    const double pb = b.x[i] * ax + b.y[i] * ay;
    amin = std::min(amin, pa);
    amax = std::max(amax, pa);
    bmin = std::min(bmin, pb);
    bmax = std::max(bmax, pb);
  }
  // 1e-9 absorbs rounding in the corner rotation so exact contact still overlaps.
  return amax < bmin - 1e-9 || bmax < amin - 1e-9;
}

bool overlap_corners(const Corners& a, const Corners& b, double heading_a, double heading_b) {
  const std::array<double, 4> axes_heading = {heading_a, heading_a + M_PI_2, heading_b,
                                              heading_b + M_PI_2};
  for (double h : axes_heading) {
    if (separated_on_axis(a, b, std::cos(h), std::sin(h))) {
      return false;
    }
  }
  return true;
}

Neighbor make_neighbor(const VehicleState& self, const VehicleState& other, double dx, int lane) {
  Neighbor n;
  n.id = other.id;
  n.center_dx = dx;
  n.raw_gap = std::abs(dx) - 0.5 * (self.length + other.length);
  n.gap = std::max(0.0, n.raw_gap);
  n.neighbor_speed = other.longitudinal_speed();
  n.relative_speed = n.neighbor_speed - self.longitudinal_speed();
  n.length = other.length;
  n.width = other.width;
  n.lane = lane;
  return n;
}

}  // namespace

int RoadNetwork::direction(int lane) const {
  if (lane < 0 || lane >= static_cast<int>(lane_directions.size())) {
    return 1;
  }
  return lane_directions[lane] >= 0 ? 1 : -1;
}

int RoadNetwork::nearest_lane(double y) const {
  const int lane = static_cast<int>(std::lround(y / lane_width));
  return std::clamp(lane, 0, lane_count - 1);
}

double RoadNetwork::wrap_dx(double from, double to) const {
  double dx = std::fmod(to - from, segment_length);
  if (dx >= 0.5 * segment_length) {
    dx -= segment_length;
  } else if (dx < -0.5 * segment_length) {
    dx += segment_length;
  }
  return dx;
}

void RoadNetwork::validate() const {
  if (lane_count < 1) {
    throw std::invalid_argument("road: lane_count must be >= 1");
  }
  if (!(lane_width > 0.0)) {
    throw std::invalid_argument("road: lane_width must be > 0");
  }
  if (!(speed_limit > 0.0)) {
    throw std::invalid_argument("road: speed_limit must be > 0");
  }
  if (!(segment_length > 2.0 * kDefaultSensorRange)) {
    throw std::invalid_argument("road: segment_length must exceed twice the sensor range");
  }
  if (!lane_directions.empty() && static_cast<int>(lane_directions.size()) != lane_count) {
    throw std::invalid_argument("road: lane_directions must list one entry per lane");
  }
  for (int d : lane_directions) {
    if (d != 1 && d != -1) {
      throw std::invalid_argument("road: lane direction must be +1 or -1");
    }
  }
}

double VehicleState::longitudinal_speed() const { return speed * std::cos(heading); }

bool ControlCommand::within(const ControlLimits& limits) const {
  return acceleration >= limits.accel_min && acceleration <= limits.accel_max &&
         std::abs(steering_angle) <= limits.steer_max;
}

ControlCommand ControlCommand::clamped(const ControlLimits& limits) const {
  return {std::clamp(acceleration, limits.accel_min, limits.accel_max),
          std::clamp(steering_angle, -limits.steer_max, limits.steer_max)};
}

void WorldState::validate() const {
  road.validate();
  int egos = 0;
  for (const auto& v : vehicles) {
    if (v.kind == VehicleKind::ego) {
      ++egos;
    }
    if (v.speed < 0.0 || !(v.length > 0.0) || !(v.width > 0.0)) {
      throw std::invalid_argument("vehicle " + std::to_string(v.id) + ": invalid state");
    }
  }
  if (egos != 1 || vehicles.empty() || vehicles.front().kind != VehicleKind::ego) {
    throw std::invalid_argument("world must hold exactly one ego vehicle, stored first");
  }
}

Pose bicycle_step(const Pose& pose, const ControlCommand& cmd, double wheelbase, double dt) {
  Pose next;
  next.x = pose.x + pose.speed * std::cos(pose.heading) * dt;
  next.y = pose.y + pose.speed * std::sin(pose.heading) * dt;
  next.heading = pose.heading + pose.speed / wheelbase * std::tan(cmd.steering_angle) * dt;
  next.speed = std::max(0.0, pose.speed + cmd.acceleration * dt);
  return next;
}

WorldState step_world(const WorldState& world, const ControlCommand& ego_cmd, double dt) {
  WorldState next = world;
  const RoadNetwork& road = world.road;

  const ControlCommand cmd = ego_cmd.clamped(world.limits);
  next.last_command_saturated = !ego_cmd.within(world.limits);

  const VehicleState& ego = world.ego();
  const Pose ego_next = bicycle_step({ego.x, ego.y, ego.heading, ego.speed}, cmd,
                                     world.ego_geometry.wheelbase, dt);
  next.ego().x = ego_next.x;
  next.ego().y = ego_next.y;
  next.ego().heading = ego_next.heading;
  next.ego().speed = ego_next.speed;
  next.ego_distance = world.ego_distance + (ego_next.x - ego.x);

  for (std::size_t i = 1; i < world.vehicles.size(); ++i) {
    const VehicleState& self = world.vehicles[i];
    const int lane = road.nearest_lane(self.y);
    const int dir = road.direction(lane);

    std::optional<LeaderInfo> leader;
    for (std::size_t j = 0; j < world.vehicles.size(); ++j) {
      if (j == i) {
        continue;
      }
      const VehicleState& other = world.vehicles[j];
      if (std::abs(other.y - self.y) >= 0.5 * (self.width + other.width) + kLateralMargin) {
        continue;
      }
      const double ahead = dir * road.wrap_dx(self.x, other.x);
      if (ahead <= 0.0) {
        continue;
      }
      const double gap = ahead - 0.5 * (self.length + other.length);
      if (!leader || gap < leader->gap) {
        leader = LeaderInfo{gap, dir * other.longitudinal_speed()};
      }
    }

    IdmParams params = world.idm;
    params.desired_speed = self.desired_speed > 0.0 ? self.desired_speed : road.speed_limit;
    const double accel = idm_acceleration(self.speed, leader, params);

    VehicleState& out = next.vehicles[i];
    double travel = 0.0;
    const double v_new = self.speed + accel * dt;
    if (v_new < 0.0) {
      travel = accel < 0.0 ? -self.speed * self.speed / (2.0 * accel) : 0.0;
      out.speed = 0.0;
    } else {
      travel = self.speed * dt + 0.5 * accel * dt * dt;
      out.speed = v_new;
    }
    double x = self.x + dir * travel;
    x = std::fmod(x, road.segment_length);
    if (x < 0.0) {
      x += road.segment_length;
    }
    out.x = x;
  }

  next.tick = world.tick + 1;
  next.time = static_cast<double>(next.tick) * dt;
  return next;
}

std::string to_string(Slot slot) {
  switch (slot) {
    case Slot::front: return "front";
    case Slot::rear: return "rear";
    case Slot::left_front: return "left_front";
    case Slot::left_rear: return "left_rear";
    case Slot::right_front: return "right_front";
    case Slot::right_rear: return "right_rear";
  }
  return "?";
}

Observation observe_from(const WorldState& world, int vehicle_id, double sensor_range) {
  const RoadNetwork& road = world.road;
  const auto self_it = std::find_if(world.vehicles.begin(), world.vehicles.end(),
                                    [&](const VehicleState& v) { return v.id == vehicle_id; });
  if (self_it == world.vehicles.end()) {
    throw std::invalid_argument("observe: unknown vehicle id " + std::to_string(vehicle_id));
  }
  const VehicleState& self = *self_it;

  Observation obs;
  obs.ego = self;
  obs.lane_index = road.nearest_lane(self.y);
  obs.lane_count = road.lane_count;
  obs.lane_width = road.lane_width;
  obs.speed_limit = road.speed_limit;
  obs.sensor_range = sensor_range;
  obs.time = world.time;
  obs.dist_traveled = self.kind == VehicleKind::ego ? world.ego_distance : 0.0;
  const int dir = road.direction(obs.lane_index);
  obs.left_open = obs.lane_index + 1 < road.lane_count && road.direction(obs.lane_index + 1) == dir;
  obs.right_open = obs.lane_index > 0 && road.direction(obs.lane_index - 1) == dir;
  for (int l = obs.lane_index + 1; l < road.lane_count && road.direction(l) == dir; ++l) {
    ++obs.lanes_left;
  }
  for (int l = obs.lane_index - 1; l >= 0 && road.direction(l) == dir; --l) {
    ++obs.lanes_right;
  }

  for (const VehicleState& other : world.vehicles) {
    if (other.id == self.id) {
      continue;
    }
    const int lane = road.nearest_lane(other.y);
    const int offset = lane - obs.lane_index;
    if (offset < -1 || offset > 1) {
      continue;
    }
    const double dx = road.wrap_dx(self.x, other.x);
    const Neighbor n = make_neighbor(self, other, dx, lane);
    if (n.gap > sensor_range) {
      continue;
    }
    const bool ahead = dx >= 0.0;
    Slot slot = Slot::front;
    if (offset == 0) {
      slot = ahead ? Slot::front : Slot::rear;
    } else if (offset == 1) {
      slot = ahead ? Slot::left_front : Slot::left_rear;
    } else {
      slot = ahead ? Slot::right_front : Slot::right_rear;
    }
    auto& current = obs.slot(slot);
    if (!current || n.gap < current->gap || (n.gap == current->gap && n.id < current->id)) {
      current = n;
    }
  }
  return obs;
}

Observation observe(const WorldState& world, double sensor_range) {
  return observe_from(world, world.ego().id, sensor_range);
}

bool rectangles_overlap(const VehicleState& a, const VehicleState& b) {
  return overlap_corners(footprint(a), footprint(b), a.heading, b.heading);
}

std::optional<CollisionEvent> check_collision(const WorldState& world) {
  const VehicleState& ego = world.ego();
  const Corners ego_corners = footprint(ego);
  for (std::size_t i = 1; i < world.vehicles.size(); ++i) {
    const VehicleState& other = world.vehicles[i];
    // Place the other vehicle at its ring image nearest the ego.
    const double shift = ego.x + world.road.wrap_dx(ego.x, other.x) - other.x;
    if (overlap_corners(ego_corners, footprint(other, shift), ego.heading, other.heading)) {
      return CollisionEvent{other.id, world.tick};
    }
  }
  return std::nullopt;
}

bool check_drivable(const WorldState& world) {
  const Corners c = footprint(world.ego());
  const double lo = world.road.right_edge();
  const double hi = world.road.left_edge();
  for (double y : c.y) {
    if (y < lo || y > hi) {
      return false;
    }
  }
  return true;
}

double idm_acceleration(double speed, const std::optional<LeaderInfo>& leader,
                        const IdmParams& params) {
  const double free_term = 1.0 - std::pow(speed / params.desired_speed, params.exponent);
  if (!leader) {
    return std::max(-params.max_decel, params.max_accel * free_term);
  }
  if (leader->gap <= 0.0) {
    return -params.max_decel;
  }
  const double dv = speed - leader->speed;
  const double s_star =
      params.min_gap + std::max(0.0, speed * params.time_headway +
                                         speed * dv / (2.0 * std::sqrt(params.max_accel *
                                                                       params.comfort_decel)));
  const double interaction = (s_star / leader->gap) * (s_star / leader->gap);
  return std::max(-params.max_decel, params.max_accel * (free_term - interaction));
}

double idm_acceleration(const VehicleState& follower, const std::optional<VehicleState>& leader,
                        const IdmParams& params) {
  if (!leader) {
    return idm_acceleration(follower.speed, std::nullopt, params);
  }
  const double gap = (leader->x - follower.x) - 0.5 * (leader->length + follower.length);
  return idm_acceleration(follower.speed, LeaderInfo{gap, leader->longitudinal_speed()}, params);
}

}  // namespace scriptdrive::world
