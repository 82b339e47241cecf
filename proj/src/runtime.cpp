#include "scriptdrive/runtime.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "yaml_util.hpp"

namespace scriptdrive::runtime {

namespace {

using detail::get_or;

void read_limits(const YAML::Node& node, world::ControlLimits& limits, const std::string& origin) {
  detail::require_map<ConfigError>(node, origin, "limits");
  detail::reject_unknown_keys<ConfigError>(node, origin, {"accel_min", "accel_max", "steer_max"});
  limits.accel_min = get_or<double, ConfigError>(node, "accel_min", limits.accel_min, origin);
  limits.accel_max = get_or<double, ConfigError>(node, "accel_max", limits.accel_max, origin);
  limits.steer_max = get_or<double, ConfigError>(node, "steer_max", limits.steer_max, origin);
  if (!(limits.accel_min < 0.0 && limits.accel_max > 0.0 && limits.steer_max > 0.0)) {
    throw ConfigError(detail::where(origin, node) + ": limits must bracket zero");
  }
}

Eigen::Vector2d read_pair(const YAML::Node& parent, const char* key, Eigen::Vector2d fallback,
                          const std::string& origin) {
  if (!parent[key]) {
    return fallback;
  }
  const auto v = detail::get<std::vector<double>, ConfigError>(parent, key, origin);
  if (v.size() != 2 || v[0] < 0.0 || v[1] < 0.0) {
    throw ConfigError(detail::where(origin, parent[key]) + ": '" + key +
                      "' must be two non-negative numbers");
  }
  return {v[0], v[1]};
}

}  // namespace

ControllerConfig parse_controller_config(std::string_view text, const std::string& origin) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  ControllerConfig cfg;
  if (root.IsNull()) {
    return cfg;
  }
  detail::require_map<ConfigError>(root, origin, "planner config");
  detail::reject_unknown_keys<ConfigError>(root, origin, {"planner", "control"});

  if (const YAML::Node p = root["planner"]) {
    detail::require_map<ConfigError>(p, origin, "planner");
    detail::reject_unknown_keys<ConfigError>(
        p, origin,
        {"horizon_steps", "dt", "wheelbase", "weights", "limits", "max_iterations",
         "lane_change_duration", "accel_ramp", "decel_ramp", "obstacle_min_gap",
         "obstacle_headway"});
    auto& pc = cfg.planner;
    pc.horizon_steps = get_or<int, ConfigError>(p, "horizon_steps", pc.horizon_steps, origin);
    pc.dt = get_or<double, ConfigError>(p, "dt", pc.dt, origin);
    pc.wheelbase = get_or<double, ConfigError>(p, "wheelbase", pc.wheelbase, origin);
    pc.max_iterations = get_or<int, ConfigError>(p, "max_iterations", pc.max_iterations, origin);
    pc.lane_change_duration =
        get_or<double, ConfigError>(p, "lane_change_duration", pc.lane_change_duration, origin);
    pc.accel_ramp = get_or<double, ConfigError>(p, "accel_ramp", pc.accel_ramp, origin);
    pc.decel_ramp = get_or<double, ConfigError>(p, "decel_ramp", pc.decel_ramp, origin);
    pc.obstacle_min_gap =
        get_or<double, ConfigError>(p, "obstacle_min_gap", pc.obstacle_min_gap, origin);
    pc.obstacle_headway =
        get_or<double, ConfigError>(p, "obstacle_headway", pc.obstacle_headway, origin);
    if (const YAML::Node w = p["weights"]) {
      detail::require_map<ConfigError>(w, origin, "weights");
      detail::reject_unknown_keys<ConfigError>(
          w, origin, {"lateral", "speed", "heading", "accel", "steer", "obstacle"});
      pc.w_y = get_or<double, ConfigError>(w, "lateral", pc.w_y, origin);
      pc.w_v = get_or<double, ConfigError>(w, "speed", pc.w_v, origin);
      pc.w_heading = get_or<double, ConfigError>(w, "heading", pc.w_heading, origin);
      pc.w_accel = get_or<double, ConfigError>(w, "accel", pc.w_accel, origin);
      pc.w_steer = get_or<double, ConfigError>(w, "steer", pc.w_steer, origin);
      pc.w_obstacle = get_or<double, ConfigError>(w, "obstacle", pc.w_obstacle, origin);
      for (double x : {pc.w_y, pc.w_v, pc.w_heading, pc.w_accel, pc.w_steer, pc.w_obstacle}) {
        if (!(x >= 0.0)) {
          throw ConfigError(detail::where(origin, w) + ": weights must be non-negative");
        }
      }
    }
    if (const YAML::Node l = p["limits"]) {
      read_limits(l, pc.limits, origin);
    }
    if (pc.horizon_steps < 1 || !(pc.dt > 0.0) || !(pc.wheelbase > 0.0) ||
        pc.max_iterations < 1 || !(pc.lane_change_duration > 0.0)) {
      throw ConfigError(detail::where(origin, p) + ": planner values out of range");
    }
  }

  cfg.lqr.dt = cfg.planner.dt;
  cfg.lqr.wheelbase = cfg.planner.wheelbase;
  cfg.lqr.limits = cfg.planner.limits;
  if (const YAML::Node c = root["control"]) {
    detail::require_map<ConfigError>(c, origin, "control");
    detail::reject_unknown_keys<ConfigError>(c, origin, {"q_lateral", "r_lateral",
                                                         "q_longitudinal", "r_longitudinal"});
    cfg.lqr.q_lat = read_pair(c, "q_lateral", cfg.lqr.q_lat, origin);
    cfg.lqr.q_lon = read_pair(c, "q_longitudinal", cfg.lqr.q_lon, origin);
    cfg.lqr.r_lat = get_or<double, ConfigError>(c, "r_lateral", cfg.lqr.r_lat, origin);
    cfg.lqr.r_lon = get_or<double, ConfigError>(c, "r_longitudinal", cfg.lqr.r_lon, origin);
    if (!(cfg.lqr.r_lat > 0.0) || !(cfg.lqr.r_lon > 0.0)) {
      throw ConfigError(detail::where(origin, c) + ": R weights must be positive");
    }
  }
  return cfg;
}

ControllerConfig load_controller_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError(path + ": cannot open");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_controller_config(buffer.str(), path);
}

EgoController::EgoController(ControllerConfig config)
    : config_(std::move(config)), tracker_(config_.lqr) {}

world::ControlCommand EgoController::step(const planners::PlannerGoal& goal,
                                          const world::Observation& obs) {
  planners::Trajectory traj;
  try {
    traj = planners::plan(goal, obs, previous_, config_.planner);
  } catch (const planners::SolverDiverged&) {
    traj = planners::emergency_trajectory(obs, config_.planner);
    ++emergencies_;
  }
  previous_ = std::move(traj);
  return tracker_.track(*previous_, obs.ego, 0);
}

TickRecord make_record(const world::WorldState& w, const world::Observation& obs,
                       bool keep_vehicles) {
  TickRecord r;
  r.tick = w.tick;
  r.time = w.time;
  r.ego = w.ego();
  r.lane_index = obs.lane_index;
  r.lane_direction = w.road.direction(obs.lane_index);
  r.speed_limit = w.road.speed_limit;
  r.front = obs.slot(world::Slot::front);
  r.distance = w.ego_distance;
  r.drivable = world::check_drivable(w);
  if (keep_vehicles) {
    r.vehicles = w.vehicles;
  }
  return r;
}

bool center_off_road(const world::WorldState& w) {
  const double y = w.ego().y;
  return y < w.road.right_edge() || y > w.road.left_edge();
}

StepOutcome advance(world::WorldState& w, const world::ControlCommand& cmd, double dt) {
  w = world::step_world(w, cmd, dt);
  StepOutcome out;
  out.collision = world::check_collision(w);
  out.collided = out.collision.has_value();
  out.drivable = world::check_drivable(w);
  return out;
}

}  // namespace scriptdrive::runtime
