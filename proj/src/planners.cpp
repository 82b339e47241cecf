#include "scriptdrive/planners.hpp"

#include <algorithm>
#include <cmath>

namespace scriptdrive::planners {

std::string_view to_string(AtomicBehavior b) {
  switch (b) {
    case AtomicBehavior::lane_keeping: return "lane_keeping";
    case AtomicBehavior::left_lane_change: return "left_lane_change";
    case AtomicBehavior::right_lane_change: return "right_lane_change";
    case AtomicBehavior::accelerate: return "accelerate";
    case AtomicBehavior::decelerate: return "decelerate";
  }
  return "?";
}

std::optional<AtomicBehavior> behavior_from_string(std::string_view text) {
  for (AtomicBehavior b : kAllBehaviors) {
    if (to_string(b) == text) {
      return b;
    }
  }
  return std::nullopt;
}

PlannerGoal make_goal(AtomicBehavior behavior, const Observation& obs,
                      std::optional<double> target_speed, std::optional<double> hold_duration) {
  PlannerGoal goal;
  goal.behavior = behavior;
  goal.hold_duration = hold_duration.value_or(kDefaultHoldDuration);
  const double v = obs.ego.speed;
  switch (behavior) {
    case AtomicBehavior::lane_keeping:
      goal.target_lane = obs.lane_index;
      break;
    case AtomicBehavior::left_lane_change:
      if (!obs.left_open) {
        throw InfeasibleGoal("left_lane_change: no same-direction lane to the left of lane " +
                             std::to_string(obs.lane_index));
      }
      goal.target_lane = obs.lane_index + 1;
      break;
    case AtomicBehavior::right_lane_change:
      if (!obs.right_open) {
        throw InfeasibleGoal("right_lane_change: no same-direction lane to the right of lane " +
                             std::to_string(obs.lane_index));
      }
      goal.target_lane = obs.lane_index - 1;
      break;
    case AtomicBehavior::accelerate:
      goal.target_speed = target_speed.value_or(v * (1.0 + kDefaultSpeedChangeFraction));
      break;
    case AtomicBehavior::decelerate:
      goal.target_speed = target_speed.value_or(v * (1.0 - kDefaultSpeedChangeFraction));
      break;
  }
  if (goal.target_speed) {
    goal.target_speed = std::clamp(*goal.target_speed, 0.0, obs.speed_limit);
  }
  return goal;
}

double quintic_blend(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
}

double quintic_blend_inverse(double value) {
  if (value <= 0.0) {
    return 0.0;
  }
  if (value >= 1.0) {
    return 1.0;
  }
  double lo = 0.0;
  double hi = 1.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (quintic_blend(mid) < value ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

namespace {

std::optional<world::Neighbor> leader_in_lane(const Observation& obs, int lane) {
  std::optional<world::Neighbor> best;
  for (const auto& n : obs.neighbors) {
    if (n && n->lane == lane && n->center_dx >= 0.0 && (!best || n->gap < best->gap)) {
      best = n;
    }
  }
  return best;
}

/// Largest speed at which IDM would not brake for the given leader.
double idm_safe_speed(const Observation& obs, int lane, const PlannerConfig& config) {
  const auto leader = leader_in_lane(obs, lane);
  if (!leader) {
    return obs.speed_limit;
  }
  world::IdmParams params = config.idm;
  params.desired_speed = obs.speed_limit;
  const world::LeaderInfo info{leader->gap, leader->neighbor_speed};
  auto accel = [&](double v) { return world::idm_acceleration(v, info, params); };
  if (accel(obs.speed_limit) >= 0.0) {
    return obs.speed_limit;
  }
  if (accel(0.0) < 0.0) {
    return 0.0;
  }
  double lo = 0.0;
  double hi = obs.speed_limit;
  for (int i = 0; i < 50; ++i) {
    const double mid = 0.5 * (lo + hi);
    (accel(mid) >= 0.0 ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace

std::vector<ReferencePoint> build_reference(const PlannerGoal& goal, const Observation& obs,
                                            const PlannerConfig& config) {
  const int n = config.horizon_steps;
  const double dt = config.dt;
  const double v0 = obs.ego.speed;
  std::vector<ReferencePoint> ref(n);

  switch (goal.behavior) {
    case AtomicBehavior::lane_keeping: {
      const int lane = goal.target_lane.value_or(obs.lane_index);
      const double v_ref = std::min(obs.speed_limit, idm_safe_speed(obs, lane, config));
      for (auto& r : ref) {
        r = {obs.lane_center(lane), v_ref};
      }
      break;
    }
    case AtomicBehavior::left_lane_change:
    case AtomicBehavior::right_lane_change: {
      const bool left = goal.behavior == AtomicBehavior::left_lane_change;
      if (!goal.target_lane || *goal.target_lane < 0 || *goal.target_lane >= obs.lane_count) {
        throw InfeasibleGoal(std::string(to_string(goal.behavior)) + ": target lane off the road");
      }
      const int target = *goal.target_lane;
      const int origin = left ? target - 1 : target + 1;
      const double y0 = obs.lane_center(origin);
      const double y1 = obs.lane_center(target);
      const double progress = quintic_blend_inverse((obs.ego.y - y0) / (y1 - y0));
      const double tau0 = progress * config.lane_change_duration;
      const double v_ref = std::min({obs.speed_limit, v0, idm_safe_speed(obs, origin, config),
                                     idm_safe_speed(obs, target, config)});
      for (int k = 0; k < n; ++k) {
        const double s = (tau0 + (k + 1) * dt) / config.lane_change_duration;
        ref[k] = {y0 + (y1 - y0) * quintic_blend(s), v_ref};
      }
      break;
    }
    case AtomicBehavior::accelerate:
    case AtomicBehavior::decelerate: {
      const double target = goal.target_speed.value_or(v0);
      const double y_ref = obs.lane_center(obs.lane_index);
      for (int k = 0; k < n; ++k) {
        const double t = (k + 1) * dt;
        const double v_ref = target >= v0 ? std::min(target, v0 + config.accel_ramp * t)
                                          : std::max(target, v0 - config.decel_ramp * t);
        ref[k] = {y_ref, v_ref};
      }
      break;
    }
  }
  return ref;
}

MpcProblem make_problem(const Pose& initial, std::vector<ReferencePoint> reference,
                        const PlannerConfig& config) {
  MpcProblem p;
  p.initial = initial;
  p.reference = std::move(reference);
  p.w_y = config.w_y;
  p.w_v = config.w_v;
  p.w_heading = config.w_heading;
  p.w_accel = config.w_accel;
  p.w_steer = config.w_steer;
  p.w_obstacle = config.w_obstacle;
  p.limits = config.limits;
  p.wheelbase = config.wheelbase;
  p.dt = config.dt;
  p.max_iterations = config.max_iterations;
  return p;
}

std::vector<std::vector<ObstacleInterval>> predict_obstacles(const Observation& obs,
                                                             const PlannerConfig& config) {
  std::vector<std::vector<ObstacleInterval>> out(config.horizon_steps);
  for (const auto& slot : obs.neighbors) {
    if (!slot) {
      continue;
    }
    const world::Neighbor& n = *slot;
    const bool ahead = n.center_dx >= 0.0;
    if (!ahead && n.lane == obs.lane_index) {
      continue;  // same-lane followers are left to their own car-following
    }
    const double half = 0.5 * (obs.ego.length + n.length);
    for (int k = 0; k < config.horizon_steps; ++k) {
      const double t = (k + 1) * config.dt;
      const double center = obs.ego.x + n.center_dx + n.neighbor_speed * t;
      ObstacleInterval iv;
      iv.lateral_center = obs.lane_center(n.lane);
      iv.lateral_halfwidth = 0.5 * (obs.ego.width + n.width) + 0.2;
      iv.from_ahead = ahead;
      if (ahead) {
        const double buffer =
            config.obstacle_min_gap + config.obstacle_headway * std::max(0.0, n.neighbor_speed);
        iv.lo = center - half - buffer;
        iv.hi = center + half;
      } else {
        iv.lo = center - half;
        iv.hi = center + half + config.obstacle_min_gap;
      }
      out[k].push_back(iv);
    }
  }
  return out;
}

std::vector<ControlCommand> shifted_warm_start(const Trajectory& previous,
                                               const ControlLimits& limits) {
  std::vector<ControlCommand> out;
  if (previous.feedforward.empty()) {
    return out;
  }
  out.assign(previous.feedforward.begin() + 1, previous.feedforward.end());
  out.push_back(previous.feedforward.back());
  for (auto& u : out) {
    u = u.clamped(limits);
  }
  return out;
}

Trajectory emergency_trajectory(const Observation& obs, const PlannerConfig& config) {
  Trajectory traj;
  traj.horizon_steps = config.horizon_steps;
  traj.dt = config.dt;
  traj.emergency = true;
  traj.feedforward.assign(config.horizon_steps, ControlCommand{config.limits.accel_min, 0.0});
  traj.poses = rollout({obs.ego.x, obs.ego.y, obs.ego.heading, obs.ego.speed}, traj.feedforward,
                       config.wheelbase, config.dt);
  return traj;
}

Trajectory plan(const PlannerGoal& goal, const Observation& obs,
                const std::optional<Trajectory>& previous, const PlannerConfig& config) {
  MpcProblem problem = make_problem({obs.ego.x, obs.ego.y, obs.ego.heading, obs.ego.speed},
                                    build_reference(goal, obs, config), config);
  problem.obstacles = predict_obstacles(obs, config);
  if (previous && !previous->emergency) {
    problem.warm_start = shifted_warm_start(*previous, config.limits);
  }
  return solve_mpc(problem);
}

Trajectory plan(AtomicBehavior behavior, const Observation& obs,
                const std::optional<Trajectory>& previous, const PlannerConfig& config) {
  return plan(make_goal(behavior, obs), obs, previous, config);
}

bool completion_predicate(const PlannerGoal& goal, const Observation& obs, double held_for) {
  switch (goal.behavior) {
    case AtomicBehavior::lane_keeping:
      return held_for >= goal.hold_duration &&
             (!goal.target_lane || obs.lane_index == *goal.target_lane);
    case AtomicBehavior::left_lane_change:
    case AtomicBehavior::right_lane_change:
      return goal.target_lane &&
             std::abs(obs.ego.y - obs.lane_center(*goal.target_lane)) < kLaneCenterTolerance &&
             std::abs(obs.ego.heading) < kHeadingTolerance;
    case AtomicBehavior::accelerate:
    case AtomicBehavior::decelerate:
      return goal.target_speed && std::abs(obs.ego.speed - *goal.target_speed) < kSpeedTolerance;
  }
  return false;
}

}  // namespace scriptdrive::planners
