#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "scriptdrive/world.hpp"

namespace scriptdrive::planners {

using world::ControlCommand;
using world::ControlLimits;
using world::Observation;
using world::Pose;

enum class AtomicBehavior { lane_keeping, left_lane_change, right_lane_change, accelerate, decelerate };

inline constexpr std::array<AtomicBehavior, 5> kAllBehaviors = {
    AtomicBehavior::lane_keeping, AtomicBehavior::left_lane_change,
    AtomicBehavior::right_lane_change, AtomicBehavior::accelerate, AtomicBehavior::decelerate};

std::string_view to_string(AtomicBehavior b);
std::optional<AtomicBehavior> behavior_from_string(std::string_view text);

class InfeasibleGoal : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SolverDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultHoldDuration = 5.0;
inline constexpr double kDefaultSpeedChangeFraction = 0.25;

struct PlannerGoal {
  AtomicBehavior behavior = AtomicBehavior::lane_keeping;
  std::optional<int> target_lane;
  std::optional<double> target_speed;
  double hold_duration = kDefaultHoldDuration;  // lane keeping completion

  bool operator==(const PlannerGoal&) const = default;
};

/// Resolves a behavior into a concrete goal against the current observation.
/// Lane changes target the adjacent lane; speed changes default to +/-25% of
/// the current speed, clamped to [0, speed_limit]. Throws InfeasibleGoal when
/// the road topology rules the behavior out.
PlannerGoal make_goal(AtomicBehavior behavior, const Observation& obs,
                      std::optional<double> target_speed = std::nullopt,
                      std::optional<double> hold_duration = std::nullopt);

struct PlannerConfig {
  int horizon_steps = 30;
  double dt = world::kDefaultDt;
  double wheelbase = 2.8;
  double w_y = 1.0;
  double w_v = 0.5;
  double w_heading = 2.0;
  double w_accel = 0.1;
  double w_steer = 5.0;
  double w_obstacle = 50.0;
  ControlLimits limits;
  int max_iterations = 5;
  double lane_change_duration = 4.0;
  double accel_ramp = 1.5;   // m/s^2 used for accelerate references
  double decel_ramp = 2.0;   // m/s^2 used for decelerate references
  double obstacle_min_gap = 2.0;
  double obstacle_headway = 0.6;  // s of leader speed added to the front buffer
  world::IdmParams idm;
};

struct ReferencePoint {
  double y = 0.0;
  double v = 0.0;
};

/// Reference for steps 1..horizon_steps.
std::vector<ReferencePoint> build_reference(const PlannerGoal& goal, const Observation& obs,
                                            const PlannerConfig& config);

/// Quintic smoothstep 10s^3 - 15s^4 + 6s^5 on [0,1]; zero slope and curvature at both ends.
double quintic_blend(double s);
double quintic_blend_inverse(double value);

/// Longitudinal interval [lo, hi] the ego center must avoid at one step.
/// `from_ahead` selects which side is penalized: a leader pushes the ego back
/// (penetration = x - lo), a follower pushes it forward (penetration = hi - x).
struct ObstacleInterval {
  double lo = 0.0;
  double hi = 0.0;
  double lateral_center = 0.0;
  double lateral_halfwidth = 0.0;  // ego y within center +/- this overlaps the lane
  bool from_ahead = true;
};

struct MpcProblem {
  Pose initial;
  std::vector<ReferencePoint> reference;  // size == horizon_steps
  double w_y = 1.0;
  double w_v = 0.5;
  double w_heading = 2.0;
  double w_accel = 0.1;
  double w_steer = 5.0;
  double w_obstacle = 50.0;
  ControlLimits limits;
  double wheelbase = 2.8;
  double dt = world::kDefaultDt;
  int max_iterations = 5;
  std::vector<std::vector<ObstacleInterval>> obstacles;  // per step 1..N, may be empty
  std::vector<ControlCommand> warm_start;                // empty = zeros

  int horizon() const { return static_cast<int>(reference.size()); }
};

MpcProblem make_problem(const Pose& initial, std::vector<ReferencePoint> reference,
                        const PlannerConfig& config);

struct Trajectory {
  int horizon_steps = 0;
  double dt = world::kDefaultDt;
  std::vector<Pose> poses;                   // horizon_steps + 1
  std::vector<ControlCommand> feedforward;   // horizon_steps
  double cost = 0.0;
  std::vector<double> iterate_costs;         // accepted iterates, starting at the warm start
  bool emergency = false;
};

double evaluate_cost(const MpcProblem& problem, const std::vector<Pose>& poses,
                     const std::vector<ControlCommand>& controls);
std::vector<Pose> rollout(const Pose& initial, const std::vector<ControlCommand>& controls,
                          double wheelbase, double dt);

Trajectory solve_mpc(const MpcProblem& problem);

/// Constant-velocity prediction of every observed neighbor as per-step intervals.
std::vector<std::vector<ObstacleInterval>> predict_obstacles(const Observation& obs,
                                                             const PlannerConfig& config);

/// Previous trajectory shifted one step, last command repeated, clamped to bounds.
std::vector<ControlCommand> shifted_warm_start(const Trajectory& previous,
                                               const ControlLimits& limits);

Trajectory plan(const PlannerGoal& goal, const Observation& obs,
                const std::optional<Trajectory>& previous, const PlannerConfig& config);
Trajectory plan(AtomicBehavior behavior, const Observation& obs,
                const std::optional<Trajectory>& previous, const PlannerConfig& config);

/// Full-braking, straight-wheel profile used when the solver diverges.
Trajectory emergency_trajectory(const Observation& obs, const PlannerConfig& config);

inline constexpr double kLaneCenterTolerance = 0.3;
inline constexpr double kHeadingTolerance = 0.05;
inline constexpr double kSpeedTolerance = 0.5;

/// Completion set of a behavior. `held_for` is the time the behavior has been
/// the active stage; lane keeping also needs the ego in its target lane.
bool completion_predicate(const PlannerGoal& goal, const Observation& obs, double held_for);

}  // namespace scriptdrive::planners
