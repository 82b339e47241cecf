#include <doctest.h>

#include <cmath>

#include "scriptdrive/planners.hpp"
#include "testkit.hpp"

using namespace scriptdrive::planners;
using scriptdrive::world::Neighbor;
using scriptdrive::world::Slot;

namespace {

Observation cruising(double speed = 10.0, int lane = 1, int lanes = 3) {
  Observation obs;
  obs.ego.kind = scriptdrive::world::VehicleKind::ego;
  obs.ego.speed = speed;
  obs.ego.y = lane * 3.5;
  obs.lane_index = lane;
  obs.lane_count = lanes;
  obs.speed_limit = 15.0;
  obs.left_open = lane + 1 < lanes;
  obs.right_open = lane > 0;
  return obs;
}

}  // namespace

TEST_CASE("mpc stays put on a reference it already satisfies") {
  CHECK(testkit::mpc_fixed_point_cost() < 1e-6);

  PlannerConfig cfg;
  const std::vector<ReferencePoint> ref(cfg.horizon_steps, {0.0, 8.0});
  const Trajectory t = solve_mpc(make_problem({0.0, 0.0, 0.0, 8.0}, ref, cfg));
  for (const auto& u : t.feedforward) {
    CHECK(std::abs(u.acceleration) < 1e-6);
    CHECK(std::abs(u.steering_angle) < 1e-6);
  }
}

TEST_CASE("mpc horizon 1 matches the analytic minimizer") {
  PlannerConfig cfg;
  cfg.horizon_steps = 1;
  cfg.max_iterations = 50;
  const double v = 10.0, rv = 11.0;
  MpcProblem pr = make_problem({0.0, 0.0, 0.0, v}, {{0.0, rv}}, cfg);
  const Trajectory t = solve_mpc(pr);
  // Speed part: w_a a^2 + w_v (v + a dt - rv)^2.
  const double a_star = cfg.w_v * cfg.dt * (rv - v) / (cfg.w_accel + cfg.w_v * cfg.dt * cfg.dt);
  // The backward pass adds a small damping term, hence the looser match.
  CHECK(t.feedforward[0].acceleration == doctest::Approx(std::min(a_star, cfg.limits.accel_max)).epsilon(1e-4));
  CHECK(std::abs(t.feedforward[0].steering_angle) < 1e-9);

  // Heading part with an initial heading: brute-force the scalar steering cost.
  pr = make_problem({0.0, 0.0, 0.05, v}, {{0.0, v}}, cfg);
  const Trajectory h = solve_mpc(pr);
  double best_delta = 0.0, best_cost = 1e300;
  for (int i = -60000; i <= 60000; ++i) {
    const double d = i * 1e-5;
    const std::vector<ControlCommand> u{{0.0, d}};
    const double c = evaluate_cost(pr, rollout(pr.initial, u, pr.wheelbase, pr.dt), u);
    if (c < best_cost) {
      best_cost = c;
      best_delta = d;
    }
  }
  CHECK(h.feedforward[0].steering_angle == doctest::Approx(best_delta).epsilon(1e-4));
  CHECK(h.cost <= best_cost + 1e-9);
}

TEST_CASE("mpc respects the control box and re-integrates exactly") {
  PlannerConfig cfg;
  const std::vector<ReferencePoint> ref(cfg.horizon_steps, {7.0, 30.0});
  const Trajectory t = solve_mpc(make_problem({0.0, 0.0, 0.0, 5.0}, ref, cfg));
  for (const auto& u : t.feedforward) {
    CHECK(u.within(cfg.limits));
  }
  REQUIRE(t.iterate_costs.size() >= 2);
  for (std::size_t i = 1; i < t.iterate_costs.size(); ++i) {
    CHECK(t.iterate_costs[i] <= t.iterate_costs[i - 1]);
  }
  CHECK(testkit::mpc_reintegration_error(50, 3) < 1e-6);
}

TEST_CASE("goals resolve against the observation") {
  const Observation obs = cruising(12.0, 1);
  CHECK(make_goal(AtomicBehavior::left_lane_change, obs).target_lane == 2);
  CHECK(make_goal(AtomicBehavior::right_lane_change, obs).target_lane == 0);
  CHECK(*make_goal(AtomicBehavior::accelerate, obs).target_speed == doctest::Approx(15.0));  // clamped
  CHECK(*make_goal(AtomicBehavior::decelerate, obs).target_speed == doctest::Approx(9.0));
  CHECK(*make_goal(AtomicBehavior::decelerate, obs, 0.0).target_speed == 0.0);
  CHECK_THROWS_AS(make_goal(AtomicBehavior::left_lane_change, cruising(10.0, 2)), InfeasibleGoal);
  CHECK_THROWS_AS(make_goal(AtomicBehavior::right_lane_change, cruising(10.0, 0)), InfeasibleGoal);
}

TEST_CASE("completion sets") {
  Observation obs = cruising(10.0, 2);
  PlannerGoal lc{AtomicBehavior::left_lane_change, 2, std::nullopt};
  CHECK(completion_predicate(lc, obs, 0.0));
  obs.ego.y = 7.0 + 0.31;
  CHECK_FALSE(completion_predicate(lc, obs, 0.0));
  obs.ego.y = 7.0;
  obs.ego.heading = 0.06;
  CHECK_FALSE(completion_predicate(lc, obs, 0.0));

  PlannerGoal keep{AtomicBehavior::lane_keeping, 2, std::nullopt};
  obs.ego.heading = 0.0;
  CHECK_FALSE(completion_predicate(keep, obs, 4.9));
  CHECK(completion_predicate(keep, obs, 5.0));
  obs.lane_index = 1;
  CHECK_FALSE(completion_predicate(keep, obs, 9.0));

  PlannerGoal acc{AtomicBehavior::accelerate, std::nullopt, 12.0};
  obs.ego.speed = 11.6;
  CHECK(completion_predicate(acc, obs, 0.0));
  obs.ego.speed = 11.4;
  CHECK_FALSE(completion_predicate(acc, obs, 0.0));
}

TEST_CASE("lane change reference is a quintic between lane centers") {
  PlannerConfig cfg;
  const Observation obs = cruising(10.0, 1);
  const auto ref = build_reference(make_goal(AtomicBehavior::left_lane_change, obs), obs, cfg);
  REQUIRE(ref.size() == static_cast<std::size_t>(cfg.horizon_steps));
  for (int k = 0; k < cfg.horizon_steps; ++k) {
    const double s = (k + 1) * cfg.dt / cfg.lane_change_duration;
    CHECK(ref[k].y == doctest::Approx(3.5 + 3.5 * (10 * s * s * s - 15 * s * s * s * s + 6 * s * s * s * s * s)));
    CHECK(ref[k].v <= 10.0);
  }
  CHECK(quintic_blend(0.0) == 0.0);
  CHECK(quintic_blend(1.0) == 1.0);
  for (double v : {0.1, 0.37, 0.5, 0.93}) {
    CHECK(quintic_blend(quintic_blend_inverse(v)) == doctest::Approx(v).epsilon(1e-9));
  }
}

TEST_CASE("lane keeping slows for a stopped leader") {
  PlannerConfig cfg;
  Observation obs = cruising(10.0, 1);
  const auto free_ref = build_reference(make_goal(AtomicBehavior::lane_keeping, obs), obs, cfg);
  CHECK(free_ref[0].v == doctest::Approx(15.0));
  Neighbor lead;
  lead.gap = 8.0;
  lead.relative_speed = -10.0;
  lead.neighbor_speed = 0.0;
  lead.lane = 1;
  lead.center_dx = 13.0;
  obs.slot(Slot::front) = lead;
  const auto ref = build_reference(make_goal(AtomicBehavior::lane_keeping, obs), obs, cfg);
  CHECK(ref[0].v < 10.0);
}

TEST_CASE("warm start shifts by one step and the emergency profile brakes straight") {
  PlannerConfig cfg;
  Trajectory prev;
  prev.horizon_steps = 3;
  prev.feedforward = {{1.0, 0.1}, {2.0, 0.2}, {9.0, 0.9}};
  const auto ws = shifted_warm_start(prev, cfg.limits);
  REQUIRE(ws.size() == 3);
  CHECK(ws[0].acceleration == 2.0);
  CHECK(ws[1].acceleration == cfg.limits.accel_max);
  CHECK(ws[2].steering_angle == cfg.limits.steer_max);

  const Trajectory e = emergency_trajectory(cruising(), cfg);
  CHECK(e.emergency);
  for (const auto& u : e.feedforward) {
    CHECK(u.acceleration == cfg.limits.accel_min);
    CHECK(u.steering_angle == 0.0);
  }
}
