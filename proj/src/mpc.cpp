// Box-constrained iterative LQR over the kinematic bicycle model.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <utility>

#include "scriptdrive/planners.hpp"

namespace scriptdrive::planners {

namespace {

using Vec4 = Eigen::Vector4d;
using Vec2 = Eigen::Vector2d;
using Mat4 = Eigen::Matrix4d;
using Mat2 = Eigen::Matrix2d;
using Mat42 = Eigen::Matrix<double, 4, 2>;
using Mat24 = Eigen::Matrix<double, 2, 4>;

// State layout: x, y, heading, speed. Control layout: accel, steer.

double obstacle_penetration(const ObstacleInterval& iv, const Pose& p) {
  if (p.x < iv.lo || p.x > iv.hi) {
    return 0.0;
  }
  return iv.from_ahead ? p.x - iv.lo : iv.hi - p.x;
}

constexpr double kLateralRamp = 0.5;

/// Lateral weight of an interval: 1 well inside, fading to 0 at the edge so
/// the penalty stays continuous in y. Also returns d(weight)/dy.
std::pair<double, double> lateral_weight(const ObstacleInterval& iv, const Pose& p) {
  const double dy = p.y - iv.lateral_center;
  const double ramp = std::min(kLateralRamp, iv.lateral_halfwidth);
  const double s = (iv.lateral_halfwidth - std::abs(dy)) / ramp;
  if (s <= 0.0) {
    return {0.0, 0.0};
  }
  if (s >= 1.0) {
    return {1.0, 0.0};
  }
  return {s * s, -2.0 * s / ramp * (dy > 0.0 ? 1.0 : -1.0)};
}

double state_cost(const MpcProblem& pr, int k, const Pose& p) {
  const ReferencePoint& r = pr.reference[k];
  double c = pr.w_y * (p.y - r.y) * (p.y - r.y) + pr.w_v * (p.speed - r.v) * (p.speed - r.v) +
             pr.w_heading * p.heading * p.heading;
  if (k < static_cast<int>(pr.obstacles.size())) {
    for (const auto& iv : pr.obstacles[k]) {
      const double pen = obstacle_penetration(iv, p);
      c += pr.w_obstacle * pen * pen * lateral_weight(iv, p).first;
    }
  }
  return c;
}

double control_cost(const MpcProblem& pr, const ControlCommand& u) {
  return pr.w_accel * u.acceleration * u.acceleration +
         pr.w_steer * u.steering_angle * u.steering_angle;
}

struct BoxQpResult {
  Vec2 step;
  std::array<bool, 2> clamped{false, false};
};

double qp_value(const Mat2& h, const Vec2& g, const Vec2& d) { return 0.5 * d.dot(h * d) + g.dot(d); }

/// Exact minimizer of 0.5 d'Hd + g'd over lo <= d <= hi for 2x2 SPD H.
BoxQpResult solve_box_qp(const Mat2& h, const Vec2& g, const Vec2& lo, const Vec2& hi) {
  BoxQpResult best;
  const Vec2 free = -h.ldlt().solve(g);
  if ((free.array() >= lo.array()).all() && (free.array() <= hi.array()).all()) {
    best.step = free;
    return best;
  }
  double best_value = std::numeric_limits<double>::infinity();
  // One coordinate fixed at a bound, the other minimized and clamped.
  for (int fixed = 0; fixed < 2; ++fixed) {
    const int other = 1 - fixed;
    for (double bound : {lo[fixed], hi[fixed]}) {
      Vec2 d;
      d[fixed] = bound;
      d[other] = std::clamp(-(g[other] + h(other, fixed) * bound) / h(other, other), lo[other],
                            hi[other]);
      const double value = qp_value(h, g, d);
      if (value < best_value) {
        best_value = value;
        best.step = d;
        best.clamped = {false, false};
        best.clamped[fixed] = true;
        best.clamped[other] = d[other] <= lo[other] || d[other] >= hi[other];
      }
    }
  }
  return best;
}

struct Linearization {
  Mat4 a;
  Mat42 b;
};

Linearization linearize(const Pose& p, const ControlCommand& u, double wheelbase, double dt) {
  const double c = std::cos(p.heading);
  const double s = std::sin(p.heading);
  const double tan_d = std::tan(u.steering_angle);
  const double cos_d = std::cos(u.steering_angle);
  const bool moving = p.speed + u.acceleration * dt > 0.0;
  Linearization lin;
  lin.a.setIdentity();
  lin.a(0, 2) = -p.speed * s * dt;
  lin.a(0, 3) = c * dt;
  lin.a(1, 2) = p.speed * c * dt;
  lin.a(1, 3) = s * dt;
  lin.a(2, 3) = tan_d / wheelbase * dt;
  lin.a(3, 3) = moving ? 1.0 : 0.0;
  lin.b.setZero();
  lin.b(2, 1) = p.speed / wheelbase * dt / (cos_d * cos_d);
  lin.b(3, 0) = moving ? dt : 0.0;
  return lin;
}

struct StateCostDerivatives {
  Vec4 grad;
  Mat4 hess;
};

StateCostDerivatives state_cost_derivatives(const MpcProblem& pr, int k, const Pose& p) {
  const ReferencePoint& r = pr.reference[k];
  StateCostDerivatives d;
  d.grad << 0.0, 2.0 * pr.w_y * (p.y - r.y), 2.0 * pr.w_heading * p.heading,
      2.0 * pr.w_v * (p.speed - r.v);
  d.hess.setZero();
  d.hess(1, 1) = 2.0 * pr.w_y;
  d.hess(2, 2) = 2.0 * pr.w_heading;
  d.hess(3, 3) = 2.0 * pr.w_v;
  if (k < static_cast<int>(pr.obstacles.size())) {
    for (const auto& iv : pr.obstacles[k]) {
      const double pen = obstacle_penetration(iv, p);
      const auto [w, dw] = lateral_weight(iv, p);
      if (pen > 0.0 && w > 0.0) {
        const double sign = iv.from_ahead ? 1.0 : -1.0;
        d.grad[0] += 2.0 * pr.w_obstacle * pen * sign * w;
        d.grad[1] += pr.w_obstacle * pen * pen * dw;
        d.hess(0, 0) += 2.0 * pr.w_obstacle * w;
      }
    }
  }
  return d;
}

struct Gains {
  std::vector<Vec2> feedforward;
  std::vector<Mat24> feedback;
  double expected_linear = 0.0;     // sum k'Qu
  double expected_quadratic = 0.0;  // sum k'Quu k
};

Gains backward_pass(const MpcProblem& pr, const std::vector<Pose>& xs,
                    const std::vector<ControlCommand>& us, double mu) {
  const int n = pr.horizon();
  Gains gains;
  gains.feedforward.resize(n);
  gains.feedback.resize(n);

  StateCostDerivatives terminal = state_cost_derivatives(pr, n - 1, xs[n]);
  Vec4 vx = terminal.grad;
  Mat4 vxx = terminal.hess;

  for (int k = n - 1; k >= 0; --k) {
    const Linearization lin = linearize(xs[k], us[k], pr.wheelbase, pr.dt);
    Vec4 lx = Vec4::Zero();
    Mat4 lxx = Mat4::Zero();
    if (k > 0) {
      const StateCostDerivatives sc = state_cost_derivatives(pr, k - 1, xs[k]);
      lx = sc.grad;
      lxx = sc.hess;
    }
    const Vec2 lu(2.0 * pr.w_accel * us[k].acceleration, 2.0 * pr.w_steer * us[k].steering_angle);
    Mat2 luu = Mat2::Zero();
    luu(0, 0) = 2.0 * pr.w_accel;
    luu(1, 1) = 2.0 * pr.w_steer;

    const Vec4 qx = lx + lin.a.transpose() * vx;
    const Vec2 qu = lu + lin.b.transpose() * vx;
    const Mat4 qxx = lxx + lin.a.transpose() * vxx * lin.a;
    Mat2 quu = luu + lin.b.transpose() * vxx * lin.b;
    quu += mu * Mat2::Identity();
    const Mat24 qux = lin.b.transpose() * vxx * lin.a;

    const Vec2 lo(pr.limits.accel_min - us[k].acceleration,
                  -pr.limits.steer_max - us[k].steering_angle);
    const Vec2 hi(pr.limits.accel_max - us[k].acceleration,
                  pr.limits.steer_max - us[k].steering_angle);
    const BoxQpResult qp = solve_box_qp(quu, qu, lo, hi);

    Mat24 gain = Mat24::Zero();
    const int free_count = (qp.clamped[0] ? 0 : 1) + (qp.clamped[1] ? 0 : 1);
    if (free_count == 2) {
      gain = -quu.ldlt().solve(qux);
    } else if (free_count == 1) {
      const int f = qp.clamped[0] ? 1 : 0;
      gain.row(f) = -qux.row(f) / quu(f, f);
    }
    gains.feedforward[k] = qp.step;
    gains.feedback[k] = gain;
    gains.expected_linear += qp.step.dot(qu);
    gains.expected_quadratic += qp.step.dot(quu * qp.step);

    vx = qx + gain.transpose() * quu * qp.step + gain.transpose() * qu +
         qux.transpose() * qp.step;
    vxx = qxx + gain.transpose() * quu * gain + gain.transpose() * qux + qux.transpose() * gain;
    vxx = 0.5 * (vxx + vxx.transpose()).eval();
  }
  return gains;
}

ControlCommand clamp_command(const MpcProblem& pr, double a, double d) {
  return ControlCommand{a, d}.clamped(pr.limits);
}

}  // namespace

std::vector<Pose> rollout(const Pose& initial, const std::vector<ControlCommand>& controls,
                          double wheelbase, double dt) {
  std::vector<Pose> poses;
  poses.reserve(controls.size() + 1);
  poses.push_back(initial);
  for (const auto& u : controls) {
    poses.push_back(world::bicycle_step(poses.back(), u, wheelbase, dt));
  }
  return poses;
}

double evaluate_cost(const MpcProblem& pr, const std::vector<Pose>& poses,
                     const std::vector<ControlCommand>& controls) {
  double total = 0.0;
  for (int k = 0; k < pr.horizon(); ++k) {
    total += control_cost(pr, controls[k]) + state_cost(pr, k, poses[k + 1]);
  }
  return total;
}

Trajectory solve_mpc(const MpcProblem& pr) {
  const int n = pr.horizon();
  if (n <= 0) {
    throw std::invalid_argument("solve_mpc: empty reference");
  }
  std::vector<ControlCommand> us(n);
  if (static_cast<int>(pr.warm_start.size()) == n) {
    for (int k = 0; k < n; ++k) {
      us[k] = pr.warm_start[k].clamped(pr.limits);
    }
  }
  std::vector<Pose> xs = rollout(pr.initial, us, pr.wheelbase, pr.dt);
  double cost = evaluate_cost(pr, xs, us);
  if (!std::isfinite(cost)) {
    throw SolverDiverged("solve_mpc: non-finite cost at the warm start");
  }

  Trajectory traj;
  traj.horizon_steps = n;
  traj.dt = pr.dt;
  traj.iterate_costs.push_back(cost);

  constexpr std::array<double, 6> kSteps = {1.0, 0.5, 0.25, 0.1, 0.03, 0.01};
  double mu = 1e-6;
  int consecutive_increases = 0;
  for (int it = 0; it < pr.max_iterations; ++it) {
    const Gains gains = backward_pass(pr, xs, us, mu);
    const double predicted = -(gains.expected_linear + 0.5 * gains.expected_quadratic);
    if (predicted < 1e-10 * (1.0 + cost)) {
      break;  // stationary within the box
    }

    bool accepted = false;
    double last_candidate = cost;
    for (double alpha : kSteps) {
      std::vector<ControlCommand> cand_u(n);
      std::vector<Pose> cand_x(n + 1);
      cand_x[0] = pr.initial;
      for (int k = 0; k < n; ++k) {
        const Vec4 dx(cand_x[k].x - xs[k].x, cand_x[k].y - xs[k].y,
                      cand_x[k].heading - xs[k].heading, cand_x[k].speed - xs[k].speed);
        const Vec2 du = alpha * gains.feedforward[k] + gains.feedback[k] * dx;
        cand_u[k] = clamp_command(pr, us[k].acceleration + du[0], us[k].steering_angle + du[1]);
        cand_x[k + 1] = world::bicycle_step(cand_x[k], cand_u[k], pr.wheelbase, pr.dt);
      }
      const double cand_cost = evaluate_cost(pr, cand_x, cand_u);
      last_candidate = cand_cost;
      if (std::isfinite(cand_cost) && cand_cost < cost) {
        us = std::move(cand_u);
        xs = std::move(cand_x);
        cost = cand_cost;
        accepted = true;
        break;
      }
    }

    if (accepted) {
      consecutive_increases = 0;
      mu = std::max(1e-6, mu * 0.1);
      traj.iterate_costs.push_back(cost);
      continue;
    }
    if (!std::isfinite(last_candidate) || last_candidate > cost) {
      if (++consecutive_increases >= 2) {
        throw SolverDiverged("solve_mpc: iterate cost increased on two consecutive iterations");
      }
    } else {
      consecutive_increases = 0;
    }
    mu = std::max(mu * 100.0, 1.0);
  }

  traj.feedforward = std::move(us);
  traj.poses = std::move(xs);
  traj.cost = cost;
  return traj;
}

}  // namespace scriptdrive::planners
