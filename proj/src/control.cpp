#include "scriptdrive/control.hpp"

#include <algorithm>
#include <cmath>

namespace scriptdrive::control {

DareSolution solve_dare(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                        const Eigen::MatrixXd& q, const Eigen::MatrixXd& r, double tolerance,
                        int max_iterations) {
  const Eigen::MatrixXd at = a.transpose();
  const Eigen::MatrixXd bt = b.transpose();
  Eigen::MatrixXd p = q;
  for (int it = 1; it <= max_iterations; ++it) {
    const Eigen::MatrixXd s = r + bt * p * b;
    const Eigen::MatrixXd next = at * p * a - at * p * b * s.ldlt().solve(bt * p * a) + q;
    const double diff = (next - p).cwiseAbs().maxCoeff();
    p = next;
    if (!std::isfinite(diff)) {
      break;
    }
    if (diff < tolerance) {
      DareSolution sol;
      sol.k = (r + bt * p * b).ldlt().solve(bt * p * a);
      sol.p = std::move(p);
      sol.iterations = it;
      return sol;
    }
  }
  throw RiccatiDiverged("solve_dare: no convergence within " + std::to_string(max_iterations) +
                        " iterations");
}

void lateral_model(double speed, const LqrConfig& config, Eigen::Matrix2d& a, Eigen::Vector2d& b) {
  a << 1.0, speed * config.dt, 0.0, 1.0;
  b << 0.0, speed / config.wheelbase * config.dt;
}

void longitudinal_model(const LqrConfig& config, Eigen::Matrix2d& a, Eigen::Vector2d& b) {
  a << 1.0, config.dt, 0.0, 1.0;
  b << 0.0, config.dt;
}

LqrGains compute_gains(double speed, const LqrConfig& config) {
  LqrGains g;
  g.speed = speed;
  g.q_lat = config.q_lat.asDiagonal();
  g.q_lon = config.q_lon.asDiagonal();
  g.r_lat = config.r_lat;
  g.r_lon = config.r_lon;

  Eigen::Matrix2d a;
  Eigen::Vector2d b;
  lateral_model(speed, config, a, b);
  const DareSolution lat =
      solve_dare(a, b, g.q_lat, Eigen::MatrixXd::Constant(1, 1, config.r_lat));
  g.k_lat = lat.k.row(0);

  longitudinal_model(config, a, b);
  const DareSolution lon =
      solve_dare(a, b, g.q_lon, Eigen::MatrixXd::Constant(1, 1, config.r_lon));
  g.k_lon = lon.k.row(0);
  return g;
}

TrackingError tracking_error(const planners::Trajectory& traj, const world::VehicleState& ego,
                             int tick_offset) {
  const world::Pose& ref = traj.poses.at(tick_offset);
  return {ego.y - ref.y, ego.heading - ref.heading, ego.speed - ref.speed, ego.x - ref.x};
}

LqrTracker::LqrTracker(LqrConfig config) : config_(std::move(config)) {}

LqrGains LqrTracker::gains_for(double speed) {
  const int bucket = std::max(1, static_cast<int>(std::lround(speed)));
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = cache_.find(bucket);
  if (it == cache_.end()) {
    it = cache_.emplace(bucket, compute_gains(bucket, config_)).first;
  }
  return it->second;
}

world::ControlCommand LqrTracker::track(const planners::Trajectory& traj,
                                        const world::VehicleState& ego, int tick_offset) {
  if (tick_offset < 0 || tick_offset >= traj.horizon_steps ||
      tick_offset >= static_cast<int>(traj.feedforward.size())) {
    throw StaleTrajectory("track: tick offset " + std::to_string(tick_offset) +
                          " outside a horizon of " + std::to_string(traj.horizon_steps));
  }
  const TrackingError e = tracking_error(traj, ego, tick_offset);
  const LqrGains g = gains_for(traj.poses[tick_offset].speed);
  const double steer_fb = -(g.k_lat[0] * e.e_y + g.k_lat[1] * e.e_heading);
  const double accel_fb = -(g.k_lon[0] * e.e_s + g.k_lon[1] * e.e_v);
  const world::ControlCommand& ff = traj.feedforward[tick_offset];
  return world::ControlCommand{ff.acceleration + accel_fb, ff.steering_angle + steer_fb}.clamped(
      config_.limits);
}

}  // namespace scriptdrive::control
