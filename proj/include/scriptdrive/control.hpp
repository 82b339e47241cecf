#pragma once

#include <Eigen/Dense>

#include <map>
#include <mutex>
#include <stdexcept>

#include "scriptdrive/planners.hpp"
#include "scriptdrive/world.hpp"

namespace scriptdrive::control {

class RiccatiDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StaleTrajectory : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DareSolution {
  Eigen::MatrixXd p;
  Eigen::MatrixXd k;
  int iterations = 0;
};

/// Fixed-point Riccati recursion from P = Q until successive iterates differ
/// by less than `tolerance` in max norm. Throws RiccatiDiverged at the cap.
DareSolution solve_dare(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                        const Eigen::MatrixXd& q, const Eigen::MatrixXd& r,
                        double tolerance = 1e-9, int max_iterations = 10000);

struct TrackingError {
  double e_y = 0.0;
  double e_heading = 0.0;
  double e_v = 0.0;
  double e_s = 0.0;
};

struct LqrConfig {
  Eigen::Vector2d q_lat{1.0, 3.0};
  double r_lat = 10.0;
  Eigen::Vector2d q_lon{0.5, 1.0};
  double r_lon = 1.0;
  double wheelbase = 2.8;
  double dt = world::kDefaultDt;
  world::ControlLimits limits;
};

struct LqrGains {
  Eigen::RowVector2d k_lat;  // over (e_y, e_heading)
  Eigen::RowVector2d k_lon;  // over (e_s, e_v)
  Eigen::Matrix2d q_lat;
  Eigen::Matrix2d q_lon;
  double r_lat = 0.0;
  double r_lon = 0.0;
  double speed = 0.0;
};

/// Lateral error model about straight-line motion at `speed`.
void lateral_model(double speed, const LqrConfig& config, Eigen::Matrix2d& a, Eigen::Vector2d& b);
void longitudinal_model(const LqrConfig& config, Eigen::Matrix2d& a, Eigen::Vector2d& b);

LqrGains compute_gains(double speed, const LqrConfig& config);

TrackingError tracking_error(const planners::Trajectory& traj, const world::VehicleState& ego,
                             int tick_offset);

/// Feedforward plus decoupled LQR feedback. Gains are cached per 1 m/s bucket.
class LqrTracker {
 public:
  explicit LqrTracker(LqrConfig config = {});

  world::ControlCommand track(const planners::Trajectory& traj, const world::VehicleState& ego,
                              int tick_offset);
  LqrGains gains_for(double speed);
  const LqrConfig& config() const { return config_; }

 private:
  LqrConfig config_;
  std::mutex mutex_;
  std::map<int, LqrGains> cache_;
};

}  // namespace scriptdrive::control
