#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "scriptdrive/control.hpp"
#include "testkit.hpp"

using namespace scriptdrive::control;

TEST_CASE("scalar DARE matches the closed form") {
  CHECK(testkit::dare_scalar_error() < 1e-9);

  // A = 0: P = Q and no feedback.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(1, 1), b = Eigen::MatrixXd::Identity(1, 1);
  Eigen::MatrixXd q = 2.0 * b, r = b;
  const auto sol = solve_dare(a, b, q, r);
  CHECK(sol.p(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(std::abs(sol.k(0, 0)) < 1e-12);
}

TEST_CASE("DARE solution satisfies the Riccati equation") {
  LqrConfig cfg;
  Eigen::Matrix2d a;
  Eigen::Vector2d b;
  lateral_model(10.0, cfg, a, b);
  const Eigen::Matrix2d q = cfg.q_lat.asDiagonal();
  const Eigen::MatrixXd r = Eigen::MatrixXd::Constant(1, 1, cfg.r_lat);
  const auto sol = solve_dare(a, b, q, r);
  const Eigen::MatrixXd p = sol.p;
  const Eigen::MatrixXd rhs =
      a.transpose() * p * a -
      a.transpose() * p * b * (r + b.transpose() * p * b).inverse() * b.transpose() * p * a + q;
  CHECK((p - rhs).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("DARE gives up on an unstabilizable pair") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Constant(1, 1, 2.0);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(1, 1);
  Eigen::MatrixXd one = Eigen::MatrixXd::Identity(1, 1);
  CHECK_THROWS_AS(solve_dare(a, b, one, one, 1e-9, 200), RiccatiDiverged);
}

TEST_CASE("lateral closed loop is stable across the speed range") {
  LqrConfig cfg;
  for (double v = 1.0; v <= 30.0; v += 1.0) {
    Eigen::Matrix2d a;
    Eigen::Vector2d b;
    lateral_model(v, cfg, a, b);
    const LqrGains g = compute_gains(v, cfg);
    const Eigen::Matrix2d closed = a - b * g.k_lat;
    const double rho = closed.eigenvalues().cwiseAbs().maxCoeff();
    CHECK(rho < 1.0);
    longitudinal_model(cfg, a, b);
    CHECK((a - b * g.k_lon).eigenvalues().cwiseAbs().maxCoeff() < 1.0);
  }
}

TEST_CASE("LQR settles a 1 m offset within 4 s") {
  CHECK(testkit::lqr_settled_error(10.0, 1.0, 4.0) < 0.05);
  CHECK(testkit::lqr_settled_error(10.0, -1.0, 4.0) < 0.05);
}

TEST_CASE("steering feedback has the correcting sign") {
  LqrTracker tracker;
  scriptdrive::planners::Trajectory ref;
  ref.horizon_steps = 2;
  ref.feedforward.assign(2, {});
  ref.poses = {{0, 0, 0, 10}, {1, 0, 0, 10}, {2, 0, 0, 10}};
  scriptdrive::world::VehicleState ego;
  ego.speed = 10.0;
  ego.y = 0.5;  // left of the reference
  CHECK(tracker.track(ref, ego, 0).steering_angle < 0.0);
  ego.y = -0.5;
  CHECK(tracker.track(ref, ego, 0).steering_angle > 0.0);
  ego.y = 0.0;
  ego.speed = 8.0;  // slower than the reference
  CHECK(tracker.track(ref, ego, 0).acceleration > 0.0);
  CHECK_THROWS_AS(tracker.track(ref, ego, 2), StaleTrajectory);
}
