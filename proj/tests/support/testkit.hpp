#pragma once

// Generators and independent oracles shared by the unit tests and the
// acceptance binary.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "scriptdrive/benchmark.hpp"
#include "scriptdrive/control.hpp"
#include "scriptdrive/runtime.hpp"
#include "scriptdrive/schedule/executor.hpp"
#include "scriptdrive/schedule/script.hpp"
#include "scriptdrive/world.hpp"

namespace testkit {

namespace sd = scriptdrive;
using Rng = std::mt19937_64;

std::string data_dir();

// ---------------------------------------------------------------- generators

sd::schedule::Predicate random_predicate(Rng& rng, int depth);
sd::schedule::ScheduleScript random_script(Rng& rng);

/// Per-stream road and limit, then one observation per tick.
class ObservationStream {
 public:
  explicit ObservationStream(Rng& rng);
  sd::world::Observation next();

 private:
  Rng& rng_;
  int lane_count_;
  double limit_;
  int lane_ = 0;
  double speed_;
  double dist_ = 0.0;
  std::int64_t tick_ = 0;
  bool oncoming_left_ = false;
};

sd::world::Observation random_observation(Rng& rng);

// ---------------------------------------------------------------- predicate oracle

struct Clocks {
  double stage = 0.0;
  double total = 0.0;
  double dist = 0.0;
};

/// Tree walk that reads the observation directly.
bool oracle_eval(const sd::schedule::Predicate& p, const sd::world::Observation& obs,
                 const Clocks& clocks);

// ---------------------------------------------------------------- executor oracle

struct OracleOutput {
  sd::planners::AtomicBehavior behavior = sd::planners::AtomicBehavior::lane_keeping;
  std::optional<sd::planners::PlannerGoal> goal;
  bool from_fallback = false;
};

/// Hand-traced stage machine, kept deliberately flat.
class OracleExecutor {
 public:
  enum class Mode { waiting, running, done, failed };

  OracleExecutor(const sd::schedule::ScheduleScript& script, const sd::world::Observation& obs,
                 std::int64_t tick, double dt = 0.1);
  OracleOutput step(const sd::world::Observation& obs, std::int64_t tick);

  int index() const { return index_; }
  int completed() const { return completed_; }
  Mode mode() const { return mode_; }
  bool preempted() const { return rule_ >= 0; }
  int rule() const { return rule_; }
  bool finished() const { return mode_ == Mode::done || mode_ == Mode::failed; }
  const std::vector<sd::schedule::ExecutorEvent>& log() const { return log_; }

 private:
  void enter(int index, const sd::world::Observation& obs, std::int64_t tick);
  void form_goal(const sd::world::Observation& obs);
  void next_stage(const sd::world::Observation& obs, std::int64_t tick);
  void note(std::int64_t tick, double time, sd::schedule::EventKind kind, int index);
  OracleOutput hold(const sd::world::Observation& obs) const;
  OracleOutput current(const sd::world::Observation& obs) const;

  const sd::schedule::ScheduleScript& script_;
  double dt_;
  int index_ = 0;
  int completed_ = 0;
  Mode mode_ = Mode::waiting;
  int rule_ = -1;
  int quiet_ = 0;
  long stage_ticks_ = 0;
  long total_ticks_ = 0;
  double origin_ = 0.0;
  std::optional<sd::planners::PlannerGoal> goal_;
  std::vector<sd::schedule::ExecutorEvent> log_;
};

/// Runs one randomized (script, stream) pair through the executor and the
/// oracle and checks monotonicity, fallback supremacy, hysteresis and
/// liveness. Returns a description of the first mismatch.
std::optional<std::string> check_executor_pair(std::uint64_t seed);

// ---------------------------------------------------------------- numerical kernels

/// Cost of the solved MPC problem that starts on a constant reference.
double mpc_fixed_point_cost();
/// Largest pose gap between solved trajectories and a re-rollout of their
/// feedforward, over `trials` random planning problems.
double mpc_reintegration_error(int trials, std::uint64_t seed);
/// Max of |P - (1+sqrt 5)/2| and |K - P/(1+P)| for A = B = Q = R = 1.
double dare_scalar_error();
/// Largest |e_y| after `settle` seconds of closed-loop LQR lane holding from
/// a lateral offset, on the full bicycle model.
double lqr_settled_error(double speed, double offset, double settle, double duration = 10.0);
/// Largest |a| of the free-road IDM at v = v0 over a range of v0.
double idm_equilibrium_error();

// ---------------------------------------------------------------- metric oracles

struct BruteMetrics {
  int collision = 1;
  double ttc = 1.0;
  double drivable = 1.0;
  double speed = 1.0;
  double direction = 1.0;
  double progress = 0.0;
};

BruteMetrics brute_metrics(const sd::runtime::Trace& trace, double expert_distance);
int brute_recognition(const std::vector<sd::interpreter::BehaviorSpec>& predicted,
                      const std::vector<sd::interpreter::BehaviorSpec>& truth);
/// Ground-truth stage count re-derived from raw vehicle snapshots.
int brute_tracker_k(const sd::runtime::Trace& trace,
                    const std::vector<sd::interpreter::BehaviorSpec>& truth, double dt = 0.1);

sd::runtime::Trace random_trace(Rng& rng);

/// Compares every metric of `rep` with a brute-force scan of its trace.
/// The report must have been produced with keep_vehicles.
std::optional<std::string> check_episode_metrics(const sd::bench::EpisodeReport& rep,
                                                 const std::vector<sd::interpreter::BehaviorSpec>& truth,
                                                 double expert_distance);

std::optional<std::string> check_synthetic_metrics(std::uint64_t seed);

/// Runs one closed-loop episode with a random corpus entry, method, seed,
/// latency and horizon, then checks its metrics by brute force.
std::optional<std::string> check_random_episode(std::uint64_t seed, const sd::bench::Corpus& corpus,
                                                sd::bench::ExpertCache& experts);

}  // namespace testkit
