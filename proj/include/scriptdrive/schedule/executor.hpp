#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "scriptdrive/planners.hpp"
#include "scriptdrive/schedule/script.hpp"
#include "scriptdrive/world.hpp"

namespace scriptdrive::schedule {

using world::Observation;

inline constexpr double kStoppedSpeed = 0.1;
inline constexpr double kTtcEpsilon = 1e-6;

/// Everything an atom can read. Clocks are in seconds.
struct EvalContext {
  const Observation& obs;
  double stage_clock = 0.0;
  double total_clock = 0.0;
  double dist = 0.0;
};

/// Gap to the front neighbor over the closing speed; +inf when absent or opening.
double ttc_front(const Observation& obs);
double atom_value(Atom atom, const EvalContext& ctx);
double operand_value(const Operand& operand, const EvalContext& ctx);
bool eval_predicate(const Predicate& p, const EvalContext& ctx);

enum class Phase { waiting_trigger, running, preempted, done, failed };
std::string_view to_string(Phase phase);

enum class EventKind {
  stage_start,
  trigger_fired,
  stage_complete,
  stage_timeout,
  stage_infeasible,
  fallback_enter,
  fallback_exit,
  script_done,
  script_failed,
  script_superseded,
};
std::string_view to_string(EventKind kind);

struct ExecutorEvent {
  std::int64_t tick = 0;
  double time = 0.0;
  EventKind kind = EventKind::stage_start;
  int stage = -1;  // stage index, or fallback rule index for fallback events
  std::string detail;

  bool operator==(const ExecutorEvent&) const = default;
};

struct ExecutorState {
  int stage_index = 0;  // position in the stage list
  int completed = 0;    // k_t: stages whose completion set was reached
  Phase phase = Phase::waiting_trigger;
  Phase resume_phase = Phase::waiting_trigger;  // phase to return to after preemption
  std::int64_t stage_ticks = 0;                 // stage clock in ticks
  std::int64_t total_ticks = 0;  // executor ticks since installation
  std::optional<int> preemption;
  int clear_count = 0;
  // Fixed when the stage starts running; after script_done the last completed
  // goal keeps being tracked.
  std::optional<planners::PlannerGoal> goal;
  double dist_origin = 0.0;
  std::vector<ExecutorEvent> events;

  bool finished() const { return phase == Phase::done || phase == Phase::failed; }
  double stage_clock(double dt) const { return static_cast<double>(stage_ticks) * dt; }
};

struct ExecutorConfig {
  double dt = world::kDefaultDt;
};

/// What the planner layer runs this tick.
struct Decision {
  planners::AtomicBehavior behavior = planners::AtomicBehavior::lane_keeping;
  std::optional<planners::PlannerGoal> goal;  // empty when the goal could not be formed
  bool from_fallback = false;
};

/// Fresh state for a script about to start. Activates the first stage.
ExecutorState start_script(const ScheduleScript& script, const Observation& obs,
                           std::int64_t tick);

/// One executor step. Conditions see the clocks as they stood at the start of
/// the tick; the clocks then advance by dt unless the stage is preempted.
/// At most one stage transition happens per tick.
Decision executor_tick(ExecutorState& state, const ScheduleScript& script, const Observation& obs,
                       std::int64_t tick, const ExecutorConfig& config = {});

/// Thread-safe hand-off of a replacement script to the simulation thread.
class ScriptMailbox {
 public:
  void post(ScheduleScript script);
  std::optional<ScheduleScript> take();
  bool pending() const;

 private:
  mutable std::mutex mutex_;
  std::optional<ScheduleScript> slot_;
};

/// Script plus executor state, as owned by the simulation loop.
class Executor {
 public:
  explicit Executor(ExecutorConfig config = {}) : config_(config) {}

  /// Replaces any running script at a tick boundary.
  void install(ScheduleScript script, const Observation& obs, std::int64_t tick);
  Decision tick(const Observation& obs, std::int64_t tick);

  bool has_script() const { return script_.has_value(); }
  const ScheduleScript* script() const { return script_ ? &*script_ : nullptr; }
  const ExecutorState& state() const { return state_; }
  const ExecutorConfig& config() const { return config_; }

 private:
  ExecutorConfig config_;
  std::optional<ScheduleScript> script_;
  ExecutorState state_;
};

}  // namespace scriptdrive::schedule
