#include "scriptdrive/schedule/executor.hpp"

#include <cmath>
#include <limits>

namespace scriptdrive::schedule {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double slot_gap(const Observation& obs, world::Slot slot) {
  const auto& n = obs.slot(slot);
  return n ? n->gap : kInf;
}

bool compare(double a, CompareOp op, double b) {
  switch (op) {
    case CompareOp::lt: return a < b;
    case CompareOp::le: return a <= b;
    case CompareOp::gt: return a > b;
    case CompareOp::ge: return a >= b;
    case CompareOp::eq: return a == b;
  }
  return false;
}

}  // namespace

double ttc_front(const Observation& obs) {
  const auto& front = obs.slot(world::Slot::front);
  if (!front) {
    return kInf;
  }
  const double closing = -front->relative_speed;
  if (closing <= 0.0) {
    return kInf;
  }
  return front->gap / std::max(closing, kTtcEpsilon);
}

double atom_value(Atom atom, const EvalContext& ctx) {
  const Observation& obs = ctx.obs;
  switch (atom) {
    case Atom::speed: return obs.ego.speed;
    case Atom::lane: return obs.lane_index;
    case Atom::elapsed: return ctx.stage_clock;
    case Atom::total_elapsed: return ctx.total_clock;
    case Atom::gap_front: return slot_gap(obs, world::Slot::front);
    case Atom::gap_rear: return slot_gap(obs, world::Slot::rear);
    case Atom::gap_left_front: return slot_gap(obs, world::Slot::left_front);
    case Atom::gap_left_rear: return slot_gap(obs, world::Slot::left_rear);
    case Atom::gap_right_front: return slot_gap(obs, world::Slot::right_front);
    case Atom::gap_right_rear: return slot_gap(obs, world::Slot::right_rear);
    case Atom::ttc_front: return ttc_front(obs);
    case Atom::dist_traveled: return ctx.dist;
    case Atom::at_leftmost: return obs.left_open ? 0.0 : 1.0;
    case Atom::at_rightmost: return obs.right_open ? 0.0 : 1.0;
    case Atom::stopped: return obs.ego.speed < kStoppedSpeed ? 1.0 : 0.0;
  }
  return 0.0;
}

double operand_value(const Operand& operand, const EvalContext& ctx) {
  return operand.is_atom ? atom_value(operand.atom, ctx) : operand.number;
}

bool eval_predicate(const Predicate& p, const EvalContext& ctx) {
  switch (p.kind) {
    case Predicate::Kind::compare:
      return compare(operand_value(p.lhs, ctx), p.op, operand_value(p.rhs, ctx));
    case Predicate::Kind::flag:
      return atom_value(p.flag, ctx) != 0.0;
    case Predicate::Kind::negate:
      return !eval_predicate(p.children.front(), ctx);
    case Predicate::Kind::all_of:
      for (const Predicate& c : p.children) {
        if (!eval_predicate(c, ctx)) {
          return false;
        }
      }
      return true;
    case Predicate::Kind::any_of:
      for (const Predicate& c : p.children) {
        if (eval_predicate(c, ctx)) {
          return true;
        }
      }
      return false;
  }
  return false;
}

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::waiting_trigger: return "waiting_trigger";
    case Phase::running: return "running";
    case Phase::preempted: return "preempted";
    case Phase::done: return "done";
    case Phase::failed: return "failed";
  }
  return "?";
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::stage_start: return "stage_start";
    case EventKind::trigger_fired: return "trigger_fired";
    case EventKind::stage_complete: return "stage_complete";
    case EventKind::stage_timeout: return "stage_timeout";
    case EventKind::stage_infeasible: return "stage_infeasible";
    case EventKind::fallback_enter: return "fallback_enter";
    case EventKind::fallback_exit: return "fallback_exit";
    case EventKind::script_done: return "script_done";
    case EventKind::script_failed: return "script_failed";
    case EventKind::script_superseded: return "script_superseded";
  }
  return "?";
}

namespace {

class Step {
 public:
  Step(ExecutorState& state, const ScheduleScript& script, const Observation& obs,
       std::int64_t tick, const ExecutorConfig& config)
      : s_(state), script_(script), obs_(obs), tick_(tick), config_(config) {}

  void log(EventKind kind, int index, std::string detail = {}) {
    s_.events.push_back({tick_, obs_.time, kind, index, std::move(detail)});
  }

  Decision hold() const {
    return {planners::AtomicBehavior::lane_keeping,
            planners::make_goal(planners::AtomicBehavior::lane_keeping, obs_), false};
  }

  /// Forms the goal of the current stage from the present observation. An
  /// impossible goal leaves it empty; the next tick handles it.
  void begin_running() {
    const Stage& stage = script_.stages[s_.stage_index];
    s_.phase = Phase::running;
    try {
      s_.goal = planners::make_goal(stage.behavior, obs_, stage.target_speed);
    } catch (const planners::InfeasibleGoal&) {
      s_.goal.reset();
    }
  }

  void activate(int index) {
    s_.stage_index = index;
    s_.stage_ticks = 0;
    s_.goal.reset();
    log(EventKind::stage_start, index,
        std::string(planners::to_string(script_.stages[index].behavior)));
    if (script_.stages[index].when) {
      s_.phase = Phase::waiting_trigger;
    } else {
      begin_running();
    }
  }

  /// The decision of the current stage without any transition.
  Decision stage_decision() const {
    if ((s_.phase == Phase::running || s_.phase == Phase::done) && s_.goal) {
      return {s_.goal->behavior, s_.goal, false};
    }
    return hold();
  }

  Decision advance() {
    const int next = s_.stage_index + 1;
    if (next >= static_cast<int>(script_.stages.size())) {
      s_.stage_index = next;
      s_.phase = Phase::done;
      log(EventKind::script_done, next);
      return stage_decision();
    }
    activate(next);
    return stage_decision();
  }

  Decision give_up(EventKind why) {
    const Stage& stage = script_.stages[s_.stage_index];
    log(why, s_.stage_index);
    s_.goal.reset();
    if (stage.on_timeout == TimeoutPolicy::fail) {
      s_.phase = Phase::failed;
      s_.goal.reset();
      log(EventKind::script_failed, s_.stage_index);
      return hold();
    }
    return advance();
  }

  Decision run() {
    const EvalContext ctx{obs_, s_.stage_clock(config_.dt),
                          static_cast<double>(s_.total_ticks) * config_.dt,
                          obs_.dist_traveled - s_.dist_origin};
    ++s_.total_ticks;

    std::optional<int> match;
    for (std::size_t i = 0; i < script_.fallbacks.size(); ++i) {
      if (eval_predicate(script_.fallbacks[i].when, ctx)) {
        match = static_cast<int>(i);
        break;
      }
    }
    if (match) {
      if (s_.preemption != match) {
        if (s_.preemption) {
          log(EventKind::fallback_exit, *s_.preemption);
        } else {
          s_.resume_phase = s_.phase;
          s_.phase = Phase::preempted;
        }
        s_.preemption = match;
        log(EventKind::fallback_enter, *match);
      }
      s_.clear_count = 0;
      return fallback_decision();
    }
    if (s_.preemption) {
      const FallbackRule& rule = script_.fallbacks[*s_.preemption];
      if (++s_.clear_count < rule.clear_after) {
        return fallback_decision();
      }
      // Released: the stage resumes and is evaluated on this same tick.
      log(EventKind::fallback_exit, *s_.preemption);
      s_.preemption.reset();
      s_.clear_count = 0;
      s_.phase = s_.resume_phase;
    }
    if (s_.finished()) {
      return stage_decision();
    }

    const Stage& stage = script_.stages[s_.stage_index];
    Decision out;
    if (s_.phase == Phase::waiting_trigger) {
      if (eval_predicate(*stage.when, ctx)) {
        log(EventKind::trigger_fired, s_.stage_index);
        begin_running();
        out = stage_decision();
      } else if (ctx.stage_clock >= stage.timeout) {
        out = give_up(EventKind::stage_timeout);
      } else {
        out = hold();
      }
    } else if (!s_.goal) {
      out = give_up(EventKind::stage_infeasible);
    } else {
      const bool complete =
          stage.until ? eval_predicate(*stage.until, ctx)
                      : planners::completion_predicate(*s_.goal, obs_, ctx.stage_clock);
      if (complete) {
        ++s_.completed;
        log(EventKind::stage_complete, s_.stage_index);
        out = advance();
      } else if (ctx.stage_clock >= stage.timeout) {
        out = give_up(EventKind::stage_timeout);
      } else {
        out = stage_decision();
      }
    }
    if (!s_.finished()) {
      ++s_.stage_ticks;
    }
    return out;
  }

 private:
  Decision fallback_decision() const {
    const FallbackRule& rule = script_.fallbacks[*s_.preemption];
    return {rule.behavior, planners::make_goal(rule.behavior, obs_), true};
  }

  ExecutorState& s_;
  const ScheduleScript& script_;
  const Observation& obs_;
  std::int64_t tick_;
  const ExecutorConfig& config_;
};

}  // namespace

ExecutorState start_script(const ScheduleScript& script, const Observation& obs,
                           std::int64_t tick) {
  ExecutorState state;
  state.dist_origin = obs.dist_traveled;
  if (script.stages.empty()) {
    state.phase = Phase::done;
    return state;
  }
  ExecutorConfig config;
  Step(state, script, obs, tick, config).activate(0);
  return state;
}

Decision executor_tick(ExecutorState& state, const ScheduleScript& script, const Observation& obs,
                       std::int64_t tick, const ExecutorConfig& config) {
  return Step(state, script, obs, tick, config).run();
}

void ScriptMailbox::post(ScheduleScript script) {
  std::lock_guard<std::mutex> lock(mutex_);
  slot_ = std::move(script);
}

std::optional<ScheduleScript> ScriptMailbox::take() {
  std::lock_guard<std::mutex> lock(mutex_);
  std::optional<ScheduleScript> out = std::move(slot_);
  slot_.reset();
  return out;
}

bool ScriptMailbox::pending() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return slot_.has_value();
}

void Executor::install(ScheduleScript script, const Observation& obs, std::int64_t tick) {
  const bool superseding = script_ && !state_.finished();
  const int old_stage = state_.stage_index;
  script_ = std::move(script);
  state_ = start_script(*script_, obs, tick);
  if (superseding) {
    state_.events.insert(state_.events.begin(),
                         ExecutorEvent{tick, obs.time, EventKind::script_superseded, old_stage, {}});
  }
}

Decision Executor::tick(const Observation& obs, std::int64_t tick) {
  if (!script_) {
    return {planners::AtomicBehavior::lane_keeping,
            planners::make_goal(planners::AtomicBehavior::lane_keeping, obs), false};
  }
  return executor_tick(state_, *script_, obs, tick, config_);
}

}  // namespace scriptdrive::schedule
