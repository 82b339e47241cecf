#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "scriptdrive/benchmark.hpp"

namespace scriptdrive::bench {

using planners::AtomicBehavior;
using planners::PlannerGoal;
using world::Observation;

double front_ttc(const TickRecord& r) {
  if (!r.front) {
    return kTtcCap;
  }
  const double closing = -r.front->relative_speed;
  if (closing <= 0.0) {
    return kTtcCap;
  }
  return std::min(kTtcCap, r.front->gap / closing);
}

bool ttc_ok(const TickRecord& r) { return front_ttc(r) >= kTtcThreshold; }

bool speed_ok(const TickRecord& r) { return r.ego.speed <= r.speed_limit + kSpeedTolerance; }

bool direction_ok(const TickRecord& r) {
  return std::cos(r.ego.heading) * r.lane_direction > 0.0;
}

namespace {

template <typename Pred>
double fraction_of_ticks(const Trace& trace, Pred pred) {
  if (trace.records.empty()) {
    return 1.0;
  }
  std::size_t hits = 0;
  for (const TickRecord& r : trace.records) {
    hits += pred(r) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(trace.records.size());
}

}  // namespace

double metric_ttc(const Trace& trace) {
  return fraction_of_ticks(trace, ttc_ok);
}

double metric_speed(const Trace& trace) {
  return fraction_of_ticks(trace, speed_ok);
}

double metric_drivable(const Trace& trace) {
  return fraction_of_ticks(trace, [](const TickRecord& r) { return r.drivable; });
}

double metric_direction(const Trace& trace) {
  return fraction_of_ticks(trace, direction_ok);
}

double metric_progress(const Trace& trace, std::optional<double> expert_distance) {
  if (!expert_distance) {
    throw MissingExpert("progress needs an expert distance");
  }
  if (*expert_distance <= 0.0) {
    return 1.0;
  }
  return std::clamp(trace.end_distance / *expert_distance, 0.0, 1.0);
}

int metric_recognition(const std::vector<BehaviorSpec>& predicted,
                       const std::vector<BehaviorSpec>& truth) {
  return interpreter::behavior_types(predicted) == interpreter::behavior_types(truth) ? 1 : 0;
}

StageTracker::StageTracker(std::vector<BehaviorSpec> sequence, double dt)
    : sequence_(std::move(sequence)), dt_(dt) {}

void StageTracker::activate(const Observation& obs, std::int64_t tick) {
  active_ = true;
  started_ = tick;
  goal_.reset();
  const BehaviorSpec& s = sequence_[k_];
  try {
    goal_ = planners::make_goal(s.behavior, obs, s.target_speed);
  } catch (const planners::InfeasibleGoal&) {
  }
}

void StageTracker::update(const Observation& obs, std::int64_t tick) {
  rewards_.push_back(0.0);
  if (k_ >= m()) {
    return;
  }
  if (!active_) {
    activate(obs, tick);
  }
  if (!goal_) {
    return;
  }
  const double held = static_cast<double>(tick - started_) * dt_;
  if (planners::completion_predicate(*goal_, obs, held)) {
    rewards_.back() = 1.0 / m();
    ++k_;
    if (k_ < m()) {
      activate(obs, tick);
    }
  }
}

std::string Method::name() const {
  switch (kind) {
    case MethodKind::ours_mode3: return "ours_mode3";
    case MethodKind::mode2_baseline: return "mode2_baseline";
    case MethodKind::idm_only: return "idm_only";
    case MethodKind::single_planner:
      return "single_planner:" + std::string(planners::to_string(single));
  }
  return "?";
}

std::optional<Method> Method::parse(const std::string& text) {
  if (text == "ours_mode3" || text == "ours") {
    return Method{MethodKind::ours_mode3, AtomicBehavior::lane_keeping};
  }
  if (text == "mode2_baseline" || text == "mode2") {
    return Method{MethodKind::mode2_baseline, AtomicBehavior::lane_keeping};
  }
  if (text == "idm_only" || text == "idm") {
    return Method{MethodKind::idm_only, AtomicBehavior::lane_keeping};
  }
  const std::string prefix = "single_planner:";
  if (text.rfind(prefix, 0) == 0) {
    if (const auto b = planners::behavior_from_string(text.substr(prefix.size()))) {
      return Method{MethodKind::single_planner, *b};
    }
  }
  return std::nullopt;
}

namespace {

PlannerGoal goal_or_hold(const BehaviorSpec& spec, const Observation& obs) {
  try {
    return planners::make_goal(spec.behavior, obs, spec.target_speed);
  } catch (const planners::InfeasibleGoal&) {
    return planners::make_goal(AtomicBehavior::lane_keeping, obs);
  }
}

/// Single planners never switch behavior: a lane change with no lane to go to
/// degenerates into holding the current lane at the planner's own speed.
PlannerGoal single_planner_goal(AtomicBehavior behavior, const Observation& obs) {
  try {
    return planners::make_goal(behavior, obs);
  } catch (const planners::InfeasibleGoal&) {
    PlannerGoal goal;
    goal.behavior = behavior;
    goal.target_lane = obs.lane_index;
    return goal;
  }
}

std::int64_t delay_ticks(double seconds, double dt) {
  return static_cast<std::int64_t>(std::ceil(seconds / dt - 1e-9));
}

/// Reactive baseline: one behavior per query, applied after the delay.
struct Mode2State {
  struct Pending {
    std::int64_t apply_tick;
    BehaviorSpec spec;
  };
  std::deque<Pending> pending;
  std::vector<interpreter::HistoryEntry> history;
  std::optional<PlannerGoal> goal;
  std::int64_t goal_tick = 0;
};

world::ControlCommand idm_command(const Observation& obs, const world::WorldState& w,
                                  runtime::EgoController& controller) {
  world::IdmParams p = w.idm;
  p.desired_speed = obs.speed_limit;
  std::optional<world::LeaderInfo> leader;
  if (const auto& f = obs.slot(world::Slot::front)) {
    leader = world::LeaderInfo{f->gap, f->neighbor_speed};
  }
  const double accel = world::idm_acceleration(obs.ego.speed, leader, p);
  const control::LqrGains g = controller.tracker().gains_for(obs.ego.speed);
  const double e_y = obs.ego.y - obs.lane_center(obs.lane_index);
  const double steer = -(g.k_lat[0] * e_y + g.k_lat[1] * obs.ego.heading);
  return world::ControlCommand{accel, steer}.clamped(controller.config().planner.limits);
}

}  // namespace

double run_expert(const world::Scenario& scenario, std::uint64_t seed, double horizon,
                  const runtime::ControllerConfig& config) {
  world::WorldState w = scenario.build(seed);
  runtime::EgoController controller(config);
  const double dt = config.planner.dt;
  const auto steps = static_cast<std::int64_t>(std::llround(horizon / dt));
  for (std::int64_t t = 0; t < steps; ++t) {
    const Observation obs = world::observe(w);
    const auto cmd =
        controller.step(planners::make_goal(AtomicBehavior::lane_keeping, obs), obs);
    const auto out = runtime::advance(w, cmd, dt);
    if (out.collided || runtime::center_off_road(w)) {
      break;
    }
  }
  return w.ego_distance;
}

double ExpertCache::distance(const world::Scenario& scenario, std::uint64_t seed, double horizon) {
  const auto key = std::make_tuple(scenario.name, seed, std::llround(horizon * 1000.0));
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) {
      return it->second;
    }
  }
  const double d = run_expert(scenario, seed, horizon, config_);
  std::lock_guard<std::mutex> lock(mutex_);
  cache_.emplace(key, d);
  return d;
}

EpisodeReport run_episode(const EpisodeSpec& spec, const Method& method, EpisodeContext& ctx) {
  if (!spec.scenario) {
    throw CorpusError("episode " + spec.id + ": no scenario");
  }
  if (method.uses_interpreter() && !ctx.interpreter) {
    throw std::invalid_argument("method " + method.name() + " needs an interpreter");
  }
  if (!(spec.horizon > 0.0)) {
    throw std::invalid_argument("episode " + spec.id + ": horizon must be positive");
  }

  EpisodeReport rep;
  rep.id = spec.id;
  rep.method = method.name();
  rep.scenario = spec.scenario->name;
  rep.category = spec.category;
  rep.seed = spec.seed;
  rep.latency = spec.latency;

  const double dt = ctx.controller.planner.dt;
  const auto steps = static_cast<std::int64_t>(std::llround(spec.horizon / dt));
  world::WorldState w = spec.scenario->build(spec.seed);
  runtime::EgoController controller(ctx.controller);
  schedule::Executor executor(schedule::ExecutorConfig{dt});

  const Observation obs0 = world::observe(w);
  const interpreter::SceneDescription scene0 = interpreter::describe_scene(obs0);
  const auto& truth = spec.instruction.ground_truth;
  const int calls_before = ctx.interpreter ? ctx.interpreter->calls() : 0;

  std::optional<schedule::ScheduleScript> pending_script;
  std::int64_t install_tick = -1;
  if (method.kind == MethodKind::ours_mode3) {
    interpreter::InterpreterResponse resp = ctx.interpreter->interpret(spec.instruction, scene0);
    rep.predicted = resp.sequence;
    rep.script_text = resp.script_text;
    rep.intent_failed = resp.intent_failed;
    const double delay = spec.latency + (ctx.count_backend_latency ? resp.latency : 0.0);
    install_tick = delay_ticks(delay, dt);
    pending_script = std::move(resp.script);
    const int match = truth ? metric_recognition(resp.sequence, *truth) : 1;
    rep.recognition = resp.intent_failed ? 0 : match;
  } else {
    rep.recognition_applicable = false;
    rep.recognition = 1;
  }

  StageTracker tracker(truth ? *truth : rep.predicted, dt);
  rep.stages_total = tracker.m();

  PlannerGoal single_goal;
  if (method.kind == MethodKind::single_planner) {
    single_goal = single_planner_goal(method.single, obs0);
  }
  Mode2State mode2;
  const std::int64_t query_period = std::max<std::int64_t>(1, std::llround(1.0 / dt));
  const std::int64_t mode2_delay = delay_ticks(spec.latency, dt);

  rep.termination = "horizon";
  for (std::int64_t t = 0; t < steps; ++t) {
    const Observation obs = world::observe(w);
    if (t == install_tick) {
      executor.install(*pending_script, obs, t);
    }

    TickRecord rec = runtime::make_record(w, obs, spec.keep_vehicles);
    world::ControlCommand cmd;
    switch (method.kind) {
      case MethodKind::ours_mode3: {
        const schedule::Decision d = executor.tick(obs, t);
        const PlannerGoal goal =
            d.goal ? *d.goal : planners::make_goal(AtomicBehavior::lane_keeping, obs);
        cmd = controller.step(goal, obs);
        rec.behavior = goal.behavior;
        rec.from_fallback = d.from_fallback;
        if (executor.has_script()) {
          rec.phase = executor.state().phase;
          rec.stage_index = executor.state().stage_index;
          rec.completed = executor.state().completed;
        }
        break;
      }
      case MethodKind::mode2_baseline: {
        if (t % query_period == 0) {
          const interpreter::SceneDescription scene = interpreter::describe_scene(obs);
          const interpreter::StepRequest req{spec.instruction, scene0, scene, mode2.history};
          mode2.pending.push_back({t + mode2_delay, ctx.interpreter->next_behavior(req)});
        }
        while (!mode2.pending.empty() && mode2.pending.front().apply_tick <= t) {
          const BehaviorSpec next = mode2.pending.front().spec;
          mode2.pending.pop_front();
          const bool continuing = mode2.goal && !mode2.history.empty() &&
                                  mode2.history.back().behavior == next.behavior &&
                                  !mode2.history.back().completed;
          if (!continuing) {
            mode2.goal = goal_or_hold(next, obs);
            mode2.goal_tick = t;
          }
          mode2.history.push_back({next.behavior, false});
        }
        if (mode2.goal && !mode2.history.empty() && !mode2.history.back().completed &&
            planners::completion_predicate(*mode2.goal, obs,
                                           static_cast<double>(t - mode2.goal_tick) * dt)) {
          mode2.history.back().completed = true;
        }
        const PlannerGoal goal =
            mode2.goal ? *mode2.goal : planners::make_goal(AtomicBehavior::lane_keeping, obs);
        cmd = controller.step(goal, obs);
        rec.behavior = goal.behavior;
        break;
      }
      case MethodKind::idm_only:
        cmd = idm_command(obs, w, controller);
        rec.behavior = AtomicBehavior::lane_keeping;
        break;
      case MethodKind::single_planner:
        cmd = controller.step(single_goal, obs);
        rec.behavior = single_goal.behavior;
        break;
    }

    tracker.update(obs, t);
    rec.tracked = tracker.k();
    rec.command = cmd;
    const runtime::StepOutcome out = runtime::advance(w, cmd, dt);
    rec.collided = out.collided;
    rep.trace.records.push_back(std::move(rec));
    if (out.collided) {
      rep.termination = "collision";
      break;
    }
    if (runtime::center_off_road(w)) {
      rep.termination = "off_road";
      break;
    }
  }
  rep.trace.road = w.road;
  rep.trace.end_distance = w.ego_distance;
  rep.duration = static_cast<double>(rep.trace.records.size()) * dt;
  rep.emergencies = controller.emergencies();
  if (executor.has_script()) {
    rep.events = executor.state().events;
    rep.executor_completed = executor.state().completed;
  }
  rep.interpreter_calls = ctx.interpreter ? ctx.interpreter->calls() - calls_before : 0;

  rep.collision = rep.termination == "collision" ? 0 : 1;
  rep.ttc = metric_ttc(rep.trace);
  rep.speed = metric_speed(rep.trace);
  rep.drivable = metric_drivable(rep.trace);
  rep.direction = metric_direction(rep.trace);
  rep.progress = metric_progress(
      rep.trace, ctx.experts ? std::optional<double>(ctx.experts->distance(
                                   *spec.scenario, spec.seed, spec.horizon))
                             : std::nullopt);
  rep.stages_completed = tracker.k();

  // 1/m on every tick the stage counter advances. Our method is scored by its
  // own executor counter, the others by the trace tracker.
  const int m = tracker.m();
  std::vector<double> rewards;
  int k = 0;
  if (method.kind == MethodKind::ours_mode3) {
    int prev = 0;
    for (const TickRecord& r : rep.trace.records) {
      const int now = std::min(r.completed, m);
      rewards.push_back(m > 0 ? static_cast<double>(now - prev) / m : 0.0);
      prev = now;
    }
    k = prev;
  } else {
    rewards = tracker.rewards();
    k = tracker.k();
  }
  const double fraction = m > 0 ? static_cast<double>(k) / m : 0.0;
  rep.reward_sum = std::accumulate(rewards.begin(), rewards.end(), 0.0);
  if (std::abs(rep.reward_sum - fraction) > 1e-9) {
    throw std::logic_error("episode " + spec.id + ": stage rewards do not sum to the realization");
  }
  rep.realization = rep.recognition == 1 && rep.collision == 1 ? fraction : 0.0;
  return rep;
}

}  // namespace scriptdrive::bench
