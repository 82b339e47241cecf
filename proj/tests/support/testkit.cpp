#include "testkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace testkit {

using sd::planners::AtomicBehavior;
using sd::schedule::Atom;
using sd::schedule::CompareOp;
using sd::schedule::EventKind;
using sd::schedule::Operand;
using sd::schedule::Predicate;
using sd::world::Observation;
using sd::world::Slot;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int pick(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

bool coin(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

double round_to(double v, double step) { return std::round(v / step) * step; }

constexpr Atom kNumericAtoms[] = {
    Atom::speed,          Atom::lane,          Atom::elapsed,        Atom::total_elapsed,
    Atom::gap_front,      Atom::gap_rear,      Atom::gap_left_front, Atom::gap_left_rear,
    Atom::gap_right_front, Atom::gap_right_rear, Atom::ttc_front,     Atom::dist_traveled,
};
constexpr Atom kFlagAtoms[] = {Atom::at_leftmost, Atom::at_rightmost, Atom::stopped};

/// A literal in the range where the atom actually moves.
double literal_for(Rng& rng, Atom atom) {
  switch (atom) {
    case Atom::speed: return round_to(uniform(rng, 0.0, 20.0), 0.5);
    case Atom::lane: return pick(rng, 0, 3);
    case Atom::elapsed: return round_to(uniform(rng, 0.0, 4.0), 0.1);
    case Atom::total_elapsed: return round_to(uniform(rng, 0.0, 10.0), 0.1);
    case Atom::ttc_front: return round_to(uniform(rng, 0.0, 6.0), 0.25);
    case Atom::dist_traveled: return round_to(uniform(rng, 0.0, 150.0), 1.0);
    default: return round_to(uniform(rng, 0.0, 60.0), 0.5);
  }
}

/// Odd literals that still have to survive rendering.
double odd_literal(Rng& rng) {
  constexpr double kOdd[] = {0.0, -3.5, 0.001, 12345.678, 1e21, 2.5e-7, 0.1, 1.0 / 3.0};
  return kOdd[pick(rng, 0, 7)];
}

Operand atom_operand(Atom a) { return Operand{true, a, 0.0}; }
Operand number_operand(double v) { return Operand{false, Atom::speed, v}; }

Predicate random_leaf(Rng& rng) {
  if (coin(rng, 0.2)) {
    return Predicate::boolean(kFlagAtoms[pick(rng, 0, 2)]);
  }
  const Atom a = kNumericAtoms[pick(rng, 0, 11)];
  const auto op = static_cast<CompareOp>(pick(rng, 0, 4));
  const double lit = coin(rng, 0.05) ? odd_literal(rng) : literal_for(rng, a);
  const int shape = pick(rng, 0, 9);
  if (shape == 0) {
    return Predicate::compare(number_operand(lit), op, atom_operand(a));
  }
  if (shape == 1) {
    return Predicate::compare(atom_operand(a), op, atom_operand(kNumericAtoms[pick(rng, 0, 11)]));
  }
  return Predicate::compare(atom_operand(a), op, number_operand(lit));
}

}  // namespace

std::string data_dir() { return SCRIPTDRIVE_TEST_DATA_DIR; }

Predicate random_predicate(Rng& rng, int depth) {
  if (depth <= 1 || coin(rng, 0.35)) {
    return random_leaf(rng);
  }
  const int kind = pick(rng, 0, 4);
  if (kind == 4) {
    return Predicate::negation(random_predicate(rng, depth - 1));
  }
  std::vector<Predicate> parts;
  const int n = pick(rng, 2, 3);
  for (int i = 0; i < n; ++i) {
    parts.push_back(random_predicate(rng, depth - 1));
  }
  return kind < 2 ? Predicate::all(std::move(parts)) : Predicate::any(std::move(parts));
}

sd::schedule::ScheduleScript random_script(Rng& rng) {
  sd::schedule::ScheduleScript s;
  const int stages = pick(rng, 1, 5);
  constexpr double kTimeouts[] = {0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0};
  for (int i = 0; i < stages; ++i) {
    sd::schedule::Stage st;
    st.behavior = sd::planners::kAllBehaviors[pick(rng, 0, 4)];
    if ((st.behavior == AtomicBehavior::accelerate || st.behavior == AtomicBehavior::decelerate) &&
        coin(rng, 0.5)) {
      st.target_speed = round_to(uniform(rng, 0.0, 20.0), 0.5);
    }
    if (coin(rng, 0.35)) {
      st.when = random_predicate(rng, 3);
    }
    if (coin(rng, 0.4)) {
      st.until = coin(rng, 0.5)
                     ? Predicate::compare(atom_operand(Atom::elapsed), CompareOp::ge,
                                          number_operand(literal_for(rng, Atom::elapsed)))
                     : random_predicate(rng, 3);
    }
    st.timeout = kTimeouts[pick(rng, 0, 6)];
    st.on_timeout = coin(rng, 0.15) ? sd::schedule::TimeoutPolicy::fail
                                    : sd::schedule::TimeoutPolicy::skip;
    s.stages.push_back(std::move(st));
  }
  const int fallbacks = pick(rng, 0, 3);
  for (int i = 0; i < fallbacks; ++i) {
    sd::schedule::FallbackRule f;
    f.behavior = coin(rng, 0.5) ? AtomicBehavior::decelerate : AtomicBehavior::lane_keeping;
    // Keep most fallbacks rare enough that stages still get to run.
    f.when = coin(rng, 0.6) ? Predicate::all({random_predicate(rng, 2), random_leaf(rng)})
                            : random_predicate(rng, 3);
    f.clear_after = coin(rng, 0.4) ? sd::schedule::kDefaultClearAfter : pick(rng, 1, 8);
    s.fallbacks.push_back(std::move(f));
  }
  s.source_text = sd::schedule::render(s);
  return s;
}

ObservationStream::ObservationStream(Rng& rng)
    : rng_(rng),
      lane_count_(pick(rng, 2, 4)),
      limit_(round_to(uniform(rng, 10.0, 20.0), 0.5)),
      speed_(uniform(rng, 0.0, 20.0)),
      oncoming_left_(coin(rng, 0.2)) {
  lane_ = pick(rng, 0, lane_count_ - 1);
}

Observation ObservationStream::next() {
  Observation obs;
  if (coin(rng_, 0.04)) {
    lane_ = std::clamp(lane_ + (coin(rng_, 0.5) ? 1 : -1), 0, lane_count_ - 1);
  }
  speed_ = std::clamp(speed_ + uniform(rng_, -0.8, 0.8), 0.0, limit_ + 2.0);
  if (coin(rng_, 0.02)) {
    speed_ = 0.0;
  }
  obs.lane_count = lane_count_;
  obs.lane_width = 3.5;
  obs.speed_limit = limit_;
  obs.lane_index = lane_;
  obs.ego.id = 0;
  obs.ego.kind = sd::world::VehicleKind::ego;
  obs.ego.speed = speed_;
  obs.ego.x = dist_;
  obs.ego.y = lane_ * 3.5 + (coin(rng_, 0.6) ? uniform(rng_, -0.2, 0.2) : uniform(rng_, -1.5, 1.5));
  obs.ego.heading = coin(rng_, 0.6) ? uniform(rng_, -0.03, 0.03) : uniform(rng_, -0.2, 0.2);
  const int usable = oncoming_left_ ? lane_count_ - 1 : lane_count_;
  obs.left_open = lane_ + 1 < usable;
  obs.right_open = lane_ > 0;
  obs.lanes_left = std::max(0, usable - 1 - lane_);
  obs.lanes_right = lane_;
  for (Slot slot : sd::world::kAllSlots) {
    if (!coin(rng_, 0.5)) {
      continue;
    }
    sd::world::Neighbor n;
    n.id = 1 + static_cast<int>(slot);
    n.gap = round_to(uniform(rng_, 0.0, 60.0), 0.01);
    n.neighbor_speed = std::max(0.0, speed_ + uniform(rng_, -8.0, 4.0));
    n.relative_speed = n.neighbor_speed - speed_;
    const bool ahead = slot == Slot::front || slot == Slot::left_front || slot == Slot::right_front;
    const int side = slot == Slot::left_front || slot == Slot::left_rear     ? 1
                     : slot == Slot::right_front || slot == Slot::right_rear ? -1
                                                                             : 0;
    n.lane = lane_ + side;
    n.raw_gap = n.gap;
    n.center_dx = (ahead ? 1.0 : -1.0) * (n.gap + 0.5 * (obs.ego.length + n.length));
    obs.slot(slot) = n;
  }
  obs.time = static_cast<double>(tick_) * 0.1;
  obs.dist_traveled = dist_;
  dist_ += speed_ * 0.1;
  ++tick_;
  return obs;
}

Observation random_observation(Rng& rng) {
  ObservationStream stream(rng);
  const int skip = pick(rng, 0, 30);
  for (int i = 0; i < skip; ++i) {
    stream.next();
  }
  Observation obs = stream.next();
  if (coin(rng, 0.1)) {
    obs.ego.speed = 0.05;
  }
  return obs;
}

// ---------------------------------------------------------------- predicate oracle

namespace {

double oracle_gap(const Observation& obs, Slot slot) {
  const auto& n = obs.neighbors[static_cast<std::size_t>(slot)];
  return n.has_value() ? n->gap : kInf;
}

double oracle_atom(Atom atom, const Observation& obs, const Clocks& c) {
  switch (atom) {
    case Atom::speed: return obs.ego.speed;
    case Atom::lane: return static_cast<double>(obs.lane_index);
    case Atom::elapsed: return c.stage;
    case Atom::total_elapsed: return c.total;
    case Atom::dist_traveled: return c.dist;
    case Atom::gap_front: return oracle_gap(obs, Slot::front);
    case Atom::gap_rear: return oracle_gap(obs, Slot::rear);
    case Atom::gap_left_front: return oracle_gap(obs, Slot::left_front);
    case Atom::gap_left_rear: return oracle_gap(obs, Slot::left_rear);
    case Atom::gap_right_front: return oracle_gap(obs, Slot::right_front);
    case Atom::gap_right_rear: return oracle_gap(obs, Slot::right_rear);
    case Atom::ttc_front: {
      const auto& f = obs.neighbors[0];
      if (!f || f->relative_speed >= 0.0) {
        return kInf;
      }
      return f->gap / std::max(-f->relative_speed, 1e-6);
    }
    case Atom::at_leftmost: return obs.left_open ? 0.0 : 1.0;
    case Atom::at_rightmost: return obs.right_open ? 0.0 : 1.0;
    case Atom::stopped: return obs.ego.speed < 0.1 ? 1.0 : 0.0;
  }
  return std::nan("");
}

}  // namespace

bool oracle_eval(const Predicate& p, const Observation& obs, const Clocks& clocks) {
  if (p.kind == Predicate::Kind::flag) {
    return oracle_atom(p.flag, obs, clocks) == 1.0;
  }
  if (p.kind == Predicate::Kind::negate) {
    return !oracle_eval(p.children.at(0), obs, clocks);
  }
  if (p.kind == Predicate::Kind::all_of || p.kind == Predicate::Kind::any_of) {
    int hits = 0;
    for (const Predicate& c : p.children) {
      hits += oracle_eval(c, obs, clocks) ? 1 : 0;
    }
    return p.kind == Predicate::Kind::all_of ? hits == static_cast<int>(p.children.size())
                                             : hits > 0;
  }
  const double a = p.lhs.is_atom ? oracle_atom(p.lhs.atom, obs, clocks) : p.lhs.number;
  const double b = p.rhs.is_atom ? oracle_atom(p.rhs.atom, obs, clocks) : p.rhs.number;
  switch (p.op) {
    case CompareOp::lt: return a < b;
    case CompareOp::le: return a <= b;
    case CompareOp::gt: return a > b;
    case CompareOp::ge: return a >= b;
    case CompareOp::eq: return a == b;
  }
  return false;
}

// ---------------------------------------------------------------- executor oracle

OracleExecutor::OracleExecutor(const sd::schedule::ScheduleScript& script, const Observation& obs,
                               std::int64_t tick, double dt)
    : script_(script), dt_(dt), origin_(obs.dist_traveled) {
  enter(0, obs, tick);
}

void OracleExecutor::note(std::int64_t tick, double time, EventKind kind, int index) {
  sd::schedule::ExecutorEvent e;
  e.tick = tick;
  e.time = time;
  e.kind = kind;
  e.stage = index;
  log_.push_back(e);
}

void OracleExecutor::form_goal(const Observation& obs) {
  const auto& st = script_.stages[index_];
  try {
    goal_ = sd::planners::make_goal(st.behavior, obs, st.target_speed);
  } catch (const sd::planners::InfeasibleGoal&) {
    goal_.reset();
  }
}

void OracleExecutor::enter(int index, const Observation& obs, std::int64_t tick) {
  index_ = index;
  stage_ticks_ = 0;
  goal_.reset();
  note(tick, obs.time, EventKind::stage_start, index);
  if (script_.stages[index].when) {
    mode_ = Mode::waiting;
  } else {
    mode_ = Mode::running;
    form_goal(obs);
  }
}

void OracleExecutor::next_stage(const Observation& obs, std::int64_t tick) {
  const int m = static_cast<int>(script_.stages.size());
  if (index_ + 1 == m) {
    index_ = m;
    mode_ = Mode::done;
    note(tick, obs.time, EventKind::script_done, m);
  } else {
    enter(index_ + 1, obs, tick);
  }
}

OracleOutput OracleExecutor::hold(const Observation& obs) const {
  return {AtomicBehavior::lane_keeping, sd::planners::make_goal(AtomicBehavior::lane_keeping, obs),
          false};
}

OracleOutput OracleExecutor::current(const Observation& obs) const {
  if ((mode_ == Mode::running || mode_ == Mode::done) && goal_) {
    return {goal_->behavior, goal_, false};
  }
  return hold(obs);
}

OracleOutput OracleExecutor::step(const Observation& obs, std::int64_t tick) {
  const Clocks c{static_cast<double>(stage_ticks_) * dt_, static_cast<double>(total_ticks_) * dt_,
                 obs.dist_traveled - origin_};
  ++total_ticks_;

  int hit = -1;
  for (std::size_t i = 0; i < script_.fallbacks.size() && hit < 0; ++i) {
    if (oracle_eval(script_.fallbacks[i].when, obs, c)) {
      hit = static_cast<int>(i);
    }
  }
  auto fallback_out = [&](int rule) {
    const AtomicBehavior b = script_.fallbacks[rule].behavior;
    return OracleOutput{b, sd::planners::make_goal(b, obs), true};
  };
  if (hit >= 0) {
    if (rule_ != hit) {
      if (rule_ >= 0) {
        note(tick, obs.time, EventKind::fallback_exit, rule_);
      }
      note(tick, obs.time, EventKind::fallback_enter, hit);
      rule_ = hit;
    }
    quiet_ = 0;
    return fallback_out(hit);
  }
  if (rule_ >= 0) {
    ++quiet_;
    if (quiet_ < script_.fallbacks[rule_].clear_after) {
      return fallback_out(rule_);
    }
    note(tick, obs.time, EventKind::fallback_exit, rule_);
    rule_ = -1;
    quiet_ = 0;
  }
  if (finished()) {
    return current(obs);
  }

  const auto& st = script_.stages[index_];
  auto give_up = [&](EventKind why) {
    note(tick, obs.time, why, index_);
    goal_.reset();
    if (st.on_timeout == sd::schedule::TimeoutPolicy::fail) {
      mode_ = Mode::failed;
      note(tick, obs.time, EventKind::script_failed, index_);
      return hold(obs);
    }
    next_stage(obs, tick);
    return current(obs);
  };

  OracleOutput out;
  if (mode_ == Mode::waiting) {
    if (oracle_eval(*st.when, obs, c)) {
      note(tick, obs.time, EventKind::trigger_fired, index_);
      mode_ = Mode::running;
      form_goal(obs);
      out = current(obs);
    } else if (c.stage >= st.timeout) {
      out = give_up(EventKind::stage_timeout);
    } else {
      out = hold(obs);
    }
  } else if (!goal_) {
    out = give_up(EventKind::stage_infeasible);
  } else {
    const bool reached = st.until ? oracle_eval(*st.until, obs, c)
                                  : sd::planners::completion_predicate(*goal_, obs, c.stage);
    if (reached) {
      ++completed_;
      note(tick, obs.time, EventKind::stage_complete, index_);
      next_stage(obs, tick);
      out = current(obs);
    } else if (c.stage >= st.timeout) {
      out = give_up(EventKind::stage_timeout);
    } else {
      out = current(obs);
    }
  }
  if (!finished()) {
    ++stage_ticks_;
  }
  return out;
}

namespace {

sd::schedule::Phase oracle_phase(const OracleExecutor& o) {
  using sd::schedule::Phase;
  if (o.preempted()) {
    return Phase::preempted;
  }
  switch (o.mode()) {
    case OracleExecutor::Mode::waiting: return Phase::waiting_trigger;
    case OracleExecutor::Mode::running: return Phase::running;
    case OracleExecutor::Mode::done: return Phase::done;
    case OracleExecutor::Mode::failed: return Phase::failed;
  }
  return Phase::failed;
}

bool same_events(const std::vector<sd::schedule::ExecutorEvent>& a,
                 const std::vector<sd::schedule::ExecutorEvent>& b) {
  if (a.size() != b.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].tick != b[i].tick || a[i].kind != b[i].kind || a[i].stage != b[i].stage) {
      return false;
    }
  }
  return true;
}

}  // namespace

std::optional<std::string> check_executor_pair(std::uint64_t seed) {
  Rng rng(seed);
  const sd::schedule::ScheduleScript script = random_script(rng);
  ObservationStream stream(rng);
  constexpr double dt = 0.1;
  constexpr int kTicks = 400;

  long bound = 0;
  for (const auto& st : script.stages) {
    bound += static_cast<long>(std::ceil(st.timeout / dt - 1e-9)) + 2;
  }

  Observation obs = stream.next();
  sd::schedule::Executor ex(sd::schedule::ExecutorConfig{dt});
  ex.install(script, obs, 0);
  OracleExecutor oracle(script, obs, 0, dt);

  auto fail = [&](std::int64_t t, const std::string& what) {
    std::ostringstream out;
    out << "seed " << seed << " tick " << t << ": " << what << "\nscript:\n" << script.source_text;
    return out.str();
  };

  int active_rule = -1;
  int quiet = 0;
  long free_ticks = 0;
  for (std::int64_t t = 0; t < kTicks; ++t) {
    if (t > 0) {
      obs = stream.next();
    }
    const sd::schedule::ExecutorState before = ex.state();
    const sd::schedule::EvalContext ctx{obs, before.stage_clock(dt),
                                        static_cast<double>(before.total_ticks) * dt,
                                        obs.dist_traveled - before.dist_origin};
    int first = -1;
    for (std::size_t i = 0; i < script.fallbacks.size() && first < 0; ++i) {
      if (sd::schedule::eval_predicate(script.fallbacks[i].when, ctx)) {
        first = static_cast<int>(i);
      }
    }

    const sd::schedule::Decision d = ex.tick(obs, t);
    const OracleOutput o = oracle.step(obs, t);
    const auto& after = ex.state();

    if (d.behavior != o.behavior || d.from_fallback != o.from_fallback || d.goal != o.goal) {
      return fail(t, "decision differs from oracle (executor " +
                         std::string(sd::planners::to_string(d.behavior)) + ", oracle " +
                         std::string(sd::planners::to_string(o.behavior)) + ")");
    }
    if (after.completed != oracle.completed() || after.stage_index != oracle.index() ||
        after.phase != oracle_phase(oracle)) {
      return fail(t, "state differs from oracle: phase " +
                         std::string(sd::schedule::to_string(after.phase)) + " vs " +
                         std::string(sd::schedule::to_string(oracle_phase(oracle))));
    }
    if (!same_events(after.events, oracle.log())) {
      return fail(t, "event log differs from oracle");
    }
    // Stage monotonicity.
    const int dk = after.completed - before.completed;
    if (dk < 0 || dk > 1 || after.stage_index < before.stage_index) {
      return fail(t, "stage counter not monotone");
    }
    // Fallback supremacy.
    if (first >= 0 &&
        (!d.from_fallback || d.behavior != script.fallbacks[static_cast<std::size_t>(first)].behavior)) {
      return fail(t, "a fallback held but the stage behavior was emitted");
    }
    // Hysteresis.
    if (first >= 0) {
      active_rule = first;
      quiet = 0;
    } else if (active_rule >= 0) {
      ++quiet;
      const auto& rule = script.fallbacks[static_cast<std::size_t>(active_rule)];
      const bool expect_fallback = quiet < rule.clear_after;
      if (d.from_fallback != expect_fallback ||
          (expect_fallback && d.behavior != rule.behavior)) {
        return fail(t, "fallback released after " + std::to_string(quiet) +
                           " clear ticks, clear_after " + std::to_string(rule.clear_after));
      }
      if (!expect_fallback) {
        active_rule = -1;
        quiet = 0;
      }
    } else if (d.from_fallback) {
      return fail(t, "fallback emitted with no rule active");
    }
    // Liveness: ticks not spent under preemption are bounded by the timeouts.
    if (!before.finished() && !d.from_fallback) {
      ++free_ticks;
      if (free_ticks > bound && !after.finished()) {
        return fail(t, "script still unfinished after " + std::to_string(free_ticks) +
                           " unpreempted ticks");
      }
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- numerical kernels

double mpc_fixed_point_cost() {
  sd::planners::PlannerConfig cfg;
  const std::vector<sd::planners::ReferencePoint> ref(cfg.horizon_steps, {3.5, 12.0});
  sd::planners::MpcProblem pr = sd::planners::make_problem({0.0, 3.5, 0.0, 12.0}, ref, cfg);
  return sd::planners::solve_mpc(pr).cost;
}

double mpc_reintegration_error(int trials, std::uint64_t seed) {
  Rng rng(seed);
  sd::planners::PlannerConfig cfg;
  double worst = 0.0;
  for (int i = 0; i < trials; ++i) {
    const Observation obs = random_observation(rng);
    const auto behavior = sd::planners::kAllBehaviors[pick(rng, 0, 4)];
    sd::planners::Trajectory traj;
    try {
      traj = sd::planners::plan(behavior, obs, std::nullopt, cfg);
    } catch (const sd::planners::InfeasibleGoal&) {
      continue;
    } catch (const sd::planners::SolverDiverged&) {
      traj = sd::planners::emergency_trajectory(obs, cfg);  // what the controller tracks then
    }
    const auto poses = sd::planners::rollout(traj.poses.front(), traj.feedforward, cfg.wheelbase,
                                             cfg.dt);
    for (std::size_t k = 0; k < poses.size(); ++k) {
      worst = std::max({worst, std::abs(poses[k].x - traj.poses[k].x),
                        std::abs(poses[k].y - traj.poses[k].y)});
    }
  }
  return worst;
}

double dare_scalar_error() {
  const Eigen::MatrixXd one = Eigen::MatrixXd::Identity(1, 1);
  const auto sol = sd::control::solve_dare(one, one, one, one);
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  return std::max(std::abs(sol.p(0, 0) - p), std::abs(sol.k(0, 0) - p / (1.0 + p)));
}

double lqr_settled_error(double speed, double offset, double settle, double duration) {
  sd::control::LqrTracker tracker;
  const auto& cfg = tracker.config();
  sd::world::VehicleState ego;
  ego.kind = sd::world::VehicleKind::ego;
  ego.y = offset;
  ego.speed = speed;
  const int steps = static_cast<int>(std::lround(duration / cfg.dt));
  double worst = 0.0;
  for (int t = 0; t < steps; ++t) {
    // Straight reference along y = 0, re-anchored at the ego every tick.
    sd::planners::Trajectory ref;
    ref.horizon_steps = 30;
    ref.dt = cfg.dt;
    ref.feedforward.assign(30, {});
    for (int k = 0; k <= 30; ++k) {
      ref.poses.push_back({ego.x + speed * k * cfg.dt, 0.0, 0.0, speed});
    }
    const auto cmd = tracker.track(ref, ego, 0);
    const sd::world::Pose next =
        sd::world::bicycle_step({ego.x, ego.y, ego.heading, ego.speed}, cmd, cfg.wheelbase, cfg.dt);
    ego.x = next.x;
    ego.y = next.y;
    ego.heading = next.heading;
    ego.speed = next.speed;
    if ((t + 1) * cfg.dt >= settle - 1e-9) {
      worst = std::max(worst, std::abs(ego.y));
    }
  }
  return worst;
}

double idm_equilibrium_error() {
  sd::world::IdmParams p;
  double worst = 0.0;
  for (double v0 = 1.0; v0 <= 40.0; v0 += 0.5) {
    p.desired_speed = v0;
    worst = std::max(worst, std::abs(sd::world::idm_acceleration(v0, std::nullopt, p)));
  }
  return worst;
}

// ---------------------------------------------------------------- metric oracles

namespace {

double ratio(long hits, std::size_t n) {
  return n == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(n);
}

bool footprint_on_road(const sd::world::VehicleState& v, const sd::world::RoadNetwork& road) {
  const double reach = std::abs(std::sin(v.heading)) * v.length / 2.0 +
                       std::abs(std::cos(v.heading)) * v.width / 2.0;
  const double lo = -road.lane_width / 2.0;
  const double hi = (road.lane_count - 0.5) * road.lane_width;
  return v.y - reach >= lo && v.y + reach <= hi;
}

int lane_of(double y, const sd::world::RoadNetwork& road) {
  const long lane = std::lround(y / road.lane_width);
  return static_cast<int>(std::max(0L, std::min<long>(lane, road.lane_count - 1)));
}

Observation rebuild(const sd::runtime::TickRecord& rec, const sd::world::RoadNetwork& road) {
  sd::world::WorldState w;
  w.road = road;
  w.vehicles = rec.vehicles;
  w.time = rec.time;
  w.tick = rec.tick;
  w.ego_distance = rec.distance;
  return sd::world::observe(w);
}

}  // namespace

BruteMetrics brute_metrics(const sd::runtime::Trace& trace, double expert_distance) {
  BruteMetrics m;
  long ttc = 0, drivable = 0, speed = 0, direction = 0;
  for (const auto& r : trace.records) {
    if (r.collided) {
      m.collision = 0;
    }
    bool safe_ttc = true;
    if (r.front && r.front->relative_speed < 0.0) {
      safe_ttc = r.front->gap / -r.front->relative_speed >= 1.0;
    }
    ttc += safe_ttc;
    drivable += footprint_on_road(r.ego, trace.road);
    speed += r.ego.speed <= r.speed_limit + 0.5;
    const int lane = lane_of(r.ego.y, trace.road);
    int dir = 1;
    if (lane < static_cast<int>(trace.road.lane_directions.size()) &&
        trace.road.lane_directions[lane] < 0) {
      dir = -1;
    }
    direction += dir * std::cos(r.ego.heading) > 0.0;
  }
  const std::size_t n = trace.records.size();
  m.ttc = ratio(ttc, n);
  m.drivable = ratio(drivable, n);
  m.speed = ratio(speed, n);
  m.direction = ratio(direction, n);
  if (expert_distance <= 0.0) {
    m.progress = 1.0;
  } else {
    m.progress = std::min(1.0, std::max(0.0, trace.end_distance / expert_distance));
  }
  return m;
}

int brute_recognition(const std::vector<sd::interpreter::BehaviorSpec>& predicted,
                      const std::vector<sd::interpreter::BehaviorSpec>& truth) {
  if (predicted.size() != truth.size()) {
    return 0;
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i].behavior != truth[i].behavior) {
      return 0;
    }
  }
  return 1;
}

int brute_tracker_k(const sd::runtime::Trace& trace,
                    const std::vector<sd::interpreter::BehaviorSpec>& truth, double dt) {
  const int m = static_cast<int>(truth.size());
  int k = 0;
  bool started = false;
  std::int64_t since = 0;
  std::optional<sd::planners::PlannerGoal> goal;
  auto form = [&](const Observation& obs, std::int64_t tick) {
    since = tick;
    goal.reset();
    try {
      goal = sd::planners::make_goal(truth[k].behavior, obs, truth[k].target_speed);
    } catch (const sd::planners::InfeasibleGoal&) {
    }
  };
  for (const auto& rec : trace.records) {
    if (k == m) {
      break;
    }
    const Observation obs = rebuild(rec, trace.road);
    if (!started) {
      started = true;
      form(obs, rec.tick);
    }
    if (goal && sd::planners::completion_predicate(*goal, obs,
                                                   static_cast<double>(rec.tick - since) * dt)) {
      ++k;
      if (k < m) {
        form(obs, rec.tick);
      }
    }
  }
  return k;
}

sd::runtime::Trace random_trace(Rng& rng) {
  sd::runtime::Trace tr;
  tr.road.lane_count = pick(rng, 1, 4);
  tr.road.speed_limit = round_to(uniform(rng, 8.0, 25.0), 0.5);
  if (tr.road.lane_count > 1 && coin(rng, 0.3)) {
    tr.road.lane_directions.assign(static_cast<std::size_t>(tr.road.lane_count), 1);
    tr.road.lane_directions.back() = -1;
  }
  const int n = pick(rng, 0, 300);
  double distance = 0.0;
  for (int i = 0; i < n; ++i) {
    sd::runtime::TickRecord r;
    r.tick = i;
    r.time = i * 0.1;
    r.ego.kind = sd::world::VehicleKind::ego;
    r.ego.x = distance;
    r.ego.y = uniform(rng, tr.road.right_edge() - 1.5, tr.road.left_edge() + 1.5);
    r.ego.heading = coin(rng, 0.85) ? uniform(rng, -0.3, 0.3) : uniform(rng, -M_PI, M_PI);
    r.ego.speed = std::max(0.0, tr.road.speed_limit + uniform(rng, -6.0, 2.0));
    r.lane_index = tr.road.nearest_lane(r.ego.y);
    r.lane_direction = tr.road.direction(r.lane_index);
    r.speed_limit = tr.road.speed_limit;
    if (coin(rng, 0.7)) {
      sd::world::Neighbor f;
      f.gap = uniform(rng, 0.0, 40.0);
      f.relative_speed = coin(rng, 0.05) ? 0.0 : uniform(rng, -12.0, 5.0);
      f.neighbor_speed = r.ego.speed + f.relative_speed;
      r.front = f;
    }
    r.distance = distance;
    sd::world::WorldState w;
    w.road = tr.road;
    w.vehicles = {r.ego};
    r.drivable = sd::world::check_drivable(w);
    r.collided = i == n - 1 && coin(rng, 0.2);
    distance += r.ego.speed * 0.1;
    tr.records.push_back(std::move(r));
  }
  tr.end_distance = distance;
  return tr;
}

namespace {

std::optional<std::string> compare_time_ratios(const sd::runtime::Trace& trace,
                                               const BruteMetrics& b) {
  auto mismatch = [](const char* name, double pipeline, double brute) {
    std::ostringstream out;
    out.precision(17);
    out << name << ": pipeline " << pipeline << " brute force " << brute;
    return out.str();
  };
  if (sd::bench::metric_ttc(trace) != b.ttc) {
    return mismatch("ttc", sd::bench::metric_ttc(trace), b.ttc);
  }
  if (sd::bench::metric_drivable(trace) != b.drivable) {
    return mismatch("drivable", sd::bench::metric_drivable(trace), b.drivable);
  }
  if (sd::bench::metric_speed(trace) != b.speed) {
    return mismatch("speed", sd::bench::metric_speed(trace), b.speed);
  }
  if (sd::bench::metric_direction(trace) != b.direction) {
    return mismatch("direction", sd::bench::metric_direction(trace), b.direction);
  }
  return std::nullopt;
}

}  // namespace

std::optional<std::string> check_episode_metrics(
    const sd::bench::EpisodeReport& rep, const std::vector<sd::interpreter::BehaviorSpec>& truth,
    double expert_distance) {
  const BruteMetrics b = brute_metrics(rep.trace, expert_distance);
  if (auto bad = compare_time_ratios(rep.trace, b)) {
    return rep.id + " " + rep.method + ": " + *bad;
  }
  if (rep.ttc != b.ttc || rep.drivable != b.drivable || rep.speed != b.speed ||
      rep.direction != b.direction) {
    return rep.id + " " + rep.method + ": report fields differ from the trace scan";
  }
  if (rep.collision != b.collision) {
    return rep.id + " " + rep.method + ": collision";
  }
  if (rep.progress != b.progress) {
    return rep.id + " " + rep.method + ": progress";
  }
  const bool ours = rep.method == "ours_mode3";
  const int recognition = ours ? (!rep.intent_failed && brute_recognition(rep.predicted, truth)) : 1;
  if (rep.recognition != recognition) {
    return rep.id + " " + rep.method + ": recognition";
  }
  const int m = static_cast<int>(truth.size());
  int k = 0;
  if (ours) {
    for (const auto& e : rep.events) {
      k += e.kind == EventKind::stage_complete;
    }
    k = std::min(k, m);
  } else {
    k = brute_tracker_k(rep.trace, truth);
  }
  const double realization =
      recognition == 1 && b.collision == 1 && m > 0 ? static_cast<double>(k) / m : 0.0;
  if (rep.realization != realization) {
    std::ostringstream out;
    out << rep.id << " " << rep.method << ": realization pipeline " << rep.realization
        << " brute force " << realization;
    return out.str();
  }
  return std::nullopt;
}

std::optional<std::string> check_synthetic_metrics(std::uint64_t seed) {
  Rng rng(seed);
  const sd::runtime::Trace trace = random_trace(rng);
  const double expert = coin(rng, 0.1) ? 0.0 : uniform(rng, 1.0, 600.0);
  const BruteMetrics b = brute_metrics(trace, expert);
  if (auto bad = compare_time_ratios(trace, b)) {
    return "seed " + std::to_string(seed) + ": " + *bad;
  }
  if (sd::bench::metric_progress(trace, expert) != b.progress) {
    return "seed " + std::to_string(seed) + ": progress";
  }
  std::vector<sd::interpreter::BehaviorSpec> predicted, truth;
  const int n = pick(rng, 1, 4);
  for (int i = 0; i < n; ++i) {
    truth.push_back({sd::planners::kAllBehaviors[pick(rng, 0, 4)], std::nullopt});
  }
  predicted = truth;
  if (coin(rng, 0.5)) {
    if (coin(rng, 0.5)) {
      predicted.pop_back();
    } else {
      predicted[pick(rng, 0, n - 1)].behavior = sd::planners::kAllBehaviors[pick(rng, 0, 4)];
    }
  }
  if (coin(rng, 0.3)) {
    predicted.front().target_speed = 3.0;  // targets do not count
  }
  if (sd::bench::metric_recognition(predicted, truth) != brute_recognition(predicted, truth)) {
    return "seed " + std::to_string(seed) + ": recognition";
  }
  return std::nullopt;
}

std::optional<std::string> check_random_episode(std::uint64_t seed, const sd::bench::Corpus& corpus,
                                                sd::bench::ExpertCache& experts) {
  Rng rng(seed);
  const auto& entry = corpus.entries[static_cast<std::size_t>(
      pick(rng, 0, static_cast<int>(corpus.entries.size()) - 1))];
  const sd::world::Scenario scenario = sd::world::load_scenario(corpus.base_dir / entry.scenario);
  sd::bench::Method method;
  switch (pick(rng, 0, 3)) {
    case 0: method.kind = sd::bench::MethodKind::ours_mode3; break;
    case 1: method.kind = sd::bench::MethodKind::mode2_baseline; break;
    case 2: method.kind = sd::bench::MethodKind::idm_only; break;
    default:
      method.kind = sd::bench::MethodKind::single_planner;
      method.single = sd::planners::kAllBehaviors[pick(rng, 0, 4)];
  }
  constexpr double kLatencies[] = {0.0, 0.0, 0.0, 1.0, 2.0};
  sd::bench::EpisodeSpec spec;
  spec.id = entry.instruction.id;
  spec.category = entry.category;
  spec.scenario = &scenario;
  spec.instruction = entry.instruction;
  spec.seed = static_cast<std::uint64_t>(pick(rng, 1, 5));
  spec.horizon = round_to(uniform(rng, 8.0, 25.0), 0.1);
  spec.latency = kLatencies[pick(rng, 0, 4)];
  spec.keep_vehicles = true;

  sd::interpreter::StubInterpreter stub;
  sd::bench::EpisodeContext ctx;
  ctx.interpreter = &stub;
  ctx.experts = &experts;
  const auto rep = sd::bench::run_episode(spec, method, ctx);
  return check_episode_metrics(rep, *entry.instruction.ground_truth,
                               experts.distance(scenario, spec.seed, spec.horizon));
}

}  // namespace testkit
