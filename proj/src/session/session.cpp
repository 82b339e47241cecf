#include "scriptdrive/session.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "scriptdrive/benchmark.hpp"

namespace scriptdrive::session {

using nlohmann::json;

std::string_view to_string(Status s) {
  switch (s) {
    case Status::idle: return "idle";
    case Status::running: return "running";
    case Status::paused: return "paused";
    case Status::ended: return "ended";
  }
  return "?";
}

std::optional<Action> action_from_string(std::string_view text) {
  if (text == "start") return Action::start;
  if (text == "pause") return Action::pause;
  if (text == "reset") return Action::reset;
  if (text == "set_speed_factor") return Action::set_speed_factor;
  return std::nullopt;
}

namespace {

double ratio(std::int64_t hits, std::int64_t ticks) {
  return ticks == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(ticks);
}

}  // namespace

std::string frame_json(const Frame& f) {
  json j;
  j["schema"] = kFrameSchemaVersion;
  j["type"] = f.snapshot ? "snapshot" : "frame";
  j["seq"] = f.seq;
  j["tick"] = f.tick;
  j["time"] = f.time;
  j["status"] = std::string(to_string(f.status));
  j["speed_factor"] = f.speed_factor;
  j["ego_id"] = f.ego_id;
  json vehicles = json::array();
  for (const auto& v : f.vehicles) {
    vehicles.push_back({{"id", v.id},
                        {"x", v.x},
                        {"y", v.y},
                        {"heading", v.heading},
                        {"speed", v.speed},
                        {"length", v.length},
                        {"width", v.width}});
  }
  j["vehicles"] = std::move(vehicles);
  j["lane"] = f.lane_index;
  j["behavior"] = std::string(planners::to_string(f.behavior));
  j["from_fallback"] = f.from_fallback;
  j["phase"] = f.phase ? json(std::string(schedule::to_string(*f.phase))) : json(nullptr);
  j["stage_index"] = f.stage_index;
  j["completed"] = f.completed;
  j["stages"] = f.stages;
  j["script"] = f.script_text;
  j["instruction"] = f.instruction;
  json events = json::array();
  for (const auto& e : f.events) {
    events.push_back({{"tick", e.tick},
                      {"time", e.time},
                      {"kind", std::string(schedule::to_string(e.kind))},
                      {"index", e.stage},
                      {"detail", e.detail}});
  }
  j["events"] = std::move(events);
  json notices = json::array();
  for (const auto& n : f.notices) {
    notices.push_back({{"tick", n.tick}, {"kind", n.kind}, {"detail", n.detail}});
  }
  j["notices"] = std::move(notices);
  const MetricPartials& m = f.metrics;
  j["metrics"] = {{"ticks", m.ticks},
                  {"collision", m.collided ? 0 : 1},
                  {"ttc", ratio(m.ttc_ok, m.ticks)},
                  {"drivable", ratio(m.drivable_ok, m.ticks)},
                  {"speed", ratio(m.speed_ok, m.ticks)},
                  {"direction", ratio(m.direction_ok, m.ticks)},
                  {"distance", m.distance}};
  j["busy"] = f.busy;
  j["dropped"] = f.dropped;
  if (f.road) {
    j["road"] = {{"lane_count", f.road->lane_count},
                 {"lane_width", f.road->lane_width},
                 {"segment_length", f.road->segment_length},
                 {"speed_limit", f.road->speed_limit},
                 {"lane_directions", f.road->lane_directions}};
  }
  return j.dump();
}

// ---------------------------------------------------------------- Subscription

std::optional<Frame> Subscription::pop(std::chrono::milliseconds wait) {
  std::unique_lock<std::mutex> lock(mutex_);
  cv_.wait_for(lock, wait, [&] { return !queue_.empty() || closed_; });
  if (queue_.empty()) {
    return std::nullopt;
  }
  Frame f = std::move(queue_.front());
  queue_.pop_front();
  return f;
}

std::vector<Frame> Subscription::drain() {
  std::lock_guard<std::mutex> lock(mutex_);
  std::vector<Frame> out(std::make_move_iterator(queue_.begin()),
                         std::make_move_iterator(queue_.end()));
  queue_.clear();
  return out;
}

void Subscription::close() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool Subscription::closed() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return closed_;
}

std::uint64_t Subscription::dropped_total() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return dropped_total_;
}

bool Subscription::offer(Frame frame) {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (closed_) {
      return true;
    }
    if (resync_) {
      ++pending_dropped_;
      ++dropped_total_;
      return false;
    }
    if (queue_.size() >= capacity_) {
      // The reader fell behind: throw away the backlog and resync later.
      const std::uint64_t lost = queue_.size() + 1;
      pending_dropped_ += lost;
      dropped_total_ += lost;
      queue_.clear();
      resync_ = true;
      return false;
    }
    queue_.push_back(std::move(frame));
  }
  cv_.notify_one();
  return true;
}

bool Subscription::needs_resync() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return resync_ && !closed_;
}

void Subscription::push_resync(Frame snapshot) {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    snapshot.dropped = pending_dropped_;
    pending_dropped_ = 0;
    resync_ = false;
    queue_.push_back(std::move(snapshot));
  }
  cv_.notify_one();
}

// ---------------------------------------------------------------- Session

Session::Session(std::string id, world::Scenario scenario,
                 std::unique_ptr<interpreter::Interpreter> interpreter, SessionConfig config)
    : id_(std::move(id)),
      scenario_(std::move(scenario)),
      interpreter_(std::move(interpreter)),
      config_(std::move(config)) {
  rebuild_locked();
  if (!config_.manual) {
    loop_thread_ = std::thread([this] { loop(); });
  }
}

Session::~Session() { shutdown(); }

void Session::rebuild_locked() {
  world_ = scenario_.build(config_.seed);
  controller_ = std::make_unique<runtime::EgoController>(config_.controller);
  executor_ = std::make_unique<schedule::Executor>(
      schedule::ExecutorConfig{config_.controller.planner.dt});
  status_ = Status::paused;
  tick_ = 0;
  metrics_ = {};
  script_text_.clear();
  instruction_.clear();
  events_seen_ = 0;
  notices_.clear();
  notice_log_.clear();
  behavior_ = planners::AtomicBehavior::lane_keeping;
  from_fallback_ = false;
  pending_.reset();
}

Status Session::status() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return status_;
}

double Session::speed_factor() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return speed_factor_;
}

std::int64_t Session::tick() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return tick_;
}

void Session::start() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (status_ == Status::paused) {
      status_ = Status::running;
    }
  }
  cv_.notify_all();
}

void Session::pause() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (status_ == Status::running) {
      status_ = Status::paused;
    }
  }
  cv_.notify_all();
}

void Session::reset() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (status_ == Status::idle) {
      return;
    }
    ++generation_;  // an in-flight reply belongs to the old world
    rebuild_locked();
    Notice n{0, "reset", ""};
    notices_.push_back(n);
    notice_log_.push_back(n);
    const Frame snap = frame_locked(true);
    notices_.clear();
    for (const auto& sub : subscribers_) {
      sub->drain();
      sub->push_resync(snap);
    }
  }
  cv_.notify_all();
}

void Session::set_speed_factor(double factor) {
  if (!(factor >= kMinSpeedFactor && factor <= kMaxSpeedFactor)) {
    throw std::invalid_argument("speed factor must be within [0.25, 4]");
  }
  {
    std::lock_guard<std::mutex> lock(mutex_);
    speed_factor_ = factor;
  }
  cv_.notify_all();
}

Status Session::control(Action action, std::optional<double> factor) {
  switch (action) {
    case Action::start: start(); break;
    case Action::pause: pause(); break;
    case Action::reset: reset(); break;
    case Action::set_speed_factor:
      if (!factor) {
        throw std::invalid_argument("set_speed_factor needs a factor");
      }
      set_speed_factor(*factor);
      break;
  }
  return status();
}

Ack Session::submit_instruction(const std::string& text) {
  std::uint64_t generation = 0;
  interpreter::SceneDescription scene;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (status_ == Status::ended || status_ == Status::idle) {
      return {false, "ended"};
    }
    if (in_flight_) {
      return {false, "busy"};
    }
    in_flight_ = true;
    generation = generation_;
    scene = interpreter::describe_scene(world::observe(world_));
    Notice n{tick_, "instruction_received", text};
    notices_.push_back(n);
    notice_log_.push_back(n);
  }
  // The previous worker has already cleared in_flight_, so this join is short.
  std::lock_guard<std::mutex> worker_lock(worker_mutex_);
  if (worker_.joinable()) {
    worker_.join();
  }
  worker_ = std::thread(
      [this, generation, text, scene] { run_interpreter(generation, text, scene); });
  return {true, ""};
}

void Session::run_interpreter(std::uint64_t generation, std::string text,
                              interpreter::SceneDescription scene) {
  const auto started = std::chrono::steady_clock::now();
  std::optional<interpreter::InterpreterResponse> response;
  std::string error;
  try {
    interpreter::Instruction instruction;
    instruction.id = id_ + "-" + std::to_string(generation);
    instruction.text = text;
    response = interpreter_->interpret(instruction, scene);
  } catch (const std::exception& e) {
    error = e.what();
  }
  if (config_.injected_latency > 0.0) {
    std::this_thread::sleep_until(
        started + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                      std::chrono::duration<double>(config_.injected_latency)));
  }
  {
    std::lock_guard<std::mutex> lock(mutex_);
    in_flight_ = false;
    if (generation == generation_ && status_ != Status::ended && status_ != Status::idle) {
      if (response) {
        last_response_ = *response;
        pending_ = Pending{generation, std::move(*response), text};
      } else {
        Notice n{tick_, "interpreter_error", error};
        notices_.push_back(n);
        notice_log_.push_back(n);
      }
    }
  }
  idle_cv_.notify_all();
}

bool Session::busy() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return in_flight_;
}

bool Session::wait_idle(std::chrono::milliseconds timeout) {
  std::unique_lock<std::mutex> lock(mutex_);
  return idle_cv_.wait_for(lock, timeout, [&] { return !in_flight_; });
}

std::shared_ptr<Subscription> Session::subscribe(std::optional<std::size_t> capacity) {
  auto sub = std::make_shared<Subscription>(
      std::max<std::size_t>(1, capacity.value_or(config_.subscriber_capacity)));
  std::lock_guard<std::mutex> lock(mutex_);
  sub->push_resync(frame_locked(true));
  subscribers_.push_back(sub);
  return sub;
}

void Session::unsubscribe(const std::shared_ptr<Subscription>& sub) {
  sub->close();
  std::lock_guard<std::mutex> lock(mutex_);
  std::erase(subscribers_, sub);
}

int Session::step(int n) {
  std::lock_guard<std::mutex> lock(mutex_);
  int done = 0;
  while (done < n && tick_locked()) {
    ++done;
  }
  return done;
}

Frame Session::snapshot() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return frame_locked(true);
}

std::optional<interpreter::InterpreterResponse> Session::last_response() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return last_response_;
}

bool Session::tick_locked() {
  if (status_ == Status::ended || status_ == Status::idle) {
    return false;
  }
  const double dt = config_.controller.planner.dt;
  const world::Observation obs = world::observe(world_);

  if (pending_) {
    executor_->install(std::move(pending_->response.script), obs, tick_);
    script_text_ = pending_->response.script_text;
    instruction_ = pending_->instruction;
    events_seen_ = 0;
    Notice n{tick_, "script_installed", instruction_};
    notices_.push_back(n);
    notice_log_.push_back(n);
    pending_.reset();
  }

  const runtime::TickRecord rec = runtime::make_record(world_, obs, false);
  const schedule::Decision d = executor_->tick(obs, tick_);
  const planners::PlannerGoal goal =
      d.goal ? *d.goal : planners::make_goal(planners::AtomicBehavior::lane_keeping, obs);
  const world::ControlCommand cmd = controller_->step(goal, obs);
  behavior_ = goal.behavior;
  from_fallback_ = d.from_fallback;

  ++metrics_.ticks;
  metrics_.ttc_ok += bench::ttc_ok(rec) ? 1 : 0;
  metrics_.drivable_ok += rec.drivable ? 1 : 0;
  metrics_.speed_ok += bench::speed_ok(rec) ? 1 : 0;
  metrics_.direction_ok += bench::direction_ok(rec) ? 1 : 0;

  const runtime::StepOutcome out = runtime::advance(world_, cmd, dt);
  metrics_.distance = world_.ego_distance;
  ++tick_;

  std::vector<schedule::ExecutorEvent> events;
  if (executor_->has_script()) {
    const auto& log = executor_->state().events;
    events.assign(log.begin() + static_cast<std::ptrdiff_t>(std::min(events_seen_, log.size())),
                  log.end());
    events_seen_ = log.size();
  }

  std::string ended;
  if (out.collided) {
    metrics_.collided = true;
    ended = "collision";
  } else if (runtime::center_off_road(world_)) {
    ended = "off_road";
  } else if (config_.horizon > 0.0 &&
             tick_ >= static_cast<std::int64_t>(std::llround(config_.horizon / dt))) {
    ended = "horizon";
  }
  if (!ended.empty()) {
    status_ = Status::ended;
    Notice n{tick_, "ended", ended};
    notices_.push_back(n);
    notice_log_.push_back(n);
  }
  publish_locked(std::move(events));
  return true;
}

Frame Session::frame_locked(bool snapshot) const {
  Frame f;
  f.snapshot = snapshot;
  f.seq = seq_;
  f.tick = tick_;
  f.time = world_.time;
  f.status = status_;
  f.speed_factor = speed_factor_;
  f.vehicles = world_.vehicles;
  f.ego_id = world_.ego().id;
  f.lane_index = world_.road.nearest_lane(world_.ego().y);
  f.behavior = behavior_;
  f.from_fallback = from_fallback_;
  if (executor_->has_script()) {
    const auto& st = executor_->state();
    f.phase = st.phase;
    f.stage_index = st.stage_index;
    f.completed = st.completed;
    f.stages = static_cast<int>(executor_->script()->stages.size());
    if (snapshot) {
      f.events = st.events;
    }
  }
  f.script_text = script_text_;
  f.instruction = instruction_;
  f.notices = snapshot ? notice_log_ : notices_;
  f.metrics = metrics_;
  f.busy = in_flight_;
  if (snapshot) {
    f.road = world_.road;
  }
  return f;
}

void Session::publish_locked(std::vector<schedule::ExecutorEvent> events) {
  ++seq_;
  Frame frame = frame_locked(false);
  frame.events = std::move(events);
  notices_.clear();
  std::optional<Frame> snap;
  std::erase_if(subscribers_, [](const auto& s) { return s->closed(); });
  for (const auto& sub : subscribers_) {
    if (sub->needs_resync()) {
      if (!snap) {
        snap = frame_locked(true);
      }
      sub->push_resync(*snap);
    } else {
      sub->offer(frame);
    }
  }
}

void Session::loop() {
  using clock = std::chrono::steady_clock;
  std::unique_lock<std::mutex> lock(mutex_);
  auto next = clock::now();
  bool was_running = false;
  while (true) {
    cv_.wait(lock, [&] { return stop_ || status_ == Status::running; });
    if (stop_) {
      break;
    }
    if (!was_running) {
      next = clock::now();
      was_running = true;
    }
    tick_locked();
    const auto period = std::chrono::duration_cast<clock::duration>(
        std::chrono::duration<double>(config_.controller.planner.dt / speed_factor_));
    next += period;
    // Never burst to catch up after a stall.
    if (next < clock::now() - period) {
      next = clock::now();
    }
    cv_.wait_until(lock, next, [&] { return stop_ || status_ != Status::running; });
    if (status_ != Status::running) {
      was_running = false;
    }
  }
}

void Session::shutdown() {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    stop_ = true;
    if (status_ != Status::ended) {
      status_ = Status::idle;
    }
    ++generation_;
    for (const auto& sub : subscribers_) {
      sub->close();
    }
    subscribers_.clear();
  }
  cv_.notify_all();
  if (loop_thread_.joinable()) {
    loop_thread_.join();
  }
  std::lock_guard<std::mutex> worker_lock(worker_mutex_);
  if (worker_.joinable()) {
    worker_.join();
  }
}

// ---------------------------------------------------------------- SessionManager

SessionManager::SessionManager(std::filesystem::path scenario_dir,
                               std::map<std::string, InterpreterFactory> backends,
                               SessionConfig defaults)
    : scenario_dir_(std::move(scenario_dir)),
      backends_(std::move(backends)),
      defaults_(std::move(defaults)) {}

SessionManager::~SessionManager() {
  std::map<std::string, std::shared_ptr<Session>> sessions;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    sessions.swap(sessions_);
  }
  for (auto& [id, s] : sessions) {
    s->shutdown();
  }
}

std::vector<std::string> SessionManager::scenario_ids() const {
  std::vector<std::string> ids;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(scenario_dir_, ec)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".yaml" || ext == ".yml")) {
      ids.push_back(entry.path().stem().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<std::string> SessionManager::backend_names() const {
  std::vector<std::string> names;
  for (const auto& [name, f] : backends_) {
    names.push_back(name);
  }
  return names;
}

std::string SessionManager::create(const std::string& scenario_id, const std::string& backend,
                                   std::optional<std::uint64_t> seed) {
  const auto ids = scenario_ids();
  if (std::find(ids.begin(), ids.end(), scenario_id) == ids.end()) {
    throw NotFound("unknown scenario '" + scenario_id + "'");
  }
  const auto it = backends_.find(backend);
  if (it == backends_.end()) {
    throw NotFound("unknown backend '" + backend + "'");
  }
  std::filesystem::path path = scenario_dir_ / (scenario_id + ".yaml");
  if (!std::filesystem::exists(path)) {
    path = scenario_dir_ / (scenario_id + ".yml");
  }
  world::Scenario scenario = world::load_scenario(path);
  SessionConfig cfg = defaults_;
  if (seed) {
    cfg.seed = *seed;
  }
  std::lock_guard<std::mutex> lock(mutex_);
  const std::string id = "s" + std::to_string(next_id_++);
  sessions_.emplace(id, std::make_shared<Session>(id, std::move(scenario), it->second(), cfg));
  return id;
}

std::shared_ptr<Session> SessionManager::get(const std::string& id) const {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) {
    throw SessionNotFound("no session '" + id + "'");
  }
  return it->second;
}

std::vector<std::string> SessionManager::session_ids() const {
  std::lock_guard<std::mutex> lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, s] : sessions_) {
    ids.push_back(id);
  }
  return ids;
}

void SessionManager::remove(const std::string& id) {
  std::shared_ptr<Session> s;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) {
      throw SessionNotFound("no session '" + id + "'");
    }
    s = it->second;
    sessions_.erase(it);
  }
  s->shutdown();
}

}  // namespace scriptdrive::session
