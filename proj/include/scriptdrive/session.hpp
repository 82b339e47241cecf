#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "scriptdrive/interpreter.hpp"
#include "scriptdrive/runtime.hpp"
#include "scriptdrive/scenario.hpp"
#include "scriptdrive/schedule/executor.hpp"

namespace scriptdrive::session {

inline constexpr int kFrameSchemaVersion = 1;
inline constexpr double kMinSpeedFactor = 0.25;
inline constexpr double kMaxSpeedFactor = 4.0;

class SessionNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unknown scenario or backend name.
class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Status { idle, running, paused, ended };
std::string_view to_string(Status s);

struct Ack {
  bool accepted = false;
  std::string reason;  // "busy", "ended", or empty when accepted
};

enum class Action { start, pause, reset, set_speed_factor };
std::optional<Action> action_from_string(std::string_view text);

/// Running time-ratio tallies for the live display.
struct MetricPartials {
  std::int64_t ticks = 0;
  std::int64_t ttc_ok = 0;
  std::int64_t drivable_ok = 0;
  std::int64_t speed_ok = 0;
  std::int64_t direction_ok = 0;
  bool collided = false;
  double distance = 0.0;
};

/// Session-level notes carried next to executor events.
struct Notice {
  std::int64_t tick = 0;
  std::string kind;  // instruction_received, script_installed, interpreter_error, reset, ended
  std::string detail;
};

/// One published state. Snapshots add the road and the full event log.
struct Frame {
  bool snapshot = false;
  std::uint64_t seq = 0;
  std::int64_t tick = 0;
  double time = 0.0;
  Status status = Status::paused;
  double speed_factor = 1.0;
  std::vector<world::VehicleState> vehicles;
  int ego_id = 0;
  int lane_index = 0;
  planners::AtomicBehavior behavior = planners::AtomicBehavior::lane_keeping;
  bool from_fallback = false;
  std::optional<schedule::Phase> phase;
  int stage_index = 0;
  int completed = 0;
  int stages = 0;
  std::string script_text;
  std::string instruction;
  std::vector<schedule::ExecutorEvent> events;  // this tick, or the whole log in snapshots
  std::vector<Notice> notices;
  MetricPartials metrics;
  bool busy = false;
  std::uint64_t dropped = 0;  // frames this subscriber lost before this one
  std::optional<world::RoadNetwork> road;
};

std::string frame_json(const Frame& frame);

/// Bounded per-subscriber queue. On overflow the queue is discarded and the
/// next delivery is a fresh snapshot flagged with the number of lost frames.
class Subscription {
 public:
  explicit Subscription(std::size_t capacity) : capacity_(capacity) {}

  std::optional<Frame> pop(std::chrono::milliseconds wait);
  std::vector<Frame> drain();
  void close();
  bool closed() const;
  std::uint64_t dropped_total() const;

 private:
  friend class Session;
  /// Returns false when the frame was dropped.
  bool offer(Frame frame);
  bool needs_resync() const;
  void push_resync(Frame snapshot);

  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Frame> queue_;
  bool resync_ = false;
  bool closed_ = false;
  std::uint64_t pending_dropped_ = 0;
  std::uint64_t dropped_total_ = 0;
};

struct SessionConfig {
  runtime::ControllerConfig controller;
  std::uint64_t seed = 0;
  /// Seconds of simulated time after which the session ends; 0 = unbounded.
  double horizon = 0.0;
  /// Extra delay added to every interpreter call, seconds.
  double injected_latency = 0.0;
  /// No simulation thread: ticks only advance through step().
  bool manual = false;
  std::size_t subscriber_capacity = 256;
};

/// One simulated world driven by its own thread. The loop is the only writer
/// of the world and executor; other threads reach it through the mailbox and
/// the control calls, which take effect at tick boundaries.
class Session {
 public:
  Session(std::string id, world::Scenario scenario,
          std::unique_ptr<interpreter::Interpreter> interpreter, SessionConfig config = {});
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const std::string& id() const { return id_; }
  const world::Scenario& scenario() const { return scenario_; }

  Status status() const;
  double speed_factor() const;
  std::int64_t tick() const;

  void start();
  void pause();
  void reset();
  /// Throws std::invalid_argument outside [0.25, 4].
  void set_speed_factor(double factor);
  Status control(Action action, std::optional<double> speed_factor = std::nullopt);

  /// Starts an interpreter call off the loop. Busy while one is in flight.
  Ack submit_instruction(const std::string& text);
  bool busy() const;
  /// Blocks until no interpreter call is in flight.
  bool wait_idle(std::chrono::milliseconds timeout);

  std::shared_ptr<Subscription> subscribe(std::optional<std::size_t> capacity = std::nullopt);
  void unsubscribe(const std::shared_ptr<Subscription>& sub);

  /// Advances n ticks on the caller's thread regardless of status; for tests
  /// and manual sessions. Returns the number of ticks actually run.
  int step(int n = 1);

  Frame snapshot() const;
  /// Copy of the latest interpreter response, if any.
  std::optional<interpreter::InterpreterResponse> last_response() const;

  /// Stops the loop and closes subscribers; the session is then idle unless it had ended.
  void shutdown();

 private:
  struct Pending {
    std::uint64_t generation = 0;
    interpreter::InterpreterResponse response;
    std::string instruction;
  };

  void rebuild_locked();
  bool tick_locked();
  Frame frame_locked(bool snapshot) const;
  void publish_locked(std::vector<schedule::ExecutorEvent> events);
  void loop();
  void run_interpreter(std::uint64_t generation, std::string text,
                       interpreter::SceneDescription scene);

  std::string id_;
  world::Scenario scenario_;
  std::unique_ptr<interpreter::Interpreter> interpreter_;
  SessionConfig config_;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  world::WorldState world_;
  std::unique_ptr<runtime::EgoController> controller_;
  std::unique_ptr<schedule::Executor> executor_;
  Status status_ = Status::paused;
  double speed_factor_ = 1.0;
  std::int64_t tick_ = 0;
  std::uint64_t seq_ = 0;
  std::uint64_t generation_ = 0;
  MetricPartials metrics_;
  std::string script_text_;
  std::string instruction_;
  std::size_t events_seen_ = 0;
  std::vector<Notice> notices_;
  std::vector<Notice> notice_log_;
  planners::AtomicBehavior behavior_ = planners::AtomicBehavior::lane_keeping;
  bool from_fallback_ = false;
  std::optional<Pending> pending_;
  std::optional<interpreter::InterpreterResponse> last_response_;
  std::vector<std::shared_ptr<Subscription>> subscribers_;

  bool in_flight_ = false;
  std::condition_variable idle_cv_;
  std::mutex worker_mutex_;  // guards worker_ only
  std::thread worker_;
  std::thread loop_thread_;
  bool stop_ = false;
};

using InterpreterFactory = std::function<std::unique_ptr<interpreter::Interpreter>()>;

/// Owns sessions and resolves scenario and backend names.
class SessionManager {
 public:
  /// Scenario ids are file stems of *.yaml files in the directory.
  SessionManager(std::filesystem::path scenario_dir,
                 std::map<std::string, InterpreterFactory> backends,
                 SessionConfig defaults = {});
  ~SessionManager();

  std::vector<std::string> scenario_ids() const;
  std::vector<std::string> backend_names() const;
  /// Throws NotFound for an unknown scenario or backend.
  std::string create(const std::string& scenario_id, const std::string& backend = "stub",
                     std::optional<std::uint64_t> seed = std::nullopt);
  std::shared_ptr<Session> get(const std::string& id) const;
  std::vector<std::string> session_ids() const;
  void remove(const std::string& id);

 private:
  std::filesystem::path scenario_dir_;
  std::map<std::string, InterpreterFactory> backends_;
  SessionConfig defaults_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks a free port
  std::filesystem::path scenario_dir = "data/scenarios";
  runtime::ControllerConfig controller;
  std::uint64_t seed = 0;  // world seed when a create request names none
  std::map<std::string, InterpreterFactory> backends;
  double injected_latency = 0.0;
};

/// HTTP control plane plus one WebSocket stream per session.
class Server {
 public:
  explicit Server(ServiceConfig config);
  ~Server();

  /// Binds and starts serving on background threads.
  void start();
  void stop();
  unsigned short port() const;
  SessionManager& sessions();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Runs a server until SIGINT or SIGTERM.
int serve(ServiceConfig config);

}  // namespace scriptdrive::session
