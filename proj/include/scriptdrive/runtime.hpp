#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scriptdrive/control.hpp"
#include "scriptdrive/planners.hpp"
#include "scriptdrive/schedule/executor.hpp"
#include "scriptdrive/world.hpp"

namespace scriptdrive::runtime {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ControllerConfig {
  planners::PlannerConfig planner;
  control::LqrConfig lqr;
};

/// Planner config file: sections "planner" and "control", both optional.
ControllerConfig parse_controller_config(std::string_view text, const std::string& origin = "<string>");
ControllerConfig load_controller_config(const std::string& path);

/// Receding-horizon planning plus LQR tracking for the ego vehicle. Owns the
/// warm-start trajectory.
class EgoController {
 public:
  explicit EgoController(ControllerConfig config = {});

  world::ControlCommand step(const planners::PlannerGoal& goal, const world::Observation& obs);
  void reset() { previous_.reset(); }

  const std::optional<planners::Trajectory>& trajectory() const { return previous_; }
  int emergencies() const { return emergencies_; }
  const ControllerConfig& config() const { return config_; }
  control::LqrTracker& tracker() { return tracker_; }

 private:
  ControllerConfig config_;
  control::LqrTracker tracker_;
  std::optional<planners::Trajectory> previous_;
  int emergencies_ = 0;
};

/// One closed-loop tick as seen by the metrics.
struct TickRecord {
  std::int64_t tick = 0;
  double time = 0.0;
  world::VehicleState ego;  // state at the start of the tick
  int lane_index = 0;
  int lane_direction = 1;
  double speed_limit = 0.0;
  std::optional<world::Neighbor> front;
  double distance = 0.0;  // odometer at the start of the tick
  planners::AtomicBehavior behavior = planners::AtomicBehavior::lane_keeping;
  bool from_fallback = false;
  schedule::Phase phase = schedule::Phase::running;
  int stage_index = 0;
  int completed = 0;  // executor k_t after this tick; 0 for methods without one
  int tracked = 0;    // ground-truth stages completed, from the trace
  bool drivable = true;
  bool collided = false;  // contact after applying this tick's command
  world::ControlCommand command;
  std::vector<world::VehicleState> vehicles;  // raw snapshot, kept on request
};

struct Trace {
  world::RoadNetwork road;
  std::vector<TickRecord> records;
  double end_distance = 0.0;
};

/// Fills the observation-derived fields of a record.
TickRecord make_record(const world::WorldState& w, const world::Observation& obs,
                       bool keep_vehicles);

struct StepOutcome {
  bool collided = false;
  bool drivable = true;
  std::optional<world::CollisionEvent> collision;
};

/// Episodes end once the ego's center leaves the paved road.
bool center_off_road(const world::WorldState& w);

/// Steps the world by one tick and reports contact and road departure.
StepOutcome advance(world::WorldState& w, const world::ControlCommand& cmd, double dt);

}  // namespace scriptdrive::runtime
