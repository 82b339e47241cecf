#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scriptdrive/interpreter.hpp"
#include "scriptdrive/runtime.hpp"
#include "scriptdrive/scenario.hpp"
#include "scriptdrive/schedule/executor.hpp"

namespace scriptdrive::bench {

using interpreter::BehaviorSpec;
using interpreter::Instruction;
using runtime::TickRecord;
using runtime::Trace;

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingExpert : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultHorizon = 40.0;
inline constexpr double kMaxRisk = 0.05;
inline constexpr double kTtcThreshold = 1.0;
inline constexpr double kTtcCap = 10.0;
inline constexpr double kSpeedTolerance = 0.5;

// ---------------------------------------------------------------- corpus

struct CorpusEntry {
  Instruction instruction;
  std::string category;
  std::string scenario;  // path relative to the corpus file
  std::vector<std::uint64_t> seeds;
};

struct Corpus {
  std::vector<CorpusEntry> entries;
  double horizon = kDefaultHorizon;
  std::filesystem::path base_dir;
};

Corpus parse_corpus(const std::string& text, const std::string& origin = "<string>",
                    const std::filesystem::path& base_dir = ".");
Corpus load_corpus(const std::filesystem::path& path);

// ---------------------------------------------------------------- metrics

/// TTC to the front neighbor under constant velocities, capped at kTtcCap.
double front_ttc(const TickRecord& r);

/// Per-tick predicates behind the time-ratio metrics.
bool ttc_ok(const TickRecord& r);
bool speed_ok(const TickRecord& r);
bool direction_ok(const TickRecord& r);

double metric_ttc(const Trace& trace);
double metric_speed(const Trace& trace);
double metric_drivable(const Trace& trace);
double metric_direction(const Trace& trace);
/// Ego distance over the expert distance, capped at 1.
double metric_progress(const Trace& trace, std::optional<double> expert_distance);
int metric_recognition(const std::vector<BehaviorSpec>& predicted,
                       const std::vector<BehaviorSpec>& truth);

/// Stage counter of a behavior sequence evaluated on a trace, one update per
/// tick with the observation at the start of that tick. Each stage's goal is
/// formed from the observation at the tick its predecessor completed.
class StageTracker {
 public:
  explicit StageTracker(std::vector<BehaviorSpec> sequence, double dt = world::kDefaultDt);

  void update(const world::Observation& obs, std::int64_t tick);
  int k() const { return k_; }
  int m() const { return static_cast<int>(sequence_.size()); }
  double fraction() const { return m() == 0 ? 0.0 : static_cast<double>(k_) / m(); }
  /// Stage reward per tick: 1/m on completion ticks, else 0.
  const std::vector<double>& rewards() const { return rewards_; }

 private:
  void activate(const world::Observation& obs, std::int64_t tick);

  std::vector<BehaviorSpec> sequence_;
  double dt_;
  int k_ = 0;
  std::int64_t started_ = 0;
  std::optional<planners::PlannerGoal> goal_;
  bool active_ = false;
  std::vector<double> rewards_;
};

// ---------------------------------------------------------------- episodes

enum class MethodKind { ours_mode3, mode2_baseline, idm_only, single_planner };

struct Method {
  MethodKind kind = MethodKind::ours_mode3;
  planners::AtomicBehavior single = planners::AtomicBehavior::lane_keeping;

  std::string name() const;
  /// "ours_mode3", "mode2_baseline", "idm_only" or "single_planner:<behavior>".
  static std::optional<Method> parse(const std::string& text);
  bool uses_interpreter() const {
    return kind == MethodKind::ours_mode3 || kind == MethodKind::mode2_baseline;
  }
};

struct EpisodeSpec {
  std::string id;
  std::string category;
  const world::Scenario* scenario = nullptr;
  Instruction instruction;
  std::uint64_t seed = 0;
  double horizon = kDefaultHorizon;
  double latency = 0.0;  // injected interpreter delay, seconds
  bool keep_vehicles = false;
};

struct EpisodeReport {
  std::string id;
  std::string method;
  std::string scenario;
  std::string category;
  std::uint64_t seed = 0;
  double latency = 0.0;

  int recognition = 0;
  bool recognition_applicable = true;
  double realization = 0.0;
  int collision = 1;  // 1 = collision-free
  double ttc = 1.0;
  double drivable = 1.0;
  double speed = 1.0;
  double direction = 1.0;
  double progress = 0.0;

  int interpreter_calls = 0;
  int stages_total = 0;
  int stages_completed = 0;     // tracker k at the end
  int executor_completed = 0;   // executor k at the end (ours only)
  double reward_sum = 0.0;
  bool intent_failed = false;
  int emergencies = 0;
  double duration = 0.0;
  std::string termination;  // horizon, collision, off_road, error
  std::string error;
  std::vector<BehaviorSpec> predicted;
  std::string script_text;
  std::vector<schedule::ExecutorEvent> events;
  Trace trace;
};

/// Instruction-blind lane keeping distances, cached per (scenario, seed, horizon).
class ExpertCache {
 public:
  explicit ExpertCache(runtime::ControllerConfig config = {}) : config_(std::move(config)) {}
  double distance(const world::Scenario& scenario, std::uint64_t seed, double horizon);

 private:
  runtime::ControllerConfig config_;
  std::mutex mutex_;
  std::map<std::tuple<std::string, std::uint64_t, long long>, double> cache_;
};

struct EpisodeContext {
  interpreter::Interpreter* interpreter = nullptr;  // required for interpreter methods
  ExpertCache* experts = nullptr;                   // empty = progress is MissingExpert
  runtime::ControllerConfig controller;
  /// Add the backend's measured wall-clock latency to the injected delay.
  bool count_backend_latency = false;
};

/// Closed loop at dt = 0.1 s until the horizon, a collision or the ego center
/// leaving the road.
EpisodeReport run_episode(const EpisodeSpec& spec, const Method& method, EpisodeContext& ctx);

/// Distance covered by instruction-blind lane keeping.
double run_expert(const world::Scenario& scenario, std::uint64_t seed, double horizon,
                  const runtime::ControllerConfig& config);

// ---------------------------------------------------------------- suites

using InterpreterFactory = std::function<std::unique_ptr<interpreter::Interpreter>()>;

struct SuiteConfig {
  Method method;
  int seeds = 5;  // first N seeds of each entry
  std::uint64_t seed_offset = 0;  // added to every corpus seed
  double latency = 0.0;
  InterpreterFactory make_interpreter;
  bool count_backend_latency = false;
  int jobs = 1;
  runtime::ControllerConfig controller;
  std::string label;  // row name in the summary; defaults to the method name
};

struct MetricMeans {
  double recognition = 0.0;
  double realization = 0.0;
  double collision = 0.0;
  double ttc = 0.0;
  double drivable = 0.0;
  double speed = 0.0;
  double direction = 0.0;
  double progress = 0.0;
  double interpreter_calls = 0.0;
  double safe_rate = 0.0;  // collision-free and fully drivable
  std::size_t episodes = 0;
};

MetricMeans mean_metrics(const std::vector<const EpisodeReport*>& episodes);

struct SuiteReport {
  std::string label;
  std::vector<EpisodeReport> episodes;  // ordered by (entry, seed)
  MetricMeans means;
  std::map<std::string, MetricMeans> by_category;
  int failed_episodes = 0;
};

SuiteReport run_suite(const Corpus& corpus, const SuiteConfig& config, ExpertCache& experts);

/// One JSON object per line.
std::string episode_json(const EpisodeReport& report);
/// Plain-text table, one row per suite plus per-category rows of the first.
std::string render_summary(const std::vector<const SuiteReport*>& suites);

}  // namespace scriptdrive::bench
