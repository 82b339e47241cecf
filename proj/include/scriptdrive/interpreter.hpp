#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "scriptdrive/planners.hpp"
#include "scriptdrive/schedule/script.hpp"
#include "scriptdrive/world.hpp"

namespace scriptdrive::interpreter {

using planners::AtomicBehavior;
using world::Observation;

class BackendUnreachable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class HttpError : public std::runtime_error {
 public:
  HttpError(int status, const std::string& body);
  int status() const { return status_; }

 private:
  int status_;
};

class MalformedOutput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One element of a behavior sequence. Only speed changes carry a target.
struct BehaviorSpec {
  AtomicBehavior behavior = AtomicBehavior::lane_keeping;
  std::optional<double> target_speed;

  bool operator==(const BehaviorSpec&) const = default;
};

/// "decelerate(0)" style text.
std::string to_string(const BehaviorSpec& spec);
std::optional<BehaviorSpec> parse_behavior_spec(std::string_view text);
std::vector<AtomicBehavior> behavior_types(const std::vector<BehaviorSpec>& sequence);

inline constexpr std::size_t kMaxSequenceLength = 8;

struct Instruction {
  std::string id;
  std::string text;
  std::optional<std::vector<BehaviorSpec>> ground_truth;
};

struct SceneDescription {
  std::string text;
  Observation snapshot;
};

SceneDescription describe_scene(const Observation& obs);

struct InterpreterResponse {
  std::vector<BehaviorSpec> sequence;
  std::string script_text;
  schedule::ScheduleScript script;
  std::string raw_model_output;
  double latency = 0.0;  // wall-clock seconds spent in the backend
  bool intent_failed = false;
  int attempts = 0;
  std::string error;  // last validation message when intent_failed
};

/// Single lane keeping stage used when no valid script could be obtained.
InterpreterResponse fallback_response(std::string error);

struct HistoryEntry {
  AtomicBehavior behavior = AtomicBehavior::lane_keeping;
  bool completed = false;
};

/// Per-second request of the reactive baseline.
struct StepRequest {
  const Instruction& instruction;
  const SceneDescription& initial_scene;
  const SceneDescription& scene;
  const std::vector<HistoryEntry>& history;
};

class Interpreter {
 public:
  virtual ~Interpreter() = default;

  /// One instruction to one validated script.
  virtual InterpreterResponse interpret(const Instruction& instruction,
                                        const SceneDescription& scene) = 0;
  /// Next single behavior for the reactive baseline.
  virtual BehaviorSpec next_behavior(const StepRequest& request) = 0;
  virtual std::string name() const = 0;

  /// Backend invocations so far, retries included.
  int calls() const { return calls_.load(); }

 protected:
  void count_call() { ++calls_; }

 private:
  std::atomic<int> calls_{0};
};

struct StubResult {
  std::vector<BehaviorSpec> sequence;
  bool intent_failed = false;
};

/// Keyword table. Without scene context the lane topology is unknown and a
/// three-lane road with the ego in the middle lane is assumed.
StubResult stub_sequence(std::string_view instruction, const Observation* context);

/// Templated script for a sequence: gated lane changes, timed lane keeping,
/// and one forward-collision fallback.
std::string stub_script(const std::vector<BehaviorSpec>& sequence);

class StubInterpreter : public Interpreter {
 public:
  explicit StubInterpreter(bool use_context = true) : use_context_(use_context) {}

  InterpreterResponse interpret(const Instruction& instruction,
                                const SceneDescription& scene) override;
  BehaviorSpec next_behavior(const StepRequest& request) override;
  std::string name() const override { return use_context_ ? "stub" : "stub_no_context"; }

 private:
  bool use_context_;
};

/// Text completion transport.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

struct HttpBackendConfig {
  std::string endpoint;  // e.g. https://host/v1/chat/completions
  std::string model;
  std::string api_key;
  double timeout = 30.0;
  double temperature = 0.7;

  /// SCRIPTDRIVE_LLM_ENDPOINT, SCRIPTDRIVE_LLM_MODEL, SCRIPTDRIVE_LLM_API_KEY,
  /// SCRIPTDRIVE_LLM_TIMEOUT.
  static HttpBackendConfig from_env();
};

/// OpenAI-style chat completion over HTTP(S).
class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(HttpBackendConfig config);
  std::string complete(const std::string& prompt) override;

 private:
  HttpBackendConfig config_;
};

struct PromptTemplates {
  std::string script;  // placeholders {instruction}, {scene}, {grammar}
  std::string step;    // placeholders {instruction}, {scene}, {history}

  static PromptTemplates builtin();
  static PromptTemplates load(const std::string& script_path, const std::string& step_path);
};

/// Replaces every {name} placeholder.
std::string fill_template(std::string_view text,
                          const std::vector<std::pair<std::string, std::string>>& values);

/// Parses the structured reply and checks it against the grammar and itself.
/// Throws MalformedOutput or schedule::ScriptError.
InterpreterResponse parse_model_output(const std::string& raw);

class LlmInterpreter : public Interpreter {
 public:
  LlmInterpreter(std::shared_ptr<ChatBackend> backend,
                 PromptTemplates templates = PromptTemplates::builtin());

  InterpreterResponse interpret(const Instruction& instruction,
                                const SceneDescription& scene) override;
  BehaviorSpec next_behavior(const StepRequest& request) override;
  std::string name() const override { return "llm"; }

  std::string build_prompt(const Instruction& instruction, const SceneDescription& scene) const;

 private:
  std::shared_ptr<ChatBackend> backend_;
  PromptTemplates templates_;
};

}  // namespace scriptdrive::interpreter
