#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "scriptdrive/interpreter.hpp"

namespace scriptdrive::interpreter {

namespace {

using json = nlohmann::json;

constexpr std::string_view kScriptTemplate =
    R"(You are the maneuver interpreter of an autonomous car. A passenger gave an
instruction. Map it to an ordered sequence of atomic driving behaviors and write
a scheduling script that executes that sequence.

Atomic behaviors: lane_keeping, left_lane_change, right_lane_change, accelerate,
decelerate. Speed changes may carry a target in m/s, written decelerate(0).
Use the scene to resolve ambiguity; never request a lane change toward a side
that has no same-direction lane.

Scheduling script grammar:
{grammar}
Scene:
{scene}
Instruction: "{instruction}"

Reply with one JSON object and nothing else:
{"behaviors": ["<behavior>", ...], "script": "<script text, statements separated by \n>"}
The script must contain exactly one stage per listed behavior, in the same order.
)";

constexpr std::string_view kStepTemplate =
    R"(You are driving an autonomous car and pick one atomic behavior for the next
second. Behaviors: lane_keeping, left_lane_change, right_lane_change, accelerate,
decelerate. Speed changes may carry a target in m/s, written decelerate(0).

Passenger instruction: "{instruction}"
Current scene:
{scene}
Behaviors chosen so far, oldest first (* = completed):
{history}

Reply with one JSON object and nothing else: {"behavior": "<behavior>"}
)";

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error(path + ": cannot open");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

/// Model replies often wrap the object in prose or code fences.
json extract_object(const std::string& raw) {
  const std::size_t open = raw.find('{');
  const std::size_t close = raw.rfind('}');
  if (open == std::string::npos || close == std::string::npos || close < open) {
    throw MalformedOutput("reply contains no JSON object");
  }
  try {
    return json::parse(raw.substr(open, close - open + 1));
  } catch (const json::exception& e) {
    throw MalformedOutput(std::string("reply is not valid JSON: ") + e.what());
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

HttpError::HttpError(int status, const std::string& body)
    : std::runtime_error("HTTP " + std::to_string(status) + ": " + body.substr(0, 200)),
      status_(status) {}

HttpBackendConfig HttpBackendConfig::from_env() {
  HttpBackendConfig cfg;
  auto env = [](const char* name) -> std::string {
    const char* v = std::getenv(name);
    return v ? v : "";
  };
  cfg.endpoint = env("SCRIPTDRIVE_LLM_ENDPOINT");
  cfg.model = env("SCRIPTDRIVE_LLM_MODEL");
  cfg.api_key = env("SCRIPTDRIVE_LLM_API_KEY");
  if (const std::string t = env("SCRIPTDRIVE_LLM_TIMEOUT"); !t.empty()) {
    cfg.timeout = std::stod(t);
  }
  return cfg;
}

HttpChatBackend::HttpChatBackend(HttpBackendConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) {
    throw BackendUnreachable("no LLM endpoint configured (SCRIPTDRIVE_LLM_ENDPOINT)");
  }
}

std::string HttpChatBackend::complete(const std::string& prompt) {
  const std::string& url = config_.endpoint;
  const std::size_t scheme_end = url.find("://");
  const std::size_t path_start =
      url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(origin);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(config_.timeout));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  if (!config_.api_key.empty()) {
    client.set_bearer_token_auth(config_.api_key);
  }

  json body = {{"model", config_.model},
               {"temperature", config_.temperature},
               {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
  const auto res = client.Post(path, body.dump(), "application/json");
  if (!res) {
    throw BackendUnreachable("LLM endpoint " + url + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw HttpError(res->status, res->body);
  }
  try {
    const json reply = json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw MalformedOutput(std::string("chat response without message content: ") + e.what());
  }
}

PromptTemplates PromptTemplates::builtin() {
  return {std::string(kScriptTemplate), std::string(kStepTemplate)};
}

PromptTemplates PromptTemplates::load(const std::string& script_path,
                                      const std::string& step_path) {
  PromptTemplates t = builtin();
  if (!script_path.empty()) {
    t.script = read_file(script_path);
  }
  if (!step_path.empty()) {
    t.step = read_file(step_path);
  }
  return t;
}

std::string fill_template(std::string_view text,
                          const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    bool replaced = false;
    if (text[i] == '{') {
      for (const auto& [name, value] : values) {
        const std::string key = "{" + name + "}";
        if (text.substr(i, key.size()) == key) {
          out += value;
          i += key.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) {
      out += text[i++];
    }
  }
  return out;
}

InterpreterResponse parse_model_output(const std::string& raw) {
  const json obj = extract_object(raw);
  if (!obj.is_object() || !obj.contains("behaviors") || !obj.contains("script")) {
    throw MalformedOutput("reply must have \"behaviors\" and \"script\" fields");
  }
  if (!obj["behaviors"].is_array() || !obj["script"].is_string()) {
    throw MalformedOutput("\"behaviors\" must be an array and \"script\" a string");
  }
  InterpreterResponse resp;
  for (const auto& item : obj["behaviors"]) {
    if (!item.is_string()) {
      throw MalformedOutput("behavior entries must be strings");
    }
    const auto spec = parse_behavior_spec(item.get<std::string>());
    if (!spec) {
      throw MalformedOutput("unknown behavior '" + item.get<std::string>() + "'");
    }
    resp.sequence.push_back(*spec);
  }
  if (resp.sequence.empty() || resp.sequence.size() > kMaxSequenceLength) {
    throw MalformedOutput("behavior sequence must have 1 to " +
                          std::to_string(kMaxSequenceLength) + " entries");
  }
  resp.script_text = obj["script"].get<std::string>();
  resp.script = schedule::parse_script(resp.script_text);
  if (resp.script.stages.size() != resp.sequence.size()) {
    throw MalformedOutput("script has " + std::to_string(resp.script.stages.size()) +
                          " stages for " + std::to_string(resp.sequence.size()) + " behaviors");
  }
  for (std::size_t i = 0; i < resp.sequence.size(); ++i) {
    BehaviorSpec& spec = resp.sequence[i];
    const schedule::Stage& stage = resp.script.stages[i];
    if (stage.behavior != spec.behavior) {
      throw MalformedOutput("stage " + std::to_string(i + 1) + " runs " +
                            std::string(planners::to_string(stage.behavior)) + " but behavior " +
                            std::to_string(i + 1) + " is " + to_string(spec));
    }
    if (!spec.target_speed) {
      spec.target_speed = stage.target_speed;
    }
  }
  resp.raw_model_output = raw;
  return resp;
}

LlmInterpreter::LlmInterpreter(std::shared_ptr<ChatBackend> backend, PromptTemplates templates)
    : backend_(std::move(backend)), templates_(std::move(templates)) {}

std::string LlmInterpreter::build_prompt(const Instruction& instruction,
                                         const SceneDescription& scene) const {
  return fill_template(templates_.script, {{"instruction", instruction.text},
                                           {"scene", scene.text},
                                           {"grammar", std::string(schedule::kGrammarText)}});
}

InterpreterResponse LlmInterpreter::interpret(const Instruction& instruction,
                                              const SceneDescription& scene) {
  const std::string base = build_prompt(instruction, scene);
  std::string prompt = base;
  std::string error;
  std::string last_raw;
  double latency = 0.0;
  for (int attempt = 1; attempt <= 2; ++attempt) {
    count_call();
    const auto t0 = std::chrono::steady_clock::now();
    last_raw = backend_->complete(prompt);
    latency += seconds_since(t0);
    try {
      InterpreterResponse resp = parse_model_output(last_raw);
      resp.latency = latency;
      resp.attempts = attempt;
      return resp;
    } catch (const MalformedOutput& e) {
      error = e.what();
    } catch (const schedule::ScriptError& e) {
      error = std::string("script error: ") + e.what();
    }
    prompt = base + "\nYour previous reply was rejected: " + error +
             "\nReply again with a corrected JSON object.\n";
  }
  InterpreterResponse resp = fallback_response(error);
  resp.raw_model_output = last_raw;
  resp.latency = latency;
  resp.attempts = 2;
  return resp;
}

BehaviorSpec LlmInterpreter::next_behavior(const StepRequest& request) {
  std::string history;
  for (const HistoryEntry& h : request.history) {
    history += std::string(planners::to_string(h.behavior)) + (h.completed ? "*" : "") + "\n";
  }
  if (history.empty()) {
    history = "(none)\n";
  }
  const std::string prompt = fill_template(
      templates_.step,
      {{"instruction", request.instruction.text}, {"scene", request.scene.text}, {"history", history}});
  count_call();
  const std::string raw = backend_->complete(prompt);
  try {
    const json obj = extract_object(raw);
    if (obj.contains("behavior") && obj["behavior"].is_string()) {
      if (const auto spec = parse_behavior_spec(obj["behavior"].get<std::string>())) {
        return *spec;
      }
    }
  } catch (const MalformedOutput&) {
  }
  return {AtomicBehavior::lane_keeping, std::nullopt};
}

}  // namespace scriptdrive::interpreter
