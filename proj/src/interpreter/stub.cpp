#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

#include "scriptdrive/interpreter.hpp"

namespace scriptdrive::interpreter {

namespace {

using B = AtomicBehavior;

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool has_word(const std::string& text, std::string_view word) {
  std::size_t pos = 0;
  while ((pos = text.find(word, pos)) != std::string::npos) {
    const bool start_ok = pos == 0 || !std::isalpha(static_cast<unsigned char>(text[pos - 1]));
    const std::size_t end = pos + word.size();
    const bool end_ok = end >= text.size() || !std::isalpha(static_cast<unsigned char>(text[end]));
    if (start_ok && end_ok) {
      return true;
    }
    pos = end;
  }
  return false;
}

bool has_any(const std::string& text, std::initializer_list<std::string_view> words) {
  return std::any_of(words.begin(), words.end(),
                     [&](std::string_view w) { return has_word(text, w); });
}

struct Topology {
  int lanes_left = 1;
  int lanes_right = 1;
};

Topology topology_of(const Observation* context) {
  if (!context) {
    return {};
  }
  return {context->lanes_left, context->lanes_right};
}

BehaviorSpec spec(B b, std::optional<double> target = std::nullopt) { return {b, target}; }

/// "... to 20 m/s" or "... to 36 km/h" style explicit targets.
std::optional<double> explicit_speed(const std::string& text) {
  for (std::string_view unit : {"m/s", "km/h", "kph", "mph"}) {
    const std::size_t at = text.find(unit);
    if (at == std::string::npos) {
      continue;
    }
    std::size_t end = at;
    while (end > 0 && text[end - 1] == ' ') {
      --end;
    }
    std::size_t begin = end;
    while (begin > 0 && (std::isdigit(static_cast<unsigned char>(text[begin - 1])) ||
                         text[begin - 1] == '.')) {
      --begin;
    }
    double value = 0.0;
    const auto res = std::from_chars(text.data() + begin, text.data() + end, value);
    if (begin == end || res.ec != std::errc()) {
      continue;
    }
    if (unit == "km/h" || unit == "kph") {
      value /= 3.6;
    } else if (unit == "mph") {
      value *= 0.44704;
    }
    return value;
  }
  return std::nullopt;
}

}  // namespace

StubResult stub_sequence(std::string_view instruction, const Observation* context) {
  const std::string t = lower(instruction);
  const Topology topo = topology_of(context);
  StubResult out;

  if (t.find("pull over") != std::string::npos || has_any(t, {"park", "shoulder", "curb"})) {
    for (int i = 0; i < topo.lanes_right; ++i) {
      out.sequence.push_back(spec(B::right_lane_change));
    }
    out.sequence.push_back(spec(B::decelerate, 0.0));
    return out;
  }
  if (has_any(t, {"stop", "halt"})) {
    out.sequence.push_back(spec(B::decelerate, 0.0));
    return out;
  }
  if (has_any(t, {"overtake", "pass", "get past", "get around"})) {
    if (topo.lanes_left > 0) {
      out.sequence = {spec(B::left_lane_change), spec(B::accelerate), spec(B::right_lane_change)};
    } else if (topo.lanes_right > 0) {
      out.sequence = {spec(B::right_lane_change), spec(B::accelerate), spec(B::left_lane_change)};
    } else {
      out.sequence = {spec(B::accelerate)};
    }
    return out;
  }
  if (has_any(t, {"unsafe", "nervous", "scared", "uncomfortable", "anxious"})) {
    const B side = topo.lanes_left > 0 || topo.lanes_right == 0 ? B::left_lane_change
                                                                : B::right_lane_change;
    if (topo.lanes_left > 0 || topo.lanes_right > 0) {
      out.sequence.push_back(spec(side));
    }
    out.sequence.push_back(spec(B::accelerate));
    out.sequence.push_back(spec(B::lane_keeping));
    return out;
  }
  const bool lateral =
      has_any(t, {"lane", "lanes", "merge", "move", "shift", "switch", "change", "go", "get"});
  if (lateral && has_word(t, "left")) {
    if (topo.lanes_left > 0) {
      out.sequence.push_back(spec(B::left_lane_change));
    } else {
      out.sequence.push_back(spec(B::lane_keeping));
      out.intent_failed = true;
    }
    return out;
  }
  if (lateral && has_word(t, "right")) {
    if (topo.lanes_right > 0) {
      out.sequence.push_back(spec(B::right_lane_change));
    } else {
      out.sequence.push_back(spec(B::lane_keeping));
      out.intent_failed = true;
    }
    return out;
  }
  if (has_any(t, {"change lanes", "change lane", "switch lanes", "another lane", "other lane"})) {
    if (topo.lanes_left > 0) {
      out.sequence.push_back(spec(B::left_lane_change));
    } else if (topo.lanes_right > 0) {
      out.sequence.push_back(spec(B::right_lane_change));
    } else {
      out.sequence.push_back(spec(B::lane_keeping));
      out.intent_failed = true;
    }
    return out;
  }
  if (has_any(t, {"speed up", "faster", "accelerate", "hurry", "quicker"})) {
    out.sequence.push_back(spec(B::accelerate, explicit_speed(t)));
    return out;
  }
  if (has_any(t, {"slow down", "slower", "decelerate", "ease off", "brake", "too fast"})) {
    out.sequence.push_back(spec(B::decelerate, explicit_speed(t)));
    return out;
  }
  if (has_any(t, {"keep", "stay", "maintain", "continue", "follow"})) {
    out.sequence.push_back(spec(B::lane_keeping));
    return out;
  }
  out.sequence.push_back(spec(B::lane_keeping));
  out.intent_failed = true;
  return out;
}

std::string stub_script(const std::vector<BehaviorSpec>& sequence) {
  std::ostringstream out;
  for (const BehaviorSpec& s : sequence) {
    out << "stage " << planners::to_string(s.behavior);
    switch (s.behavior) {
      case B::left_lane_change:
        out << " when (gap_left_front > 20.0 and gap_left_rear > 15.0) timeout 15.0";
        break;
      case B::right_lane_change:
        out << " when (gap_right_front > 20.0 and gap_right_rear > 15.0) timeout 15.0";
        break;
      case B::lane_keeping:
        out << " until (elapsed >= 5.0) timeout 10.0";
        break;
      case B::accelerate:
      case B::decelerate:
        if (s.target_speed) {
          out << " target " << schedule::format_number(*s.target_speed);
        }
        out << " timeout 15.0";
        break;
    }
    out << "\n";
  }
  out << "fallback decelerate when (ttc_front < 1.5)\n";
  return out.str();
}

InterpreterResponse StubInterpreter::interpret(const Instruction& instruction,
                                               const SceneDescription& scene) {
  count_call();
  const StubResult r =
      stub_sequence(instruction.text, use_context_ ? &scene.snapshot : nullptr);
  InterpreterResponse resp;
  resp.sequence = r.sequence;
  resp.script_text = stub_script(r.sequence);
  resp.script = schedule::parse_script(resp.script_text);
  resp.raw_model_output = resp.script_text;
  resp.intent_failed = r.intent_failed;
  resp.attempts = 1;
  return resp;
}

BehaviorSpec StubInterpreter::next_behavior(const StepRequest& request) {
  count_call();
  const StubResult r = stub_sequence(request.instruction.text,
                                     use_context_ ? &request.initial_scene.snapshot : nullptr);
  const auto done = static_cast<std::size_t>(
      std::count_if(request.history.begin(), request.history.end(),
                    [](const HistoryEntry& h) { return h.completed; }));
  if (r.intent_failed || done >= r.sequence.size()) {
    return {AtomicBehavior::lane_keeping, std::nullopt};
  }
  return r.sequence[done];
}

}  // namespace scriptdrive::interpreter
