#include <cmath>
#include <cstdio>
#include <sstream>

#include "scriptdrive/interpreter.hpp"

namespace scriptdrive::interpreter {

namespace {

std::string fixed1(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", value);
  // "-0.0" reads badly and carries no information
  if (std::string(buf) == "-0.0") {
    return "0.0";
  }
  return buf;
}

}  // namespace

std::string to_string(const BehaviorSpec& spec) {
  std::string out(planners::to_string(spec.behavior));
  if (spec.target_speed) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", *spec.target_speed);
    out += "(" + std::string(buf) + ")";
  }
  return out;
}

std::optional<BehaviorSpec> parse_behavior_spec(std::string_view text) {
  while (!text.empty() && text.front() == ' ') {
    text.remove_prefix(1);
  }
  while (!text.empty() && text.back() == ' ') {
    text.remove_suffix(1);
  }
  BehaviorSpec spec;
  const std::size_t open = text.find('(');
  const std::string_view name = text.substr(0, open);
  const auto b = planners::behavior_from_string(name);
  if (!b) {
    return std::nullopt;
  }
  spec.behavior = *b;
  if (open != std::string_view::npos) {
    if (text.back() != ')' ||
        (spec.behavior != AtomicBehavior::accelerate && spec.behavior != AtomicBehavior::decelerate)) {
      return std::nullopt;
    }
    const std::string inner(text.substr(open + 1, text.size() - open - 2));
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(inner, &used);
    } catch (const std::exception&) {
      return std::nullopt;
    }
    if (used != inner.size() || !(value >= 0.0) || !std::isfinite(value)) {
      return std::nullopt;
    }
    spec.target_speed = value;
  }
  return spec;
}

std::vector<AtomicBehavior> behavior_types(const std::vector<BehaviorSpec>& sequence) {
  std::vector<AtomicBehavior> out;
  out.reserve(sequence.size());
  for (const auto& s : sequence) {
    out.push_back(s.behavior);
  }
  return out;
}

SceneDescription describe_scene(const Observation& obs) {
  std::ostringstream out;
  out << "Road: " << obs.lane_count << " lanes, lane 0 is the rightmost, speed limit "
      << fixed1(obs.speed_limit) << " m/s.\n";
  out << "Ego: lane " << obs.lane_index << " of " << obs.lane_count << ", speed "
      << fixed1(obs.ego.speed) << " m/s (limit " << fixed1(obs.speed_limit) << " m/s).\n";
  out << "Same-direction lanes: " << obs.lanes_left << " to the left, " << obs.lanes_right
      << " to the right.\n";
  if (obs.lanes_right == 0) {
    out << "Note: you are in the rightmost lane; a right lane change is not possible.\n";
  }
  if (obs.lanes_left == 0) {
    out << "Note: you are in the leftmost lane; a left lane change is not possible.\n";
  }
  for (world::Slot slot : world::kAllSlots) {
    out << world::to_string(slot) << ": ";
    const auto& n = obs.slot(slot);
    if (n) {
      out << "(gap " << fixed1(n->gap) << " m, speed " << fixed1(n->neighbor_speed) << " m/s)";
    } else {
      out << "none";
    }
    out << "\n";
  }
  return {out.str(), obs};
}

InterpreterResponse fallback_response(std::string error) {
  InterpreterResponse resp;
  resp.sequence = {BehaviorSpec{AtomicBehavior::lane_keeping, std::nullopt}};
  resp.script_text = "stage lane_keeping\n";
  resp.script = schedule::parse_script(resp.script_text);
  resp.intent_failed = true;
  resp.error = std::move(error);
  return resp;
}

}  // namespace scriptdrive::interpreter
