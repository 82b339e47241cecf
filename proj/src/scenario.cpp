#include "scriptdrive/scenario.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include "yaml_util.hpp"

namespace scriptdrive::world {

namespace {

using detail::get;
using detail::get_or;

double uniform_unit(std::mt19937_64& rng) {
  // 53 random mantissa bits in [0, 1); stable across standard libraries.
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

VehicleKind parse_kind(const YAML::Node& node, const std::string& origin) {
  const auto text = get_or<std::string, ScenarioLoadError>(node, "kind", "background", origin);
  if (text == "ego") {
    return VehicleKind::ego;
  }
  if (text == "background") {
    return VehicleKind::background;
  }
  throw ScenarioLoadError(detail::where(origin, node["kind"]) + ": unknown vehicle kind '" +
                          text + "'");
}

}  // namespace

WorldState Scenario::build(std::uint64_t run_seed) const {
  WorldState world;
  world.road = road;
  world.rng_seed = run_seed;
  world.idm.desired_speed = road.speed_limit;

  std::mt19937_64 rng(run_seed);
  int next_id = 1;
  for (const VehicleSpec& spec : vehicles) {
    VehicleState v;
    v.kind = spec.kind;
    v.length = spec.length;
    v.width = spec.width;
    v.x = spec.x;
    v.speed = spec.speed;
    v.desired_speed = spec.desired_speed;
    v.y = road.lane_center(spec.lane);
    v.heading = road.direction(spec.lane) > 0 ? 0.0 : M_PI;
    if (spec.kind == VehicleKind::ego) {
      v.id = 0;
      world.ego_geometry.length = spec.length;
      world.ego_geometry.width = spec.width;
      world.vehicles.insert(world.vehicles.begin(), v);
      continue;
    }
    v.id = next_id++;
    const double dx = (2.0 * uniform_unit(rng) - 1.0) * jitter.position;
    const double dv = (2.0 * uniform_unit(rng) - 1.0) * jitter.speed;
    v.x = std::fmod(v.x + dx + road.segment_length, road.segment_length);
    v.speed = std::max(0.0, v.speed + dv);
    world.vehicles.push_back(v);
  }
  world.validate();
  return world;
}

Scenario parse_scenario(const std::string& text, const std::string& origin) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ScenarioLoadError(origin + ": " + e.what());
  }
  detail::require_map<ScenarioLoadError>(root, origin, "scenario");
  detail::reject_unknown_keys<ScenarioLoadError>(root, origin,
                                                 {"name", "road", "vehicles", "seed", "jitter"});

  Scenario sc;
  sc.name = get_or<std::string, ScenarioLoadError>(root, "name", "", origin);
  sc.seed = get_or<std::uint64_t, ScenarioLoadError>(root, "seed", 0, origin);

  const YAML::Node road = root["road"];
  detail::require_map<ScenarioLoadError>(road, origin, "road");
  detail::reject_unknown_keys<ScenarioLoadError>(
      road, origin,
      {"lane_count", "lane_width", "segment_length", "speed_limit", "lane_directions"});
  sc.road.lane_count = get<int, ScenarioLoadError>(road, "lane_count", origin);
  sc.road.lane_width = get_or<double, ScenarioLoadError>(road, "lane_width", 3.5, origin);
  sc.road.segment_length = get<double, ScenarioLoadError>(road, "segment_length", origin);
  sc.road.speed_limit = get<double, ScenarioLoadError>(road, "speed_limit", origin);
  if (road["lane_directions"]) {
    sc.road.lane_directions =
        get<std::vector<int>, ScenarioLoadError>(road, "lane_directions", origin);
  }
  try {
    sc.road.validate();
  } catch (const std::invalid_argument& e) {
    throw ScenarioLoadError(origin + ": " + e.what());
  }

  if (const YAML::Node jitter = root["jitter"]) {
    detail::require_map<ScenarioLoadError>(jitter, origin, "jitter");
    detail::reject_unknown_keys<ScenarioLoadError>(jitter, origin, {"position", "speed"});
    sc.jitter.position = get_or<double, ScenarioLoadError>(jitter, "position", 0.0, origin);
    sc.jitter.speed = get_or<double, ScenarioLoadError>(jitter, "speed", 0.0, origin);
  }

  const YAML::Node vehicles = root["vehicles"];
  if (!vehicles || !vehicles.IsSequence()) {
    throw ScenarioLoadError(detail::where(origin, root) + ": 'vehicles' must be a list");
  }
  int egos = 0;
  for (const YAML::Node& v : vehicles) {
    detail::require_map<ScenarioLoadError>(v, origin, "vehicle");
    detail::reject_unknown_keys<ScenarioLoadError>(
        v, origin, {"kind", "lane", "x", "speed", "desired_speed", "length", "width"});
    VehicleSpec spec;
    spec.kind = parse_kind(v, origin);
    spec.lane = get<int, ScenarioLoadError>(v, "lane", origin);
    spec.x = get<double, ScenarioLoadError>(v, "x", origin);
    spec.speed = get<double, ScenarioLoadError>(v, "speed", origin);
    spec.desired_speed = get_or<double, ScenarioLoadError>(v, "desired_speed", 0.0, origin);
    spec.length = get_or<double, ScenarioLoadError>(v, "length", 5.0, origin);
    spec.width = get_or<double, ScenarioLoadError>(v, "width", 2.0, origin);
    if (spec.lane < 0 || spec.lane >= sc.road.lane_count) {
      throw ScenarioLoadError(detail::where(origin, v) + ": lane out of range");
    }
    if (spec.speed < 0.0 || !(spec.length > 0.0) || !(spec.width > 0.0)) {
      throw ScenarioLoadError(detail::where(origin, v) + ": invalid vehicle dimensions or speed");
    }
    egos += spec.kind == VehicleKind::ego ? 1 : 0;
    sc.vehicles.push_back(spec);
  }
  if (egos != 1) {
    throw ScenarioLoadError(origin + ": scenario must contain exactly one ego vehicle");
  }
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ScenarioLoadError("cannot open scenario file " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  Scenario sc = parse_scenario(buffer.str(), path.string());
  if (sc.name.empty()) {
    sc.name = path.stem().string();
  }
  return sc;
}

std::string render_scenario(const Scenario& sc) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << sc.name;
  out << YAML::Key << "seed" << YAML::Value << sc.seed;
  out << YAML::Key << "road" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "lane_count" << YAML::Value << sc.road.lane_count;
  out << YAML::Key << "lane_width" << YAML::Value << sc.road.lane_width;
  out << YAML::Key << "segment_length" << YAML::Value << sc.road.segment_length;
  out << YAML::Key << "speed_limit" << YAML::Value << sc.road.speed_limit;
  if (!sc.road.lane_directions.empty()) {
    out << YAML::Key << "lane_directions" << YAML::Value << YAML::Flow
        << sc.road.lane_directions;
  }
  out << YAML::EndMap;
  out << YAML::Key << "jitter" << YAML::Value << YAML::Flow << YAML::BeginMap;
  out << YAML::Key << "position" << YAML::Value << sc.jitter.position;
  out << YAML::Key << "speed" << YAML::Value << sc.jitter.speed;
  out << YAML::EndMap;
  out << YAML::Key << "vehicles" << YAML::Value << YAML::BeginSeq;
  for (const auto& v : sc.vehicles) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "kind" << YAML::Value
        << (v.kind == VehicleKind::ego ? "ego" : "background");
    out << YAML::Key << "lane" << YAML::Value << v.lane;
    out << YAML::Key << "x" << YAML::Value << v.x;
    out << YAML::Key << "speed" << YAML::Value << v.speed;
    if (v.desired_speed > 0.0) {
      out << YAML::Key << "desired_speed" << YAML::Value << v.desired_speed;
    }
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace scriptdrive::world
