#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "scriptdrive/world.hpp"

namespace scriptdrive::world {

class ScenarioLoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VehicleSpec {
  VehicleKind kind = VehicleKind::background;
  int lane = 0;
  double x = 0.0;
  double speed = 0.0;
  double desired_speed = 0.0;
  double length = 5.0;
  double width = 2.0;
};

/// Seeded perturbation applied to background vehicles when a world is built.
struct Jitter {
  double position = 0.0;  // uniform in [-position, +position] meters
  double speed = 0.0;     // uniform in [-speed, +speed] m/s
};

struct Scenario {
  std::string name;
  RoadNetwork road;
  std::vector<VehicleSpec> vehicles;
  std::uint64_t seed = 0;
  Jitter jitter;

  /// Deterministic world for the given seed.
  WorldState build(std::uint64_t seed) const;
  WorldState build() const { return build(seed); }
};

Scenario parse_scenario(const std::string& text, const std::string& origin = "<string>");
Scenario load_scenario(const std::filesystem::path& path);
std::string render_scenario(const Scenario& scenario);

}  // namespace scriptdrive::world
