#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tiltune/harness.hpp"

namespace tiltune::harness {

/// Everything the command line tool needs, with the reference scenario as
/// default: perturbed vehicle with sensor noise, 120 km/h lane change.
struct Settings {
  std::uint64_t seed = 1;
  til::TilSetup setup;
  TuningProblem problem;
  til::Mode mode = til::Mode::Til;          // simulate
  til::PidGains gains{0.2, 0.1, 0.0};       // simulate
  Method method = Method::SmgoVrftPrior;    // tune
  std::vector<Method> methods = all_methods();  // compare
  std::size_t jobs = 1;
  bool keep_traces = false;
};

Settings default_settings();

/// Sets one `section.key` entry. Throws ConfigError on unknown keys or
/// malformed values.
void apply_setting(Settings& settings, const std::string& key, const std::string& value);

/// Reads `section.key = value` lines; `#` starts a comment.
Settings parse_settings(std::istream& in, Settings base = default_settings());
Settings load_settings(const std::string& path, Settings base = default_settings());

/// Accepted keys in a stable order.
std::vector<std::string> setting_keys();

}  // namespace tiltune::harness
