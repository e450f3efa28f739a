#include "tiltune/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>

namespace tiltune::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || std::isnan(x))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

double to_finite(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (!std::isfinite(x)) throw ConfigError(key + ": value must be finite");
  return x;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": integer out of range");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "off" || v == "no" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

using Setter = std::function<void(Settings&, const std::string& key, const std::string& value)>;

template <typename F>
Setter number(F f) {
  return [f](Settings& s, const std::string& k, const std::string& v) { f(s, to_finite(k, v)); };
}

template <typename F>
Setter count(F f) {
  return [f](Settings& s, const std::string& k, const std::string& v) { f(s, static_cast<std::size_t>(to_u64(k, v))); };
}

template <typename F>
Setter flag(F f) {
  return [f](Settings& s, const std::string& k, const std::string& v) { f(s, to_bool(k, v)); };
}

void set_ts(Settings& s, double ts) {
  s.problem.maneuver.ts = ts;
  s.setup.mpc.ts = ts;
  s.setup.compensator.ts = ts;
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["seed"] = [](Settings& s, const std::string& k, const std::string& v) { s.seed = to_u64(k, v); };

    t["vehicle.mass"] = number([](Settings& s, double x) { s.setup.nominal.mass = x; });
    t["vehicle.yaw_inertia"] = number([](Settings& s, double x) { s.setup.nominal.yaw_inertia = x; });
    t["vehicle.lf"] = number([](Settings& s, double x) {
      s.setup.nominal.lf = x;
      s.setup.compensator.lf = x;
    });
    t["vehicle.lr"] = number([](Settings& s, double x) { s.setup.nominal.lr = x; });

    t["perturbation.preset"] = [](Settings& s, const std::string& k, const std::string& v) {
      if (v == "reference")
        s.setup.perturbation = dynamics::PlantPerturbation::reference();
      else if (v == "none")
        s.setup.perturbation = {};
      else
        throw ConfigError(k + ": expected 'reference' or 'none'");
    };
    t["perturbation.rear_stiffness_scale"] =
        number([](Settings& s, double x) { s.setup.perturbation.rear_stiffness_scale = x; });
    t["perturbation.relaxation_length"] =
        number([](Settings& s, double x) { s.setup.perturbation.relaxation_length = x; });
    t["perturbation.yaw_rate_noise_deg_s"] =
        number([](Settings& s, double x) { s.setup.perturbation.noise.yaw_rate_std = deg2rad(x); });
    t["perturbation.sideslip_noise_deg"] =
        number([](Settings& s, double x) { s.setup.perturbation.noise.sideslip_std = deg2rad(x); });
    t["perturbation.added_masses"] = [](Settings& s, const std::string& k, const std::string& v) {
      std::vector<dynamics::PointMass> masses;
      for (const auto& item : split(v, ';')) {
        const auto parts = split(item, ' ');
        if (parts.size() != 3) throw ConfigError(k + ": each mass is 'kg x y', separated by ';'");
        masses.push_back({to_finite(k, parts[0]), to_finite(k, parts[1]), to_finite(k, parts[2])});
      }
      s.setup.perturbation.added_masses = masses;
    };

    t["maneuver.kind"] = [](Settings& s, const std::string& k, const std::string& v) {
      if (v == "lane-change")
        s.problem.maneuver.kind = ManeuverKind::LaneChange;
      else if (v == "chicane")
        s.problem.maneuver.kind = ManeuverKind::Chicane;
      else
        throw ConfigError(k + ": expected 'lane-change' or 'chicane'");
    };
    t["maneuver.speed_kmh"] = number([](Settings& s, double x) { s.problem.maneuver.speed_kmh = x; });
    t["maneuver.amplitude_deg"] = number([](Settings& s, double x) { s.problem.maneuver.amplitude = deg2rad(x); });
    t["maneuver.ts"] = number(set_ts);

    t["mpc.horizon"] = count([](Settings& s, std::size_t n) { s.setup.mpc.horizon = static_cast<int>(n); });
    t["mpc.w_beta"] = number([](Settings& s, double x) { s.setup.mpc.w_beta = x; });
    t["mpc.w_r"] = number([](Settings& s, double x) { s.setup.mpc.w_r = x; });
    t["mpc.w_u"] = number([](Settings& s, double x) { s.setup.mpc.w_u = x; });
    t["mpc.w_rho"] = number([](Settings& s, double x) { s.setup.mpc.w_rho = x; });

    t["controller.kp"] = number([](Settings& s, double x) { s.gains.kp = x; });
    t["controller.ti"] = [](Settings& s, const std::string& k, const std::string& v) { s.gains.ti = to_double(k, v); };
    t["controller.td"] = number([](Settings& s, double x) { s.gains.td = x; });
    t["controller.zeta"] = number([](Settings& s, double x) { s.setup.compensator.zeta = x; });
    t["controller.nd"] = number([](Settings& s, double x) { s.setup.compensator.nd = x; });
    t["controller.anti_windup"] = flag([](Settings& s, bool b) { s.setup.compensator.anti_windup = b; });
    t["controller.saturation"] = flag([](Settings& s, bool b) { s.setup.compensator.saturation = b; });

    t["simulate.mode"] = [](Settings& s, const std::string&, const std::string& v) { s.mode = til::mode_from_string(v); };

    t["problem.gamma_u"] = number([](Settings& s, double x) { s.problem.gamma_u = x; });
    t["problem.beta_max_deg"] = number([](Settings& s, double x) { s.problem.beta_max = deg2rad(x); });
    t["problem.budget"] = count([](Settings& s, std::size_t n) { s.problem.budget = n; });
    t["problem.repeats"] = count([](Settings& s, std::size_t n) { s.problem.repeats = n; });
    t["problem.kp_min"] = number([](Settings& s, double x) { s.problem.box.lower[0] = x; });
    t["problem.kp_max"] = number([](Settings& s, double x) { s.problem.box.upper[0] = x; });
    t["problem.ti_min"] = number([](Settings& s, double x) { s.problem.box.lower[1] = x; });
    t["problem.ti_max"] = number([](Settings& s, double x) { s.problem.box.upper[1] = x; });
    t["problem.td_min"] = number([](Settings& s, double x) { s.problem.box.lower[2] = x; });
    t["problem.td_max"] = number([](Settings& s, double x) { s.problem.box.upper[2] = x; });

    t["vrft.amplitude_deg"] = number([](Settings& s, double x) { s.problem.vrft.prbs.amplitude = deg2rad(x); });
    t["vrft.period"] = count([](Settings& s, std::size_t n) { s.problem.vrft.prbs.period = n; });
    t["vrft.mr_hz"] = number([](Settings& s, double x) { s.problem.vrft.mr_hz = x; });
    t["vrft.mw_hz"] = number([](Settings& s, double x) { s.problem.vrft.mw_hz = x; });
    t["vrft.structure"] = [](Settings& s, const std::string& k, const std::string& v) {
      if (v == "pid")
        s.problem.vrft.fit.structure = vrft::Structure::Pid;
      else if (v == "pi")
        s.problem.vrft.fit.structure = vrft::Structure::Pi;
      else
        throw ConfigError(k + ": expected 'pid' or 'pi'");
    };
    t["vrft.derivative_tau"] = number([](Settings& s, double x) { s.problem.vrft.fit.derivative_tau = x; });
    t["vrft.trim_seconds"] = number([](Settings& s, double x) { s.problem.vrft.fit.trim_seconds = x; });
    t["vrft.experiment"] = [](Settings& s, const std::string& k, const std::string& v) {
      if (v == "straight")
        s.problem.vrft.straight_experiment = true;
      else if (v == "maneuver")
        s.problem.vrft.straight_experiment = false;
      else
        throw ConfigError(k + ": expected 'straight' or 'maneuver'");
    };

    t["smgo.delta"] = number([](Settings& s, double x) { s.problem.smgo.delta = x; });
    t["smgo.alpha"] = number([](Settings& s, double x) { s.problem.smgo.alpha = x; });
    t["smgo.beta"] = number([](Settings& s, double x) { s.problem.smgo.beta = x; });
    t["smgo.mesh_points"] = count([](Settings& s, std::size_t n) { s.problem.smgo.mesh_points = n; });
    t["smgo.gamma_inflation"] = number([](Settings& s, double x) { s.problem.smgo.gamma_inflation = x; });

    t["cbo.exploration_ratio"] = number([](Settings& s, double x) { s.problem.cbo.exploration_ratio = x; });
    t["cbo.acquisition_starts"] = count([](Settings& s, std::size_t n) { s.problem.cbo.acquisition_starts = n; });
    t["cbo.acquisition_screen"] = count([](Settings& s, std::size_t n) { s.problem.cbo.acquisition_screen = n; });
    t["cbo.gp_restarts"] = count([](Settings& s, std::size_t n) { s.problem.cbo.gp.restarts = n; });

    t["tune.method"] = [](Settings& s, const std::string&, const std::string& v) { s.method = method_from_string(v); };
    t["compare.methods"] = [](Settings& s, const std::string& k, const std::string& v) {
      std::vector<Method> m;
      for (const auto& name : split(v, ',')) m.push_back(method_from_string(name));
      if (m.empty()) throw ConfigError(k + ": at least one method is required");
      s.methods = m;
    };
    t["compare.jobs"] = count([](Settings& s, std::size_t n) { s.jobs = n; });
    t["compare.keep_traces"] = flag([](Settings& s, bool b) { s.keep_traces = b; });
    return t;
  }();
  return table;
}

}  // namespace

Settings default_settings() {
  Settings s;
  s.setup.perturbation = dynamics::PlantPerturbation::reference();
  return s;
}

void apply_setting(Settings& settings, const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown setting '" + key + "'");
  it->second(settings, key, trim(value));
}

Settings parse_settings(std::istream& in, Settings base) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected 'key = value'");
    try {
      apply_setting(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(number) + ": " + e.what());
    }
  }
  return base;
}

Settings load_settings(const std::string& path, Settings base) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  return parse_settings(f, std::move(base));
}

std::vector<std::string> setting_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : setters()) keys.push_back(k);
  return keys;
}

}  // namespace tiltune::harness
