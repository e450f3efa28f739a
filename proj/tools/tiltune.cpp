// tiltune: simulate, tune and compare TiL compensators from the command line.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tiltune/config.hpp"
#include "tiltune/harness.hpp"

namespace fs = std::filesystem;
using namespace tiltune;
using namespace tiltune::harness;
using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::vector<std::string> overrides;
};

Settings load(const Globals& g) {
  Settings s = g.config.empty() ? default_settings() : load_settings(g.config);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(s, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) s.seed = *g.seed;
  return s;
}

std::ofstream open_out(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw ConfigError("cannot write " + p.string());
  return f;
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json gains_json(const til::PidGains& g) { return {{"kp", g.kp}, {"ti", num(g.ti)}, {"td", g.td}}; }

til::PidGains read_gains(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open gains file '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("gains file '" + path + "': " + e.what());
  }
  const json& g = j.contains("gains") ? j["gains"] : j;
  if (!g.contains("kp")) throw ConfigError("gains file '" + path + "' has no kp");
  til::PidGains out;
  out.kp = g["kp"].get<double>();
  out.ti = g.value("ti", json(nullptr)).is_null() ? std::numeric_limits<double>::infinity() : g["ti"].get<double>();
  out.td = g.value("td", 0.0);
  out.validate();
  return out;
}

refgen::StaticYawMap build_map(const Settings& s) {
  return refgen::build_static_map(s.setup.nominal, refgen::default_speed_grid(), refgen::default_steer_grid());
}

json metrics_json(const til::TilTrace& tr, const Settings& s) {
  const auto m = metrics(tr);
  const auto c = cost_terms(tr);
  return {{"mode", til::to_string(tr.mode)},
          {"rms_yaw_rate_deg_s", m.yaw_rate},
          {"rms_sideslip_deg", m.sideslip},
          {"rms_steer_rate_deg_s", m.steer_rate},
          {"tracking", c.tracking},
          {"steer_rate_sq", c.steer_rate},
          {"f_bo", c.tracking + s.problem.gamma_u * c.steer_rate},
          {"g_c_deg", rad2deg(evaluate_constraint(tr, s.problem.beta_max))},
          {"diverged", tr.diverged},
          {"failure", tr.failure}};
}

int run_simulate(const Globals& g, const std::string& mode, const std::string& gains_file) {
  auto s = load(g);
  if (!mode.empty()) s.mode = til::mode_from_string(mode);
  if (!gains_file.empty()) s.gains = read_gains(gains_file);
  til::TilSystem sys(s.setup, build_map(s), s.problem.maneuver.build());
  const auto tr = sys.run(s.mode, s.gains, derive_seed(s.seed, 0));
  {
    auto f = open_out(fs::path(g.out) / "trace.csv");
    til::write_trace_csv(f, tr);
  }
  auto j = metrics_json(tr, s);
  j["gains"] = gains_json(s.gains);
  j["maneuver"] = sys.maneuver().name;
  j["seed"] = s.seed;
  auto f = open_out(fs::path(g.out) / "metrics.json");
  f << j.dump(2) << '\n';
  std::cout << j.dump() << '\n';
  return 0;
}

int run_tune(const Globals& g, const std::string& method) {
  auto s = load(g);
  if (!method.empty()) s.method = method_from_string(method);
  Scenario sc(s.setup, build_map(s), s.problem);
  const auto r = tune(s.method, sc, s.seed);
  StudyReport report;
  report.options = {{s.method}, 1, s.seed, 1, false};
  report.runs.push_back({s.method, 0, s.seed, r, {}});
  {
    auto f = open_out(fs::path(g.out) / "history.csv");
    write_history_csv(f, report);
  }
  const auto inc = incumbent_curve(r.evaluations);
  json j{{"method", to_string(s.method)},
         {"seed", s.seed},
         {"gains", gains_json(r.gains)},
         {"evaluations", r.evaluations.size()},
         {"final_incumbent", num(inc.empty() ? INFINITY : inc.back())},
         {"infeasible", infeasible_curve(r.evaluations).empty() ? 0 : infeasible_curve(r.evaluations).back()}};
  if (r.vrft) {
    j["vrft"] = gains_json(r.vrft->gains);
    j["vrft"]["pi_fallback"] = r.vrft->pi_fallback;
    j["vrft"]["fit_cost"] = r.vrft->fit.cost;
    auto f = open_out(fs::path(g.out) / "experiment.csv");
    vrft::write_experiment_csv(f, r.vrft->data);
  }
  auto f = open_out(fs::path(g.out) / "tune.json");
  f << j.dump(2) << '\n';
  std::cout << j.dump() << '\n';
  return 0;
}

int run_compare(const Globals& g, const std::vector<std::string>& methods, std::optional<std::size_t> repeats,
                std::optional<std::size_t> budget, std::optional<std::size_t> jobs, bool traces) {
  auto s = load(g);
  if (!methods.empty()) {
    s.methods.clear();
    for (const auto& m : methods) s.methods.push_back(method_from_string(m));
  }
  if (repeats) s.problem.repeats = *repeats;
  if (budget) s.problem.budget = *budget;
  if (jobs) s.jobs = *jobs;
  if (traces) s.keep_traces = true;
  Scenario sc(s.setup, build_map(s), s.problem);
  const auto report = compare(sc, {s.methods, s.problem.repeats, s.seed, s.jobs, s.keep_traces});
  write_study(g.out, report);
  for (const auto& m : report.summaries)
    std::cout << to_string(m.method) << ": runs " << m.runs << ", failed " << m.failed_runs << ", final incumbent "
              << m.final_incumbent_mean << ", mean selection " << m.selection_mean << " s\n";
  return 0;
}

int run_map(const Globals& g) {
  const auto s = load(g);
  const auto t0 = std::chrono::steady_clock::now();
  const auto map = build_map(s);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  auto f = open_out(fs::path(g.out) / "map.csv");
  map.write_csv(f);
  std::cout << json{{"map", (fs::path(g.out) / "map.csv").string()}, {"seconds", secs}}.dump() << '\n';
  return 0;
}

int run_export(const Globals& g, const std::string& gains_file) {
  auto s = load(g);
  if (!gains_file.empty()) s.gains = read_gains(gains_file);
  til::TilSystem sys(s.setup, build_map(s), s.problem.maneuver.build());
  json rows = json::array();
  auto table = open_out(fs::path(g.out) / "metrics.csv");
  table << std::setprecision(10);
  table << "mode,rms_yaw_rate_deg_s,rms_sideslip_deg,rms_steer_rate_deg_s,f_bo,g_c_deg\n";
  for (til::Mode mode : {til::Mode::MpcOnTwin, til::Mode::MpcOnVehicle, til::Mode::MpcOpenLoopOnVehicle, til::Mode::Til}) {
    const auto tr = sys.run(mode, s.gains, derive_seed(s.seed, 0));
    auto f = open_out(fs::path(g.out) / (std::string("trace_") + til::to_string(mode) + ".csv"));
    til::write_trace_csv(f, tr);
    const auto j = metrics_json(tr, s);
    table << til::to_string(mode) << ',' << j["rms_yaw_rate_deg_s"].get<double>() << ','
          << j["rms_sideslip_deg"].get<double>() << ',' << j["rms_steer_rate_deg_s"].get<double>() << ','
          << j["f_bo"].get<double>() << ',' << j["g_c_deg"].get<double>() << '\n';
    rows.push_back(j);
  }
  json j{{"maneuver", sys.maneuver().name}, {"seed", s.seed}, {"gains", gains_json(s.gains)}, {"modes", rows}};
  auto f = open_out(fs::path(g.out) / "metrics.json");
  f << j.dump(2) << '\n';
  std::cout << j.dump() << '\n';
  return 0;
}

int fail(const char* kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twin-in-the-Loop compensator tuning workbench"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "settings file (section.key = value)");
  app.add_option("--seed", g.seed, "root seed");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--set", g.overrides, "override one setting, key=value (repeatable)");

  std::string mode, gains_file, method;
  std::vector<std::string> methods;
  std::optional<std::size_t> repeats, budget, jobs;
  bool traces = false;

  auto* sim = app.add_subcommand("simulate", "run one maneuver with one controller mode");
  sim->add_option("--mode", mode, "mpc-on-twin | mpc-on-vehicle | mpc-open-loop-on-vehicle | til");
  sim->add_option("--gains", gains_file, "JSON file with kp, ti, td (tune.json works)");
  auto* tun = app.add_subcommand("tune", "tune the compensator with one method");
  tun->add_option("--method", method, "vrft | cbo | smgo | cbo+vrft-prior | smgo+vrft-prior | smgo-vrft-cost");
  auto* cmp = app.add_subcommand("compare", "repeated optimizer study");
  cmp->add_option("--methods", methods, "methods to compare")->delimiter(',');
  cmp->add_option("--repeats", repeats, "repeats per method");
  cmp->add_option("--budget", budget, "iterations per run");
  cmp->add_option("--jobs", jobs, "concurrent runs");
  cmp->add_flag("--traces", traces, "store the sideslip trace of every evaluation");
  auto* map = app.add_subcommand("map", "build the static yaw-rate map of the twin");
  auto* exp = app.add_subcommand("export", "traces and metrics of every controller mode");
  exp->add_option("--gains", gains_file, "JSON file with kp, ti, td");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*sim) return run_simulate(g, mode, gains_file);
    if (*tun) return run_tune(g, method);
    if (*cmp) return run_compare(g, methods, repeats, budget, jobs, traces);
    if (*map) return run_map(g);
    if (*exp) return run_export(g, gains_file);
  } catch (const Error& e) {
    return fail(e.kind(), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return fail("usage", "no subcommand", 2);
}
