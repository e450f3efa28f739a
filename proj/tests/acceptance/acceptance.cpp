// Acceptance run: one PASS/FAIL line per criterion, details on the following
// indented lines. Exit status is nonzero only when the run itself breaks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../support/mpc_oracle.hpp"
#include "../support/qp_oracle.hpp"
#include "../support/test_functions.hpp"
#include "../support/vrft_oracle.hpp"
#include "tiltune/config.hpp"
#include "tiltune/harness.hpp"
#include "tiltune/qp.hpp"
#include "tiltune/smgo.hpp"

namespace fs = std::filesystem;
using namespace tiltune;
using namespace tiltune::harness;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  int id = 0;
  std::string title;
  bool pass = false;
  std::vector<std::string> details;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

refgen::StaticYawMap nominal_map(const til::TilSetup& setup) {
  return refgen::build_static_map(setup.nominal, refgen::default_speed_grid(), refgen::default_steer_grid());
}

Outcome tire_peak() {
  Outcome o{1, "tire peak slip within 1% of 9.10 deg"};
  const auto t0 = Clock::now();
  const double peak = rad2deg(dynamics::peak_slip(dynamics::VehicleParams{}.front));
  const double dt = seconds_since(t0);
  const double rel = std::abs(peak - 9.10) / 9.10;
  o.pass = rel <= 0.01 && dt < 1.0;
  o.details.push_back(fmt("peak %.4f deg, relative error %.3f%%, %.3g s", peak, 100.0 * rel, dt));
  return o;
}

Outcome qp_oracle() {
  Outcome o{2, "QP solver matches active-set enumeration on 500 random problems"};
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> dim_n(1, 8), dim_m(1, 16);
  double worst_obj = 0.0, worst_kkt = 0.0, solve_time = 0.0;
  int not_optimal = 0;
  const auto t0 = Clock::now();
  for (int trial = 0; trial < 500; ++trial) {
    const int n = dim_n(rng), m = dim_m(rng);
    const auto qp = oracle::random_qp(rng, n, m);
    const auto ts = Clock::now();
    const auto sol = mpc::solve_qp(qp);
    solve_time += seconds_since(ts);
    if (sol.status != mpc::QpStatus::Optimal) {
      ++not_optimal;
      continue;
    }
    const double best = oracle::brute_force_qp(qp);
    worst_obj = std::max(worst_obj, std::abs(sol.objective - best) / std::max(1.0, std::abs(best)));
    worst_kkt = std::max(worst_kkt, sol.residuals.max());
  }
  const double total = seconds_since(t0);
  o.pass = not_optimal == 0 && worst_obj <= 1e-8 && worst_kkt < 1e-8 && total < 30.0;
  o.details.push_back(fmt("non-optimal %d, max objective gap %.2e, max KKT residual %.2e", not_optimal, worst_obj,
                          worst_kkt));
  o.details.push_back(fmt("solver %.3f s, with oracle %.2f s", solve_time, total));
  return o;
}

Outcome condensation() {
  Outcome o{3, "condensed MPC matches the state-explicit optimum on 100 instances"};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double worst = 0.0;
  int failures = 0, active = 0;
  for (int trial = 0; trial < 100; ++trial) {
    mpc::MpcConfig cfg;
    cfg.horizon = 1 + static_cast<int>(u01(rng) * 5);
    cfg.alpha_max = deg2rad(1.0 + 8.0 * u01(rng));
    cfg.w_s = u01(rng) < 0.5 ? 0.0 : u01(rng);
    const double vx = 15.0 + 40.0 * u01(rng);
    const double beta = 0.03 * (u01(rng) - 0.5), r = 0.6 * (u01(rng) - 0.5), s = 0.1 * (u01(rng) - 0.5);
    const auto model = oracle::model_at(vx, beta, r, s, 4.0 * (u01(rng) - 0.5));
    const Eigen::Vector3d x0(beta, r, s);
    std::vector<double> ref(static_cast<std::size_t>(cfg.horizon));
    for (auto& v : ref) v = 1.2 * (u01(rng) - 0.5);
    const auto cqp = mpc::condense(model, x0, ref, 1.48, cfg);
    const auto sol = mpc::solve_qp(cqp.qp);
    const auto sparse = oracle::sparse_mpc(model, x0, ref, 1.48, cfg);
    if (sol.status != mpc::QpStatus::Optimal || !sparse.found) {
      ++failures;
      continue;
    }
    worst = std::max(worst, std::abs(cqp.cost(sol.z) - sparse.cost) / std::max(1.0, std::abs(sparse.cost)));
    if (!sol.active.empty()) ++active;
  }
  o.pass = failures == 0 && worst <= 1e-7;
  o.details.push_back(fmt("unsolved %d, max cost gap %.2e, instances with active constraints %d", failures, worst,
                          active));
  return o;
}

Outcome zero_mismatch(const Settings& base) {
  Outcome o{4, "identical plants without noise give s_delta = 0 and zero tracking cost"};
  Settings s = base;
  s.setup.perturbation = {};
  til::TilSystem sys(s.setup, nominal_map(s.setup), s.problem.maneuver.build());
  double max_delta = 0.0, tracking = 0.0;
  for (const til::PidGains& g : {til::PidGains{0.2, 0.1, 0.0}, til::PidGains{2.0, 0.05, 0.3}}) {
    const auto tr = sys.run(til::Mode::Til, g, 7);
    for (double d : tr.delta) max_delta = std::max(max_delta, std::abs(d));
    tracking = std::max(tracking, cost_terms(tr).tracking);
    if (tr.diverged) max_delta = INFINITY;
  }
  o.pass = max_delta == 0.0 && tracking == 0.0;
  o.details.push_back(fmt("%s: max |s_delta| %.3g rad, tracking term %.3g", sys.maneuver().name.c_str(), max_delta,
                          tracking));
  return o;
}

Outcome til_improvement(const Settings& base, const til::PidGains& gains) {
  Outcome o{5, "tuned TiL cuts the rms yaw-rate error by at least 30% vs MPC on the vehicle"};
  o.pass = true;
  const auto map = nominal_map(base.setup);
  for (const ManeuverSpec spec : {ManeuverSpec{ManeuverKind::LaneChange, 120.0, deg2rad(3.0), 0.01},
                                  ManeuverSpec{ManeuverKind::LaneChange, 140.0, deg2rad(2.4), 0.01}}) {
    til::TilSystem sys(base.setup, map, spec.build());
    const std::uint64_t noise = derive_seed(base.seed, 9);
    const auto mpc = metrics(sys.run(til::Mode::MpcOnVehicle, gains, noise));
    const auto til = metrics(sys.run(til::Mode::Til, gains, noise));
    const double reduction = 1.0 - til.yaw_rate / mpc.yaw_rate;
    o.pass = o.pass && reduction >= 0.30;
    o.details.push_back(fmt("%s: MPC %.3f deg/s, TiL %.3f deg/s, reduction %.1f%%", sys.maneuver().name.c_str(),
                            mpc.yaw_rate, til.yaw_rate, 100.0 * reduction));
  }
  o.details.push_back(fmt("gains kp %.4f, T_I %.4f s, T_D %.4f s", gains.kp, gains.ti, gains.td));
  return o;
}

const MethodSummary& summary(const StudyReport& r, Method m) {
  for (const auto& s : r.summaries)
    if (s.method == m) return s;
  throw ConfigError("method missing from the study");
}

const RunOutcome& run_of(const StudyReport& r, Method m, std::size_t repeat) {
  for (const auto& run : r.runs)
    if (run.method == m && run.repeat == repeat) return run;
  throw ConfigError("run missing from the study");
}

double final_incumbent(const RunOutcome& run) {
  if (!run.result) return INFINITY;
  const auto c = incumbent_curve(run.result->evaluations);
  return c.empty() ? INFINITY : c.back();
}

Outcome vrft_quality(const StudyReport& r) {
  Outcome o{6, "VRFT one-shot f_bo within 2x the SMGO+VRFT-prior incumbent"};
  o.pass = true;
  double worst = 0.0;
  for (std::size_t k = 0; k < r.options.repeats; ++k) {
    const double v = final_incumbent(run_of(r, Method::Vrft, k));
    const double s = final_incumbent(run_of(r, Method::SmgoVrftPrior, k));
    worst = std::max(worst, v / s);
    o.pass = o.pass && v <= 2.0 * s;
  }
  const double vm = summary(r, Method::Vrft).final_incumbent_mean;
  const double sm = summary(r, Method::SmgoVrftPrior).final_incumbent_mean;
  o.details.push_back(fmt("mean f_bo: VRFT %.4e, SMGO+prior %.4e, ratio of means %.3f, worst per-seed ratio %.3f", vm,
                          sm, vm / sm, worst));
  return o;
}

Outcome warm_start(const StudyReport& r) {
  Outcome o{7, "VRFT prior gives a mean final incumbent no worse than without, for SMGO and CBO"};
  o.pass = true;
  for (auto [plain, prior] : {std::pair{Method::Smgo, Method::SmgoVrftPrior}, std::pair{Method::Cbo, Method::CboVrftPrior}}) {
    const auto& a = summary(r, plain);
    const auto& b = summary(r, prior);
    const bool ok = b.final_incumbent_mean <= a.final_incumbent_mean;
    o.pass = o.pass && ok;
    o.details.push_back(fmt("%s %.4e +- %.2e, %s %.4e +- %.2e: %s", to_string(plain), a.final_incumbent_mean,
                            a.final_incumbent_std, to_string(prior), b.final_incumbent_mean, b.final_incumbent_std,
                            ok ? "ok" : "prior worse"));
  }
  return o;
}

Outcome speed_ratio(const StudyReport& r) {
  Outcome o{8, "SMGO selection time at 60 samples <= 0.2x CBO"};
  const auto& s = summary(r, Method::Smgo);
  const auto& c = summary(r, Method::Cbo);
  const double ratio = s.selection_last_mean / c.selection_last_mean;
  o.pass = ratio <= 0.2;
  o.details.push_back(fmt("last selection: SMGO %.3g s, CBO %.3g s, ratio %.4f", s.selection_last_mean,
                          c.selection_last_mean, ratio));
  o.details.push_back(fmt("all iterations: SMGO %.3g s, CBO %.3g s", s.selection_mean, c.selection_mean));
  return o;
}

Outcome vrft_recovery() {
  Outcome o{9, "VRFT recovers a PI-representable ideal controller to 1e-6"};
  const til::PidGains ideal{0.8, 0.3, 0.0};
  const auto s = oracle::synthetic(ideal);
  const auto fit = vrft::fit_pid(s.data, s.spec, {.structure = vrft::Structure::Pi});
  const double ekp = std::abs(fit.gains.kp / ideal.kp - 1.0);
  const double eti = std::abs(fit.gains.ti / ideal.ti - 1.0);
  o.pass = ekp < 1e-6 && eti < 1e-6 && fit.gains.td == 0.0;
  o.details.push_back(fmt("kp %.10f (rel %.1e), T_I %.10f (rel %.1e)", fit.gains.kp, ekp, fit.gains.ti, eti));
  return o;
}

Outcome smgo_bounds() {
  Outcome o{10, "SMGO bounds hold on a grid and 200 iterations reach 1% of the optimum in >= 8/10 runs"};
  const auto grid = oracle::branin_grid(1500);
  const auto box = oracle::branin_box();
  int hits = 0, violations = 0;
  std::string gaps;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    smgo::SmgoConfig cfg;
    cfg.seed = seed;
    cfg.budget = 200;
    cfg.alpha = 0.002;
    cfg.beta = 0.02;
    cfg.gamma_f = 1.05 * grid.lipschitz_f;
    cfg.gamma_g = 1.05 * grid.lipschitz_g;
    smgo::Smgo s(box, cfg);
    for (int it = 0; it < 200; ++it) {
      s.iterate(oracle::branin_eval);
      for (int i = 0; i <= 40; ++i)
        for (int j = 0; j <= 40; ++j) {
          const std::vector<double> u{i / 40.0, j / 40.0};
          const auto th = box.from_unit(u);
          const auto fb = s.f_bounds(u);
          const auto gb = s.g_bounds(u);
          const double f = oracle::branin(th[0], th[1]), g = oracle::branin_disc(th[0], th[1]);
          if (f < fb.lower - 1e-9 || f > fb.upper + 1e-9 || g < gb.lower - 1e-9 || g > gb.upper + 1e-9) ++violations;
        }
    }
    const double gap = (s.incumbent() - grid.optimum) / grid.optimum;
    if (gap <= 0.01) ++hits;
    gaps += fmt(" %.2f%%", 100.0 * gap);
  }
  o.pass = violations == 0 && hits >= 8;
  o.details.push_back(fmt("grid optimum %.6f, runs within 1%%: %d/10, bound violations %d", grid.optimum, hits,
                          violations));
  o.details.push_back("final gaps:" + gaps);
  o.details.push_back("alpha 0.002, beta 0.02, known Lipschitz constants");

  // Same problem with the tuning defaults, for reference.
  int default_hits = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    smgo::SmgoConfig cfg;
    cfg.seed = seed;
    cfg.budget = 200;
    cfg.gamma_f = 1.05 * grid.lipschitz_f;
    cfg.gamma_g = 1.05 * grid.lipschitz_g;
    const auto h = smgo::minimize(box, cfg, oracle::branin_eval);
    if ((h.back().incumbent - grid.optimum) / grid.optimum <= 0.01) ++default_hits;
  }
  o.details.push_back(fmt("with alpha 0.005, beta 0.1: %d/10", default_hits));
  return o;
}

Outcome constraint_accounting(const StudyReport& r, const fs::path& dir, double beta_max) {
  Outcome o{11, "feasibility recounted from stored traces matches the infeasible counts"};
  std::size_t checked = 0, mismatches = 0, infeasible = 0;
  for (const auto& run : r.runs) {
    if (!run.result) continue;
    std::string name = std::string(to_string(run.method)) + "_r" + std::to_string(run.repeat) + ".csv";
    std::replace(name.begin(), name.end(), '+', '_');
    std::ifstream in(dir / "traces" / name);
    const auto rows = read_beta_traces_csv(in);
    const auto& hist = run.result->history;
    if (rows.size() != hist.size()) {
      ++mismatches;
      continue;
    }
    std::size_t recount = 0, reported = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double peak = 0.0;
      for (double b : rows[i].beta) peak = std::max(peak, std::abs(b));
      const bool feasible = !rows[i].failed && peak <= beta_max;
      recount += !feasible;
      reported += !hist[i].feasible;
      if (recount != reported) ++mismatches;
      ++checked;
    }
    infeasible += reported;
  }
  o.pass = mismatches == 0 && checked > 0;
  o.details.push_back(fmt("beta_max %.2f deg, %zu runs, %zu iterations checked, %zu infeasible, %zu mismatches", rad2deg(beta_max), r.runs.size(), checked,
                          infeasible, mismatches));
  return o;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism(const fs::path& a, const fs::path& b) {
  Outcome o{12, "two compare runs with the same root seed give byte-identical CSVs"};
  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
    ++files;
    const auto other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || read_bytes(e.path()) != read_bytes(other)) ++differ;
  }
  o.pass = files > 0 && differ == 0;
  o.details.push_back(fmt("%zu CSV files compared, %zu differ", files, differ));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "tiltune_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  const auto start = Clock::now();

  try {
    Settings settings = default_settings();
    settings.seed = 7;
    std::vector<Outcome> out;
    out.push_back(tire_peak());
    out.push_back(qp_oracle());
    out.push_back(condensation());
    out.push_back(zero_mismatch(settings));

    // Full study at the reference settings: 10 repeats of 60 evaluations.
    Scenario scenario(settings.setup, nominal_map(settings.setup), settings.problem);
    const auto t0 = Clock::now();
    const auto study = compare(scenario, {{Method::Vrft, Method::Smgo, Method::SmgoVrftPrior, Method::Cbo,
                                           Method::CboVrftPrior},
                                          settings.problem.repeats, settings.seed, 1, false});
    write_study((work / "study").string(), study);
    const double study_seconds = seconds_since(t0);

    out.push_back(til_improvement(settings, run_of(study, Method::SmgoVrftPrior, 0).result->gains));
    out.push_back(vrft_quality(study));
    out.push_back(warm_start(study));
    out.push_back(speed_ratio(study));
    out.push_back(vrft_recovery());
    out.push_back(smgo_bounds());

    // Smaller study with every method and stored traces, executed twice.
    TuningProblem small = settings.problem;
    small.budget = 15;
    small.repeats = 2;
    Scenario small_scenario(settings.setup, nominal_map(settings.setup), small);
    const CompareOptions opts{all_methods(), small.repeats, settings.seed, 1, true};
    const auto first = compare(small_scenario, opts);
    write_study((work / "traced_a").string(), first);
    write_study((work / "traced_b").string(), compare(small_scenario, opts));
    out.push_back(constraint_accounting(first, work / "traced_a", small.beta_max));
    out.push_back(determinism(work / "traced_a", work / "traced_b"));

    std::sort(out.begin(), out.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
    int passed = 0;
    for (const auto& o : out) {
      std::printf("criterion %2d %s  %s\n", o.id, o.pass ? "PASS" : "FAIL", o.title.c_str());
      for (const auto& d : o.details) std::printf("              %s\n", d.c_str());
      passed += o.pass;
    }
    std::printf("%d/%zu criteria pass; study %.1f s, total %.1f s, outputs in %s\n", passed, out.size(), study_seconds,
                seconds_since(start), work.string().c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance run aborted: %s\n", e.what());
    return 1;
  }
  return 0;
}
