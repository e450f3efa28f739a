#include "tiltune/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace tiltune::harness {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Stream tags under a run seed.
enum Stream : std::uint64_t { kExperiment = 1, kPrbs = 2, kNoise = 3, kOptimizer = 4, kRepeat = 5 };

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double sample_time(const std::vector<double>& t) { return t.size() >= 2 ? t[1] - t[0] : 0.0; }

double rms_difference(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

double mean_squared_rate(const std::vector<double>& x, double ts) {
  if (x.size() < 2 || !(ts > 0.0)) return 0.0;
  double s = 0.0;
  for (std::size_t k = 1; k < x.size(); ++k) {
    const double rate = (x[k] - x[k - 1]) / ts;
    s += rate * rate;
  }
  return s / static_cast<double>(x.size());
}

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  sd = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (!std::isfinite(mean)) {
    sd = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  for (double x : v) sd += (x - mean) * (x - mean);
  sd = v.size() > 1 ? std::sqrt(sd / static_cast<double>(v.size() - 1)) : 0.0;
}

}  // namespace

MetricsRow metrics(const til::TilTrace& trace) {
  MetricsRow row;
  row.yaw_rate = rad2deg(rms_difference(trace.twin_yaw_rate, trace.yaw_rate));
  row.sideslip = rad2deg(rms_difference(trace.twin_beta, trace.beta));
  row.steer_rate = rad2deg(std::sqrt(mean_squared_rate(trace.steer, sample_time(trace.t))));
  return row;
}

CostTerms cost_terms(const til::TilTrace& trace) {
  CostTerms c;
  if (trace.size() == 0) return c;
  for (double e : trace.error) c.tracking += e * e;
  c.tracking /= static_cast<double>(trace.size());
  c.steer_rate = mean_squared_rate(trace.command, sample_time(trace.t));
  return c;
}

double evaluate_cost(const til::TilTrace& trace, double gamma_u) {
  const auto c = cost_terms(trace);
  return c.tracking + gamma_u * c.steer_rate;
}

double evaluate_constraint(std::span<const double> beta, double beta_max) {
  double peak = 0.0;
  for (double b : beta) peak = std::max(peak, std::abs(b));
  return beta_max - peak;
}

double evaluate_constraint(const til::TilTrace& trace, double beta_max) {
  return evaluate_constraint(trace.beta, beta_max);
}

til::Maneuver ManeuverSpec::build() const {
  switch (kind) {
    case ManeuverKind::LaneChange: return double_lane_change_step(speed_kmh, amplitude, ts);
    case ManeuverKind::Chicane: return chicane(speed_kmh, amplitude, ts);
  }
  throw ConfigError("unknown maneuver kind");
}

til::Maneuver straight_run(const til::Maneuver& m) {
  til::Maneuver s = m;
  s.name = "straight-" + std::to_string(static_cast<int>(std::lround(m.v0 * 3.6)));
  std::fill(s.steer_request.begin(), s.steer_request.end(), 0.0);
  std::fill(s.ax.begin(), s.ax.end(), 0.0);
  return s;
}

opt::Box default_box() { return {{0.01, 0.05, 0.0}, {5.0, 10.0, 0.5}, {true, true, false}}; }

til::PidGains gains_from_theta(std::span<const double> theta) {
  if (theta.size() != 3) throw DimensionError("gain vector must be (kp, ti, td)");
  return {theta[0], theta[1], theta[2]};
}

std::vector<double> theta_from_gains(const til::PidGains& gains) { return {gains.kp, gains.ti, gains.td}; }

const char* to_string(Method method) {
  switch (method) {
    case Method::Vrft: return "vrft";
    case Method::Cbo: return "cbo";
    case Method::Smgo: return "smgo";
    case Method::CboVrftPrior: return "cbo+vrft-prior";
    case Method::SmgoVrftPrior: return "smgo+vrft-prior";
    case Method::SmgoVrftCost: return "smgo-vrft-cost";
  }
  return "unknown";
}

std::vector<Method> all_methods() {
  return {Method::Vrft, Method::Cbo, Method::Smgo, Method::CboVrftPrior, Method::SmgoVrftPrior, Method::SmgoVrftCost};
}

Method method_from_string(const std::string& name) {
  for (Method m : all_methods())
    if (name == to_string(m)) return m;
  throw ConfigError("unknown tuning method '" + name + "'");
}

bool uses_vrft(Method method) { return method != Method::Cbo && method != Method::Smgo; }

void TuningProblem::validate() const {
  box.validate();
  if (box.dim() != 3) throw ConfigError("search box must have three dimensions (kp, ti, td)");
  if (!(box.lower[0] > 0.0)) throw ConfigError("k_p lower bound must be > 0");
  if (!(box.lower[1] > 0.0)) throw ConfigError("T_I lower bound must be > 0");
  if (box.lower[2] < 0.0) throw ConfigError("T_D lower bound must be >= 0");
  if (!(gamma_u >= 0.0) || !std::isfinite(gamma_u)) throw ConfigError("gamma_u must be finite and >= 0");
  if (!(beta_max > 0.0)) throw ConfigError("beta_max must be > 0");
  if (repeats == 0) throw ConfigError("repeat count must be > 0");
  if (!(vrft.prbs.amplitude > 0.0) || vrft.prbs.period == 0) throw ConfigError("prbs amplitude and period must be > 0");
  smgo.validate();
  cbo.validate();
}

Scenario::Scenario(til::TilSetup setup, refgen::StaticYawMap map, const TuningProblem& problem)
    : problem_((problem.validate(), problem)),
      system_(setup, map, problem.maneuver.build()),
      experiment_(setup, map,
                  problem.vrft.straight_experiment ? straight_run(problem.maneuver.build()) : problem.maneuver.build()),
      filters_(vrft::FilterSpec::from_prototypes(problem.vrft.mr_hz, problem.vrft.mw_hz, problem.maneuver.ts)) {
  // Fill the twin caches now so that concurrent runs only read.
  system_.twin();
  experiment_.twin();
}

std::uint64_t evaluation_seed(std::uint64_t seed, std::size_t n) {
  return derive_seed(seed, kNoise, static_cast<std::uint64_t>(n));
}

EvaluationLog::EvaluationLog(const Scenario& scenario, CostKind cost, std::uint64_t seed, bool keep_traces)
    : scenario_(&scenario), cost_(cost), seed_(seed), keep_traces_(keep_traces) {}

opt::Evaluation EvaluationLog::evaluate(std::span<const double> theta) {
  const auto& problem = scenario_->problem();
  EvalRecord rec;
  rec.n = records_.size() + 1;
  rec.theta.assign(theta.begin(), theta.end());
  rec.noise_seed = evaluation_seed(seed_, rec.n);
  const auto t0 = std::chrono::steady_clock::now();
  opt::Evaluation ev;
  try {
    const auto trace = scenario_->system().run(til::Mode::Til, gains_from_theta(theta), rec.noise_seed);
    rec.f_bo = evaluate_cost(trace, problem.gamma_u);
    rec.g = evaluate_constraint(trace, problem.beta_max);
    rec.failed = trace.diverged || !trace.failure.empty();
    rec.f = cost_ == CostKind::Bo ? rec.f_bo : vrft::bo_vrft_cost(trace.error, scenario_->filters());
    if (keep_traces_) rec.beta = trace.beta;
  } catch (const Error&) {
    rec.failed = true;
    rec.g = -problem.beta_max;
  }
  if (rec.failed) {
    rec.f = std::numeric_limits<double>::quiet_NaN();
    rec.f_bo = rec.f;
  }
  rec.feasible = !rec.failed && rec.g >= 0.0;
  rec.evaluation_seconds = seconds_since(t0);
  ev.f = rec.f;
  ev.g = rec.g;
  ev.failed = rec.failed;
  records_.push_back(std::move(rec));
  return ev;
}

opt::Evaluator EvaluationLog::evaluator() {
  return [this](std::span<const double> theta) { return evaluate(theta); };
}

VrftDesign design_vrft(const Scenario& scenario, std::uint64_t seed) {
  const auto& settings = scenario.problem().vrft;
  const auto& sys = scenario.experiment_system();
  std::mt19937_64 rng(derive_seed(seed, kPrbs));
  const auto excitation = vrft::prbs(sys.maneuver().samples(), settings.prbs.amplitude, settings.prbs.period, rng);

  VrftDesign design;
  design.data = vrft::collect_open_loop(sys, excitation, derive_seed(seed, kExperiment));
  try {
    design.fit = vrft::fit_pid(design.data, scenario.filters(), settings.fit);
  } catch (const DesignError&) {
    if (settings.fit.structure != vrft::Structure::Pid) throw;
    auto pi = settings.fit;
    pi.structure = vrft::Structure::Pi;
    design.fit = vrft::fit_pid(design.data, scenario.filters(), pi);
    design.pi_fallback = true;
  }
  design.gains = design.fit.gains;
  const auto theta = theta_from_gains(design.gains);
  if (!scenario.problem().box.contains(theta)) {
    std::ostringstream msg;
    msg << "vrft design (kp " << design.gains.kp << ", ti " << design.gains.ti << ", td " << design.gains.td
        << ") lies outside the search box";
    throw DesignError(msg.str());
  }
  return design;
}

namespace {

til::PidGains best_gains(const std::vector<opt::IterationRecord>& history) {
  const opt::IterationRecord* best = nullptr;
  for (const auto& r : history)
    if (r.feasible && !r.failed && (!best || r.f < best->f)) best = &r;
  if (!best)
    for (const auto& r : history)
      if (!r.failed && (!best || r.g > best->g)) best = &r;
  if (!best) throw ConvergenceError("no completed evaluation to take gains from");
  return gains_from_theta(best->theta);
}

}  // namespace

TuneResult tune(Method method, const Scenario& scenario, std::uint64_t seed, bool keep_traces) {
  const auto& problem = scenario.problem();
  TuneResult out;
  out.method = method;
  out.seed = seed;
  if (uses_vrft(method)) out.vrft = design_vrft(scenario, seed);

  EvaluationLog log(scenario, method == Method::SmgoVrftCost ? CostKind::VrftLike : CostKind::Bo, seed, keep_traces);
  if (method == Method::Vrft) {
    const auto theta = theta_from_gains(out.vrft->gains);
    const auto ev = log.evaluate(theta);
    opt::IterationRecord rec;
    rec.n = 1;
    rec.theta = theta;
    rec.f = ev.f;
    rec.g = ev.g;
    rec.failed = ev.failed;
    rec.feasible = !ev.failed && ev.g >= 0.0;
    rec.incumbent = rec.feasible ? ev.f : kInf;
    rec.phase = "vrft";
    out.history.push_back(rec);
    out.gains = out.vrft->gains;
  } else {
    std::optional<std::vector<double>> prior;
    if (out.vrft) prior = theta_from_gains(out.vrft->gains);
    const std::uint64_t opt_seed = derive_seed(seed, kOptimizer);
    if (method == Method::Cbo || method == Method::CboVrftPrior) {
      auto cfg = problem.cbo;
      cfg.budget = problem.budget;
      cfg.seed = opt_seed;
      out.history = cbo::minimize(problem.box, cfg, log.evaluator(), prior ? &*prior : nullptr);
    } else {
      auto cfg = problem.smgo;
      cfg.budget = problem.budget;
      cfg.seed = opt_seed;
      out.history = smgo::minimize(problem.box, cfg, log.evaluator(), prior ? &*prior : nullptr);
    }
    out.gains = out.history.empty() && out.vrft ? out.vrft->gains : best_gains(out.history);
  }
  out.evaluations = log.records();
  return out;
}

std::vector<double> incumbent_curve(std::span<const EvalRecord> evaluations) {
  std::vector<double> out;
  double best = kInf;
  for (const auto& e : evaluations) {
    if (e.feasible && !e.failed) best = std::min(best, e.f_bo);
    out.push_back(best);
  }
  return out;
}

std::vector<std::size_t> infeasible_curve(std::span<const EvalRecord> evaluations) {
  std::vector<std::size_t> out;
  std::size_t count = 0;
  for (const auto& e : evaluations) {
    if (!e.feasible) ++count;
    out.push_back(count);
  }
  return out;
}

std::uint64_t repeat_seed(std::uint64_t root_seed, std::size_t repeat) {
  return derive_seed(root_seed, kRepeat, static_cast<std::uint64_t>(repeat));
}

namespace {

MethodSummary summarize(Method method, const std::vector<const RunOutcome*>& runs) {
  MethodSummary s;
  s.method = method;
  std::vector<const TuneResult*> ok;
  for (const auto* r : runs) {
    if (r->result)
      ok.push_back(&*r->result);
    else
      ++s.failed_runs;
  }
  s.runs = ok.size();
  if (ok.empty()) return s;

  std::size_t length = 0;
  std::vector<std::vector<double>> inc;
  std::vector<std::vector<std::size_t>> infeas;
  for (const auto* r : ok) {
    inc.push_back(incumbent_curve(r->evaluations));
    infeas.push_back(infeasible_curve(r->evaluations));
    length = std::max(length, inc.back().size());
  }
  for (std::size_t n = 0; n < length; ++n) {
    std::vector<double> v;
    double infeasible = 0.0;
    for (std::size_t i = 0; i < ok.size(); ++i) {
      // Shorter runs hold their last value.
      const std::size_t k = std::min(n, inc[i].size() - 1);
      v.push_back(inc[i].empty() ? kInf : inc[i][k]);
      infeasible += infeas[i].empty() ? 0.0 : static_cast<double>(infeas[i][k]);
    }
    CurvePoint p;
    mean_std(v, p.incumbent_mean, p.incumbent_std);
    p.infeasible_mean = infeasible / static_cast<double>(ok.size());
    s.curve.push_back(p);
  }
  if (!s.curve.empty()) {
    s.final_incumbent_mean = s.curve.back().incumbent_mean;
    s.final_incumbent_std = s.curve.back().incumbent_std;
  }

  std::vector<double> sel, last, evals;
  for (const auto* r : ok) {
    const opt::IterationRecord* final_iter = nullptr;
    for (const auto& h : r->history) {
      if (h.phase == "prior" || h.phase == "vrft") continue;
      sel.push_back(h.selection_seconds);
      final_iter = &h;
    }
    if (final_iter) last.push_back(final_iter->selection_seconds);
    for (const auto& e : r->evaluations) evals.push_back(e.evaluation_seconds);
  }
  mean_std(sel, s.selection_mean, s.selection_std);
  double unused = 0.0;
  mean_std(last, s.selection_last_mean, unused);
  mean_std(evals, s.evaluation_mean, unused);
  return s;
}

}  // namespace

StudyReport compare(const Scenario& scenario, const CompareOptions& options) {
  if (options.methods.empty()) throw ConfigError("compare needs at least one method");
  if (options.repeats == 0) throw ConfigError("compare needs at least one repeat");
  StudyReport report;
  report.options = options;
  for (Method m : options.methods)
    for (std::size_t r = 0; r < options.repeats; ++r) {
      RunOutcome run;
      run.method = m;
      run.repeat = r;
      run.seed = repeat_seed(options.root_seed, r);
      report.runs.push_back(std::move(run));
    }

  auto execute = [&](RunOutcome& run) {
    try {
      run.result = tune(run.method, scenario, run.seed, options.keep_traces);
    } catch (const std::exception& e) {
      run.error = e.what();
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, report.runs.size()));
  if (jobs == 1) {
    for (auto& run : report.runs) execute(run);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < report.runs.size(); i = next++) execute(report.runs[i]);
      });
    for (auto& t : pool) t.join();
  }

  for (Method m : options.methods) {
    std::vector<const RunOutcome*> runs;
    for (const auto& r : report.runs)
      if (r.method == m) runs.push_back(&r);
    std::sort(runs.begin(), runs.end(), [](const RunOutcome* a, const RunOutcome* b) { return a->seed < b->seed; });
    report.summaries.push_back(summarize(m, runs));
  }
  return report;
}

void write_curves_csv(std::ostream& out, const StudyReport& report) {
  const auto old = out.precision(17);
  out << "method,n,incumbent_mean,incumbent_std,infeasible_mean,runs\n";
  for (const auto& s : report.summaries)
    for (std::size_t n = 0; n < s.curve.size(); ++n)
      out << to_string(s.method) << ',' << n + 1 << ',' << s.curve[n].incumbent_mean << ',' << s.curve[n].incumbent_std
          << ',' << s.curve[n].infeasible_mean << ',' << s.runs << '\n';
  out.precision(old);
}

void write_history_csv(std::ostream& out, const StudyReport& report) {
  const auto old = out.precision(17);
  out << "method,repeat,seed,n,phase,kp,ti,td,f,f_bo,g,feasible,failed,noise_seed\n";
  for (const auto& run : report.runs) {
    if (!run.result) continue;
    const auto& r = *run.result;
    for (std::size_t i = 0; i < r.evaluations.size(); ++i) {
      const auto& e = r.evaluations[i];
      out << to_string(run.method) << ',' << run.repeat << ',' << run.seed << ',' << e.n << ','
          << (i < r.history.size() ? r.history[i].phase : std::string()) << ',' << e.theta[0] << ',' << e.theta[1]
          << ',' << e.theta[2] << ',' << e.f << ',' << e.f_bo << ',' << e.g << ',' << (e.feasible ? 1 : 0) << ','
          << (e.failed ? 1 : 0) << ',' << e.noise_seed << '\n';
    }
  }
  out.precision(old);
}

void write_beta_traces_csv(std::ostream& out, std::span<const EvalRecord> evaluations) {
  const auto old = out.precision(17);
  out << "n,failed,beta...\n";
  for (const auto& e : evaluations) {
    out << e.n << ',' << (e.failed ? 1 : 0);
    for (double b : e.beta) out << ',' << b;
    out << '\n';
  }
  out.precision(old);
}

std::vector<BetaTraceRow> read_beta_traces_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "n,failed,beta...") throw ConfigError("not a sideslip trace file");
  std::vector<BetaTraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    BetaTraceRow row;
    std::getline(ss, field, ',');
    row.n = std::stoul(field);
    std::getline(ss, field, ',');
    row.failed = field == "1";
    while (std::getline(ss, field, ',')) row.beta.push_back(std::strtod(field.c_str(), nullptr));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_summary_json(std::ostream& out, const StudyReport& report) {
  using nlohmann::json;
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json j;
  j["schema_version"] = 1;
  j["root_seed"] = report.options.root_seed;
  j["repeats"] = report.options.repeats;
  j["jobs"] = report.options.jobs;
  json methods = json::array();
  for (const auto& s : report.summaries) {
    json m;
    m["method"] = to_string(s.method);
    m["runs"] = s.runs;
    m["failed_runs"] = s.failed_runs;
    m["final_incumbent_mean"] = num(s.final_incumbent_mean);
    m["final_incumbent_std"] = num(s.final_incumbent_std);
    m["final_infeasible_mean"] = s.curve.empty() ? 0.0 : s.curve.back().infeasible_mean;
    m["selection_seconds_mean"] = s.selection_mean;
    m["selection_seconds_std"] = s.selection_std;
    m["selection_seconds_last_mean"] = s.selection_last_mean;
    m["evaluation_seconds_mean"] = s.evaluation_mean;
    json runs = json::array();
    for (const auto& r : report.runs) {
      if (r.method != s.method) continue;
      json jr;
      jr["repeat"] = r.repeat;
      jr["seed"] = r.seed;
      if (r.result) {
        const auto& g = r.result->gains;
        jr["gains"] = {{"kp", g.kp}, {"ti", num(g.ti)}, {"td", g.td}};
        const auto inc = incumbent_curve(r.result->evaluations);
        jr["final_incumbent"] = num(inc.empty() ? kInf : inc.back());
        if (r.result->vrft) {
          const auto& v = r.result->vrft->gains;
          jr["vrft"] = {{"kp", v.kp}, {"ti", num(v.ti)}, {"td", v.td}, {"pi_fallback", r.result->vrft->pi_fallback}};
        }
      } else {
        jr["error"] = r.error;
      }
      runs.push_back(jr);
    }
    m["runs_detail"] = runs;
    methods.push_back(m);
  }
  j["methods"] = methods;
  out << j.dump(2) << '\n';
}

void write_study(const std::string& dir, const StudyReport& report) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [](const fs::path& p) {
    std::ofstream f(p);
    if (!f) throw ConfigError("cannot write " + p.string());
    return f;
  };
  {
    auto f = open(fs::path(dir) / "curves.csv");
    write_curves_csv(f, report);
  }
  {
    auto f = open(fs::path(dir) / "history.csv");
    write_history_csv(f, report);
  }
  {
    auto f = open(fs::path(dir) / "summary.json");
    write_summary_json(f, report);
  }
  if (report.options.keep_traces) {
    fs::create_directories(fs::path(dir) / "traces");
    for (const auto& run : report.runs) {
      if (!run.result) continue;
      std::string name = std::string(to_string(run.method)) + "_r" + std::to_string(run.repeat) + ".csv";
      std::replace(name.begin(), name.end(), '+', '_');
      auto f = open(fs::path(dir) / "traces" / name);
      write_beta_traces_csv(f, run.result->evaluations);
    }
  }
}

}  // namespace tiltune::harness
