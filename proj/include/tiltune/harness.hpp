#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tiltune/cbo.hpp"
#include "tiltune/maneuver.hpp"
#include "tiltune/optim.hpp"
#include "tiltune/smgo.hpp"
#include "tiltune/til.hpp"
#include "tiltune/vrft.hpp"

namespace tiltune::harness {

/// rms(r~ - r) [deg/s], rms(beta~ - beta) [deg], rms of the actuator rate [deg/s].
/// Twin and vehicle columns are the true states.
struct MetricsRow {
  double yaw_rate = 0.0;
  double sideslip = 0.0;
  double steer_rate = 0.0;
};

MetricsRow metrics(const til::TilTrace& trace);

/// Mean of y_eps^2 and of the squared first-difference rate of s_cmd.
struct CostTerms {
  double tracking = 0.0;
  double steer_rate = 0.0;
};

CostTerms cost_terms(const til::TilTrace& trace);
/// f_bo = tracking + gamma_u * steer_rate.
double evaluate_cost(const til::TilTrace& trace, double gamma_u);
/// beta_max - max |beta| over the true vehicle sideslip.
double evaluate_constraint(std::span<const double> beta, double beta_max);
double evaluate_constraint(const til::TilTrace& trace, double beta_max);

enum class ManeuverKind { LaneChange, Chicane };

struct ManeuverSpec {
  ManeuverKind kind = ManeuverKind::LaneChange;
  double speed_kmh = 120.0;
  double amplitude = deg2rad(3.0);
  double ts = 0.01;

  til::Maneuver build() const;
};

/// Same speed and duration as `m` with zero steer request and zero a_x.
til::Maneuver straight_run(const til::Maneuver& m);

/// Search space over (k_p, T_I, T_D).
opt::Box default_box();
til::PidGains gains_from_theta(std::span<const double> theta);
std::vector<double> theta_from_gains(const til::PidGains& gains);
inline const std::vector<std::string>& theta_names() {
  static const std::vector<std::string> names{"kp", "ti", "td"};
  return names;
}

enum class Method { Vrft, Cbo, Smgo, CboVrftPrior, SmgoVrftPrior, SmgoVrftCost };

const char* to_string(Method method);
Method method_from_string(const std::string& name);
std::vector<Method> all_methods();
bool uses_vrft(Method method);

struct VrftSettings {
  vrft::PrbsConfig prbs;
  double mr_hz = 3.5;
  double mw_hz = 6.3;
  vrft::FitConfig fit;
  bool straight_experiment = true;  // excite on a straight run instead of the maneuver
};

struct TuningProblem {
  opt::Box box = default_box();
  double gamma_u = 1e-4;           // [s^2]
  double beta_max = deg2rad(4.5);
  std::size_t budget = 60;
  std::size_t repeats = 10;
  ManeuverSpec maneuver;
  VrftSettings vrft;
  smgo::SmgoConfig smgo;
  cbo::CboConfig cbo;

  void validate() const;
};

/// Plants and maneuver shared by every run of a study. Read-only after
/// construction, so one instance can serve concurrent runs.
class Scenario {
 public:
  Scenario(til::TilSetup setup, refgen::StaticYawMap map, const TuningProblem& problem);

  const til::TilSystem& system() const { return system_; }
  const til::TilSystem& experiment_system() const { return experiment_; }
  const vrft::FilterSpec& filters() const { return filters_; }
  const TuningProblem& problem() const { return problem_; }

 private:
  TuningProblem problem_;
  til::TilSystem system_;
  til::TilSystem experiment_;
  vrft::FilterSpec filters_;
};

enum class CostKind { Bo, VrftLike };

/// What the harness keeps from one closed-loop experiment.
struct EvalRecord {
  std::size_t n = 0;            // 1-based evaluation index
  std::vector<double> theta;
  std::uint64_t noise_seed = 0;
  double f = 0.0;               // the cost handed to the optimizer
  double f_bo = 0.0;
  double g = 0.0;
  bool feasible = false;
  bool failed = false;
  double evaluation_seconds = 0.0;
  std::vector<double> beta;     // true sideslip trace, kept on request
};

/// Closure state behind an optimizer evaluator. Evaluation n draws its
/// sensor noise from derive_seed(seed, n).
class EvaluationLog {
 public:
  EvaluationLog(const Scenario& scenario, CostKind cost, std::uint64_t seed, bool keep_traces = false);

  opt::Evaluation evaluate(std::span<const double> theta);
  opt::Evaluator evaluator();
  const std::vector<EvalRecord>& records() const { return records_; }

 private:
  const Scenario* scenario_;
  CostKind cost_;
  std::uint64_t seed_;
  bool keep_traces_;
  std::vector<EvalRecord> records_;
};

std::uint64_t evaluation_seed(std::uint64_t seed, std::size_t n);

struct VrftDesign {
  til::PidGains gains;
  vrft::FitResult fit;
  bool pi_fallback = false;  // the PID fit failed and a PI fit was used
  vrft::ExperimentData data;
};

/// One open-loop experiment and the least-squares design. A PID fit that maps
/// to negative T_I or T_D is retried with the PI structure; a design outside
/// the search box is a DesignError.
VrftDesign design_vrft(const Scenario& scenario, std::uint64_t seed);

struct TuneResult {
  Method method = Method::Smgo;
  std::uint64_t seed = 0;
  til::PidGains gains;                    // incumbent (or the VRFT design)
  std::optional<VrftDesign> vrft;
  std::vector<opt::IterationRecord> history;
  std::vector<EvalRecord> evaluations;    // aligned with history
};

/// Runs one method. `seed` drives the VRFT experiment, the sensor noise of
/// every evaluation and the optimizer.
TuneResult tune(Method method, const Scenario& scenario, std::uint64_t seed, bool keep_traces = false);

/// Incumbent f_bo per evaluation (inf before the first feasible point).
std::vector<double> incumbent_curve(std::span<const EvalRecord> evaluations);
/// Cumulative infeasible count per evaluation.
std::vector<std::size_t> infeasible_curve(std::span<const EvalRecord> evaluations);

struct CompareOptions {
  std::vector<Method> methods;
  std::size_t repeats = 10;
  std::uint64_t root_seed = 1;
  std::size_t jobs = 1;
  bool keep_traces = false;
};

struct RunOutcome {
  Method method = Method::Smgo;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  std::optional<TuneResult> result;
  std::string error;  // set when the run failed
};

struct CurvePoint {
  double incumbent_mean = 0.0;
  double incumbent_std = 0.0;
  double infeasible_mean = 0.0;
};

struct MethodSummary {
  Method method = Method::Smgo;
  std::size_t runs = 0;
  std::size_t failed_runs = 0;
  std::vector<CurvePoint> curve;
  double final_incumbent_mean = 0.0;
  double final_incumbent_std = 0.0;
  double selection_mean = 0.0;       // over all optimizer iterations [s]
  double selection_std = 0.0;
  double selection_last_mean = 0.0;  // the final selection of each run [s]
  double evaluation_mean = 0.0;      // closed-loop simulation [s]
};

struct StudyReport {
  CompareOptions options;
  std::vector<RunOutcome> runs;  // ordered by method, then repeat
  std::vector<MethodSummary> summaries;
};

std::uint64_t repeat_seed(std::uint64_t root_seed, std::size_t repeat);

StudyReport compare(const Scenario& scenario, const CompareOptions& options);

/// curves.csv: method,n,incumbent_mean,incumbent_std,infeasible_mean,runs
void write_curves_csv(std::ostream& out, const StudyReport& report);
/// history.csv: one row per evaluation of every successful run.
void write_history_csv(std::ostream& out, const StudyReport& report);
/// Sideslip traces of one run: n,beta_0,beta_1,...
void write_beta_traces_csv(std::ostream& out, std::span<const EvalRecord> evaluations);
struct BetaTraceRow {
  std::size_t n = 0;
  bool failed = false;
  std::vector<double> beta;
};
std::vector<BetaTraceRow> read_beta_traces_csv(std::istream& in);
void write_summary_json(std::ostream& out, const StudyReport& report);

/// Writes curves.csv, history.csv, summary.json and, with traces kept,
/// traces/<method>_r<repeat>.csv under `dir`.
void write_study(const std::string& dir, const StudyReport& report);

}  // namespace tiltune::harness
