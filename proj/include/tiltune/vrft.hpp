#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "tiltune/signal.hpp"
#include "tiltune/til.hpp"

namespace tiltune::vrft {

/// Reference model and weighting filter, both discrete.
struct FilterSpec {
  signal::TransferFunction mr;
  signal::TransferFunction mw;

  /// Tustin (prewarped) first-order low pass for M_r and two-pole low pass
  /// for M_w.
  static FilterSpec from_prototypes(double mr_cutoff_hz, double mw_cutoff_hz, double ts);
  static FilterSpec defaults(double ts = 0.01) { return from_prototypes(3.5, 6.3, ts); }
  /// Stable poles and unit DC gain of M_r.
  void validate() const;
};

struct ExperimentData {
  double ts = 0.01;
  std::vector<double> s_delta;  // injected excitation [rad]
  std::vector<double> y_eps;    // eps~ - eps [rad/s]

  std::size_t size() const { return s_delta.size(); }
  void validate() const;
};

void write_experiment_csv(std::ostream& out, const ExperimentData& data);
ExperimentData read_experiment_csv(std::istream& in);

/// +/-amplitude chips from the order-9 maximal-length register x^9 + x^5 + 1,
/// each held for `period` samples. A set register bit maps to -amplitude.
/// The nonzero start state is drawn from `rng`.
std::vector<double> prbs(std::size_t n, double amplitude, std::size_t period, std::mt19937_64& rng);

struct PrbsConfig {
  double amplitude = deg2rad(0.5);
  std::size_t period = 2;
};

/// Open-loop TiL experiment: twin command plus the excitation on the vehicle.
ExperimentData collect_open_loop(const til::TilSystem& system, std::span<const double> excitation,
                                 std::uint64_t noise_seed);

enum class Structure { Pid, Pi };

struct FitConfig {
  Structure structure = Structure::Pid;
  double derivative_tau = 0.01;  // provisional derivative filter time constant [s]
  double trim_seconds = 1.0;
};

/// The discrete filters that turn the recorded data into the least-squares
/// problem. One regressor per controller term, all fed with y = -y_eps.
struct Regression {
  std::vector<signal::TransferFunction> regressors;  // P, I[, D]
  signal::TransferFunction target;                   // applied to s_delta
  int delay = 0;                                     // samples added to make (M_r^-1 - 1) causal
};

Regression build_regression(const FilterSpec& spec, const FitConfig& config, double ts);

struct FitResult {
  til::PidGains gains;
  std::vector<double> linear;  // [k_p, k_i, k_d] or [k_p, k_i]
  double cost = 0.0;           // least-squares residual mean square
  std::size_t samples = 0;     // rows used after trimming
};

/// Least-squares fit of the linear PID parametrization. Throws
/// SingularityError on a rank-deficient regressor matrix and DesignError when
/// the result maps to k_p <= 0, T_I < 0 or T_D < 0.
FitResult fit_pid(const ExperimentData& data, const FilterSpec& spec, const FitConfig& config = {});

/// Sample cost at the linear parameters of `gains`; fit_pid minimizes it.
double vrft_cost(const til::PidGains& gains, const ExperimentData& data, const FilterSpec& spec,
                 const FitConfig& config = {});
double vrft_cost_linear(std::span<const double> linear, const ExperimentData& data, const FilterSpec& spec,
                        const FitConfig& config = {});

/// Mean square of M_w M_r y_eps over a closed-loop trace.
double bo_vrft_cost(std::span<const double> y_eps, const FilterSpec& spec);

/// Divides numerator and denominator by (z - root) while both vanish there.
signal::TransferFunction cancel_common_root(signal::TransferFunction tf, double root, double tol = 1e-9);

}  // namespace tiltune::vrft
