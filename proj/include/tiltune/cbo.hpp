#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tiltune/optim.hpp"

namespace tiltune::cbo {

/// Squared-exponential ARD hyperparameters, all in log space. Targets are
/// standardized before fitting, so the variances are relative to var(y).
struct GpHyper {
  Eigen::VectorXd log_lengthscale;
  double log_signal_var = 0.0;
  double log_noise_var = std::log(1e-4);

  static GpHyper defaults(std::size_t dim);
};

struct GpFitOptions {
  std::size_t restarts = 3;        // random starts besides the default one
  std::size_t iterations = 60;     // projected gradient steps per start
  double min_lengthscale = 0.05;   // unit-cube lengths
  double max_lengthscale = 10.0;
  double min_signal_var = 0.05;
  double max_signal_var = 20.0;
  double min_noise_std = 1e-6;     // relative to the target std
  double max_noise_std = 1e-1;
};

class GpModel {
 public:
  /// Maximizes the log marginal likelihood from several starts. Needs at
  /// least two points; one point falls back to the default hyperparameters.
  static GpModel fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GpFitOptions& options,
                     std::mt19937_64& rng);
  /// Fixed hyperparameters; rows of x are points.
  GpModel(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GpHyper& hyper);

  /// Posterior mean and standard deviation in target units.
  std::pair<double, double> predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  double log_marginal_likelihood() const { return lml_; }
  /// d LML / d (log lengthscales, log signal var, log noise var)
  Eigen::VectorXd lml_gradient() const;
  const GpHyper& hyper() const { return hyper_; }
  double jitter() const { return jitter_; }
  std::size_t size() const { return static_cast<std::size_t>(x_.rows()); }

 private:
  double kernel(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) const;

  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;   // standardized
  double mean_ = 0.0;
  double scale_ = 1.0;
  GpHyper hyper_;
  Eigen::VectorXd inv_len2_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
  double jitter_ = 0.0;
  double lml_ = 0.0;
};

double normal_pdf(double z);
double normal_cdf(double z);

/// Closed-form expected improvement for minimization.
double expected_improvement(double mu, double sigma, double f_best);
/// Pr[g >= 0] under N(mu, sigma^2).
double feasibility_probability(double mu, double sigma);

struct CboConfig {
  double exploration_ratio = 0.5;  // chance of random acquisition starts
  GpFitOptions gp;
  std::size_t acquisition_starts = 8;
  std::size_t acquisition_screen = 256;  // random points scored before the local search
  std::size_t budget = 60;
  std::uint64_t seed = 0;
  double failure_penalty = 10.0;

  void validate() const;
};

class Cbo {
 public:
  Cbo(opt::Box box, CboConfig config);

  const opt::IterationRecord& add(std::span<const double> theta, const opt::Evaluation& ev, const std::string& phase,
                                  double selection_seconds = 0.0);

  struct Choice {
    std::vector<double> unit;
    std::string phase;  // initial, exploit (incumbent-anchored starts) or explore (random starts)
    double acquisition = 0.0;
  };
  /// Refits both surrogates and maximizes EI times the feasibility probability.
  Choice select();
  const opt::IterationRecord& iterate(const opt::Evaluator& evaluator);

  /// Acquisition value at a unit-cube point under the current fits.
  double acquisition(const Eigen::Ref<const Eigen::VectorXd>& unit) const;
  const GpModel* cost_model() const { return f_gp_ ? &*f_gp_ : nullptr; }
  const GpModel* constraint_model() const { return g_gp_ ? &*g_gp_ : nullptr; }
  double incumbent() const { return incumbent_; }
  const std::vector<opt::IterationRecord>& history() const { return history_; }

 private:
  void refit();
  double local_search(Eigen::VectorXd& x) const;

  opt::Box box_;
  CboConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<Eigen::VectorXd> x_;  // unit coordinates
  std::vector<double> f_, g_;
  std::vector<char> failed_;
  double incumbent_ = std::numeric_limits<double>::infinity();
  Eigen::VectorXd incumbent_x_;
  double worst_cost_ = -std::numeric_limits<double>::infinity();
  std::optional<GpModel> f_gp_, g_gp_;
  std::vector<opt::IterationRecord> history_;
};

std::vector<opt::IterationRecord> minimize(const opt::Box& box, const CboConfig& config,
                                           const opt::Evaluator& evaluator,
                                           const std::vector<double>* prior = nullptr);

}  // namespace tiltune::cbo
