#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tiltune/optim.hpp"

namespace tiltune::smgo {

struct SmgoConfig {
  double delta = 0.5;             // 0 cautious (lower bound of g), 1 risky (mean of g)
  double beta = 0.1;              // exploration weight on the uncertainty
  double alpha = 0.005;           // required improvement, in units of gamma_f
  double gamma_inflation = 1.1;
  std::size_t mesh_points = 1000; // persistent low-discrepancy candidates
  std::size_t budget = 60;
  std::uint64_t seed = 0;
  double failure_penalty = 10.0;  // failed runs are logged at this multiple of the worst cost
  std::optional<double> gamma_f;  // known Lipschitz constants (unit-cube metric) skip estimation
  std::optional<double> gamma_g;

  void validate() const;
};

/// Points of equal dimension stored row after row.
struct PointSet {
  std::size_t dim = 0;
  std::vector<double> data;

  std::size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> operator[](std::size_t i) const { return {data.data() + i * dim, dim}; }
  void push(std::span<const double> p);
};

double distance(std::span<const double> a, std::span<const double> b);

struct LipschitzEstimate {
  double slope = 0.0;    // largest observed |dy| / |dx|
  double gamma = 0.0;    // slope times the inflation factor
  double epsilon = 0.0;  // half the largest spread between coincident samples
};

/// Estimate over the samples whose `use` flag is set. Needs two usable
/// samples at distinct locations.
LipschitzEstimate estimate_lipschitz(const PointSet& x, std::span<const double> y, std::span<const char> use,
                                     double inflation);

struct ConeBounds {
  double lower = 0.0;
  double upper = 0.0;

  double mean() const { return 0.5 * (upper + lower); }
  double uncertainty() const { return upper - lower; }
};

ConeBounds cone_bounds(std::span<const double> theta, const PointSet& x, std::span<const double> y,
                       std::span<const char> use, double gamma, double epsilon);

/// True when the candidate promises an improvement of at least alpha gamma_f.
bool exploitation_test(double lower, double incumbent, double alpha, double gamma_f);

class Smgo {
 public:
  Smgo(opt::Box box, SmgoConfig config);

  /// Appends an evaluated point (problem coordinates).
  const opt::IterationRecord& add(std::span<const double> theta, const opt::Evaluation& ev, const std::string& phase,
                                  double selection_seconds = 0.0);

  struct Choice {
    std::vector<double> unit;
    std::string phase;  // initial, exploit, explore, feasibility or fallback
  };
  /// Next point to evaluate. Without samples, a seeded uniform point.
  Choice select();

  /// select, evaluate, add. Records the wall time spent in select.
  const opt::IterationRecord& iterate(const opt::Evaluator& evaluator);

  ConeBounds f_bounds(std::span<const double> unit) const;
  ConeBounds g_bounds(std::span<const double> unit) const;
  const LipschitzEstimate& f_estimate() const { return f_est_; }
  const LipschitzEstimate& g_estimate() const { return g_est_; }

  double incumbent() const { return incumbent_; }
  std::optional<std::vector<double>> incumbent_theta() const;
  const std::vector<opt::IterationRecord>& history() const { return history_; }
  std::size_t active_candidates() const;
  const PointSet& candidates() const { return candidates_; }
  bool candidate_active(std::size_t c) const { return active_[c] != 0; }
  const opt::Box& box() const { return box_; }
  const SmgoConfig& config() const { return cfg_; }

  /// Text snapshot of the evaluated samples; restore replays them, which
  /// rebuilds the candidate set exactly.
  void save(std::ostream& out) const;
  static Smgo restore(std::istream& in, opt::Box box, SmgoConfig config);

 private:
  void update_estimates();
  void refresh_cache();
  void add_candidate(std::span<const double> unit);
  double constraint_score(std::size_t c) const;

  opt::Box box_;
  SmgoConfig cfg_;
  PointSet samples_;            // unit coordinates
  std::vector<double> f_;       // cost used by the cones (failed: penalty)
  std::vector<double> g_;
  std::vector<char> f_use_;     // in the f cones and gamma_f
  std::vector<char> g_fit_;     // in gamma_g
  std::vector<char> g_use_;     // in the g cones
  LipschitzEstimate f_est_, g_est_;
  double incumbent_ = std::numeric_limits<double>::infinity();
  std::size_t incumbent_index_ = 0;
  double worst_cost_ = -std::numeric_limits<double>::infinity();
  std::vector<opt::Evaluation> raw_;
  std::vector<opt::IterationRecord> history_;

  PointSet candidates_;
  std::vector<char> active_;
  // cone bounds per candidate, valid for samples [0, cached_samples_) under cached estimates
  std::vector<ConeBounds> cf_, cg_;
  std::size_t cached_samples_ = 0;
  LipschitzEstimate cached_f_, cached_g_;
  bool cache_valid_ = false;
};

/// Runs `config.budget` iterations, optionally after evaluating a prior point.
std::vector<opt::IterationRecord> minimize(const opt::Box& box, const SmgoConfig& config,
                                           const opt::Evaluator& evaluator,
                                           const std::vector<double>* prior = nullptr);

}  // namespace tiltune::smgo
