#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tiltune/common.hpp"

namespace tiltune::opt {

/// Axis-aligned search box. Optimizers work on the unit cube; dimensions
/// flagged `log_scale` are mapped logarithmically.
struct Box {
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<bool> log_scale;

  std::size_t dim() const { return lower.size(); }
  void validate() const;
  std::vector<double> to_unit(std::span<const double> theta) const;
  std::vector<double> from_unit(std::span<const double> unit) const;
  bool contains(std::span<const double> theta, double tol = 1e-12) const;
};

/// One black-box experiment: cost f and constraint g (feasible iff g >= 0).
/// `failed` marks runs that did not complete; f is then meaningless.
struct Evaluation {
  double f = 0.0;
  double g = 0.0;
  bool failed = false;
};

/// Evaluates a point given in problem coordinates.
using Evaluator = std::function<Evaluation(std::span<const double> theta)>;

struct IterationRecord {
  std::size_t n = 0;              // 1-based sample index
  std::vector<double> theta;      // problem coordinates
  double f = 0.0;
  double g = 0.0;
  bool feasible = false;
  bool failed = false;
  double incumbent = std::numeric_limits<double>::infinity();
  double selection_seconds = 0.0;
  std::string phase;              // prior, initial, exploit, explore, fallback, acquisition
};

/// Best feasible f among the records (inf when none).
double best_feasible(std::span<const IterationRecord> history);
std::size_t infeasible_count(std::span<const IterationRecord> history);

/// Per-iteration CSV. Timing is optional so that seeded runs can be compared
/// byte for byte.
void write_history_csv(std::ostream& out, std::span<const IterationRecord> history,
                       const std::vector<std::string>& theta_names, bool with_timing);

/// Scrambled Halton points in [0,1]^dim. The seed picks a Cranley-Patterson
/// shift; seed 0 gives the plain sequence.
std::vector<std::vector<double>> halton(std::size_t count, std::size_t dim, std::uint64_t seed, std::size_t skip = 1);

}  // namespace tiltune::opt
