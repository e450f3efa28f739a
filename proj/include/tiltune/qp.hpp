#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace tiltune::mpc {

/// min 0.5 z'Hz + f'z  subject to  G z <= b.
struct QpProblem {
  Eigen::MatrixXd h;
  Eigen::VectorXd f;
  Eigen::MatrixXd g;
  Eigen::VectorXd b;

  int variables() const { return static_cast<int>(f.size()); }
  int constraints() const { return static_cast<int>(b.size()); }
  double objective(const Eigen::VectorXd& z) const { return 0.5 * z.dot(h * z) + f.dot(z); }
  /// max(0, max_i (G z - b)_i)
  double max_violation(const Eigen::VectorXd& z) const;
};

enum class QpStatus { Optimal, Infeasible, MaxIterations, Degenerate };

const char* to_string(QpStatus status);

struct KktResiduals {
  double stationarity = 0.0;     // |Hz + f + G'lambda|_inf
  double primal = 0.0;           // max(0, Gz - b)
  double dual = 0.0;             // max(0, -lambda)
  double complementarity = 0.0;  // max |lambda_i (G_i z - b_i)|

  double max() const;
};

KktResiduals kkt_residuals(const QpProblem& qp, const Eigen::VectorXd& z, const Eigen::VectorXd& lambda);

struct QpSolution {
  QpStatus status = QpStatus::Degenerate;
  Eigen::VectorXd z;
  Eigen::VectorXd lambda;   // one multiplier per constraint, zero when inactive
  std::vector<int> active;  // final working set, ascending
  double objective = 0.0;
  int iterations = 0;       // working-set changes, phase one included
  KktResiduals residuals;
};

struct QpOptions {
  int max_iterations = 500;
  double feasibility_tolerance = 1e-9;
  double multiplier_tolerance = 1e-12;
};

/// Optional starting information. `active` is tried first (equality-constrained
/// solve on that set); if the result is infeasible the solver falls back to
/// `feasible_point`, and to a phase-one problem if that is missing or violated.
struct QpWarmStart {
  std::vector<int> active;
  std::optional<Eigen::VectorXd> feasible_point;
};

/// Dense primal active-set method, range-space steps with a Cholesky factor
/// of H. H must be symmetric positive definite; otherwise status Degenerate.
QpSolution solve_qp(const QpProblem& qp, const QpOptions& options = {}, const QpWarmStart* warm = nullptr);

}  // namespace tiltune::mpc
