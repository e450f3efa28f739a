#include "tiltune/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tiltune/common.hpp"

namespace tiltune::mpc {

double QpProblem::max_violation(const Eigen::VectorXd& z) const {
  if (b.size() == 0) return 0.0;
  return std::max(0.0, (g * z - b).maxCoeff());
}

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::Infeasible: return "infeasible";
    case QpStatus::MaxIterations: return "max_iterations";
    case QpStatus::Degenerate: return "degenerate";
  }
  return "unknown";
}

double KktResiduals::max() const { return std::max({stationarity, primal, dual, complementarity}); }

KktResiduals kkt_residuals(const QpProblem& qp, const Eigen::VectorXd& z, const Eigen::VectorXd& lambda) {
  KktResiduals r;
  Eigen::VectorXd grad = qp.h * z + qp.f;
  if (qp.b.size() > 0) {
    grad += qp.g.transpose() * lambda;
    const Eigen::VectorXd slack = qp.g * z - qp.b;
    r.primal = std::max(0.0, slack.maxCoeff());
    r.dual = std::max(0.0, -lambda.minCoeff());
    r.complementarity = lambda.cwiseProduct(slack).cwiseAbs().maxCoeff();
  }
  r.stationarity = grad.lpNorm<Eigen::Infinity>();
  return r;
}

namespace {

class ActiveSetCore {
 public:
  explicit ActiveSetCore(const QpProblem& qp) : qp_(qp), llt_(qp.h) {
    ok_ = llt_.info() == Eigen::Success && qp.h.isApprox(qp.h.transpose(), 1e-12);
    if (!ok_) return;
    // A Cholesky factorization can succeed on a numerically semidefinite
    // matrix; reject those by the pivot ratio.
    const Eigen::VectorXd diag = llt_.matrixL().toDenseMatrix().diagonal();
    if (diag.size() > 0 && diag.minCoeff() <= 1e-10 * diag.maxCoeff()) {
      ok_ = false;
      return;
    }
    if (qp.constraints() > 0) {
      hinv_gt_ = llt_.solve(qp.g.transpose());
      schur_ = qp.g * hinv_gt_;
    }
  }

  bool ok() const { return ok_; }

  Eigen::VectorXd unconstrained() const { return llt_.solve(-qp_.f); }

  /// Greedy selection of rows whose gradients are linearly independent.
  std::vector<int> independent_subset(const std::vector<int>& candidates) const {
    std::vector<int> w;
    for (int i : candidates) {
      if (i < 0 || i >= qp_.constraints() || std::find(w.begin(), w.end(), i) != w.end()) continue;
      const double sii = schur_(i, i);
      if (!(sii > 0.0)) continue;
      double pivot = sii;
      if (!w.empty()) {
        const Eigen::MatrixXd sww = sub(w);
        Eigen::VectorXd swi(static_cast<Eigen::Index>(w.size()));
        for (std::size_t k = 0; k < w.size(); ++k) swi(static_cast<Eigen::Index>(k)) = schur_(w[k], i);
        pivot = sii - swi.dot(sww.ldlt().solve(swi));
      }
      if (pivot > 1e-10 * sii) w.push_back(i);
    }
    return w;
  }

  /// Minimizer with the rows in `w` as equalities.
  bool equality_solve(const std::vector<int>& w, Eigen::VectorXd& z, Eigen::VectorXd& lambda) const {
    const Eigen::VectorXd hf = llt_.solve(qp_.f);
    if (w.empty()) {
      z = -hf;
      lambda.resize(0);
      return true;
    }
    const auto k = static_cast<Eigen::Index>(w.size());
    Eigen::VectorXd rhs(k);
    for (Eigen::Index j = 0; j < k; ++j) rhs(j) = -(qp_.b(w[static_cast<std::size_t>(j)]) + qp_.g.row(w[static_cast<std::size_t>(j)]).dot(hf));
    const auto ldlt = sub(w).ldlt();
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
    lambda = ldlt.solve(rhs);
    z = -hf;
    for (Eigen::Index j = 0; j < k; ++j) z -= hinv_gt_.col(w[static_cast<std::size_t>(j)]) * lambda(j);
    return z.allFinite();
  }

  /// Primal active-set iterations from a feasible point.
  QpStatus run(Eigen::VectorXd& z, std::vector<int>& w, Eigen::VectorXd& lambda_w, int& iterations,
               const QpOptions& options) const {
    const int m = qp_.constraints();
    std::vector<char> in_w(static_cast<std::size_t>(m), 0);
    for (int i : w) in_w[static_cast<std::size_t>(i)] = 1;
    bool at_subspace_min = false;
    for (;;) {
      if (iterations >= options.max_iterations) return QpStatus::MaxIterations;
      const Eigen::VectorXd grad = qp_.h * z + qp_.f;
      const Eigen::VectorXd hg = llt_.solve(grad);
      const auto k = static_cast<Eigen::Index>(w.size());
      Eigen::VectorXd p = -hg;
      lambda_w.resize(k);
      if (k > 0) {
        Eigen::VectorXd rhs(k);
        for (Eigen::Index j = 0; j < k; ++j) rhs(j) = -hinv_gt_.col(w[static_cast<std::size_t>(j)]).dot(grad);
        const auto ldlt = sub(w).ldlt();
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return QpStatus::Degenerate;
        lambda_w = ldlt.solve(rhs);
        if (!lambda_w.allFinite()) return QpStatus::Degenerate;
        for (Eigen::Index j = 0; j < k; ++j) p -= hinv_gt_.col(w[static_cast<std::size_t>(j)]) * lambda_w(j);
      }
      const double scale = 1.0 + z.lpNorm<Eigen::Infinity>() + hg.lpNorm<Eigen::Infinity>();
      if (at_subspace_min || p.lpNorm<Eigen::Infinity>() <= 1e-13 * scale) {
        at_subspace_min = false;
        if (k == 0) return QpStatus::Optimal;
        Eigen::Index drop = 0;
        for (Eigen::Index j = 1; j < k; ++j) {
          const double lj = lambda_w(j), ld = lambda_w(drop);
          if (lj < ld || (lj == ld && w[static_cast<std::size_t>(j)] < w[static_cast<std::size_t>(drop)])) drop = j;
        }
        if (lambda_w(drop) >= -options.multiplier_tolerance * (1.0 + lambda_w.cwiseAbs().maxCoeff()))
          return QpStatus::Optimal;
        in_w[static_cast<std::size_t>(w[static_cast<std::size_t>(drop)])] = 0;
        w.erase(w.begin() + drop);
        ++iterations;
        continue;
      }

      double alpha = 1.0;
      int blocking = -1;
      const double pnorm = p.norm();
      for (int i = 0; i < m; ++i) {
        if (in_w[static_cast<std::size_t>(i)]) continue;
        const double gp = qp_.g.row(i).dot(p);
        if (gp <= 1e-14 * qp_.g.row(i).norm() * pnorm) continue;
        const double slack = std::max(0.0, qp_.b(i) - qp_.g.row(i).dot(z));
        const double step = slack / gp;
        if (step < alpha) {
          alpha = step;
          blocking = i;
        }
      }
      z += alpha * p;
      ++iterations;
      if (blocking >= 0) {
        w.push_back(blocking);
        in_w[static_cast<std::size_t>(blocking)] = 1;
      } else {
        at_subspace_min = true;
      }
    }
  }

 private:
  Eigen::MatrixXd sub(const std::vector<int>& w) const {
    const auto k = static_cast<Eigen::Index>(w.size());
    Eigen::MatrixXd out(k, k);
    for (Eigen::Index a = 0; a < k; ++a)
      for (Eigen::Index c = 0; c < k; ++c) out(a, c) = schur_(w[static_cast<std::size_t>(a)], w[static_cast<std::size_t>(c)]);
    return out;
  }

  const QpProblem& qp_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::MatrixXd hinv_gt_;
  Eigen::MatrixXd schur_;
  bool ok_ = false;
};

// Finds a feasible point by minimizing the largest normalized violation t,
// regularized so the auxiliary problem is strictly convex.
bool phase_one(const QpProblem& qp, const Eigen::VectorXd& z0, const QpOptions& options, Eigen::VectorXd& z,
               int& iterations) {
  const int n = qp.variables();
  const int m = qp.constraints();
  constexpr double eps = 1e-6;
  QpProblem aux;
  aux.h = eps * Eigen::MatrixXd::Identity(n + 1, n + 1);
  aux.f = Eigen::VectorXd::Zero(n + 1);
  aux.f.head(n) = -eps * z0;
  aux.f(n) = 1.0;
  std::vector<int> rows;
  for (int i = 0; i < m; ++i) {
    const double norm = qp.g.row(i).norm();
    if (norm == 0.0) {
      if (qp.b(i) < 0.0) return false;
      continue;
    }
    rows.push_back(i);
  }
  const auto ma = static_cast<Eigen::Index>(rows.size());
  aux.g = Eigen::MatrixXd::Zero(ma + 1, n + 1);
  aux.b = Eigen::VectorXd::Zero(ma + 1);
  for (Eigen::Index r = 0; r < ma; ++r) {
    const int i = rows[static_cast<std::size_t>(r)];
    const double norm = qp.g.row(i).norm();
    aux.g.row(r).head(n) = qp.g.row(i) / norm;
    aux.g(r, n) = -1.0;
    aux.b(r) = qp.b(i) / norm;
  }
  aux.g(ma, n) = -1.0;
  aux.b(ma) = 1.0;

  Eigen::VectorXd y(n + 1);
  y.head(n) = z0;
  y(n) = std::max(-1.0, (aux.g.topRows(ma).leftCols(n) * z0 - aux.b.head(ma)).maxCoeff());
  ActiveSetCore core(aux);
  std::vector<int> w;
  Eigen::VectorXd lambda_w;
  QpOptions aux_options = options;
  aux_options.max_iterations = options.max_iterations + 4 * (m + n);
  const auto status = core.run(y, w, lambda_w, iterations, aux_options);
  if (status != QpStatus::Optimal && status != QpStatus::MaxIterations) return false;
  z = y.head(n);
  return qp.max_violation(z) <= options.feasibility_tolerance;
}

}  // namespace

QpSolution solve_qp(const QpProblem& qp, const QpOptions& options, const QpWarmStart* warm) {
  const int n = qp.variables();
  const int m = qp.constraints();
  if (qp.h.rows() != n || qp.h.cols() != n || qp.g.rows() != m || (m > 0 && qp.g.cols() != n)) {
    std::ostringstream msg;
    msg << "qp dimensions: H " << qp.h.rows() << 'x' << qp.h.cols() << ", f " << n << ", G " << qp.g.rows() << 'x'
        << qp.g.cols() << ", b " << m;
    throw DimensionError(msg.str());
  }

  QpSolution sol;
  sol.lambda = Eigen::VectorXd::Zero(m);
  ActiveSetCore core(qp);
  if (!core.ok()) {
    sol.status = QpStatus::Degenerate;
    sol.z = Eigen::VectorXd::Zero(n);
    return sol;
  }

  Eigen::VectorXd z;
  std::vector<int> w;
  bool started = false;
  if (warm && !warm->active.empty() && m > 0) {
    w = core.independent_subset(warm->active);
    Eigen::VectorXd lambda;
    if (core.equality_solve(w, z, lambda) && qp.max_violation(z) <= options.feasibility_tolerance)
      started = true;
    else
      w.clear();
  }
  if (!started && warm && warm->feasible_point && warm->feasible_point->size() == n &&
      qp.max_violation(*warm->feasible_point) <= options.feasibility_tolerance) {
    z = *warm->feasible_point;
    started = true;
  }
  if (!started) {
    const Eigen::VectorXd free = core.unconstrained();
    if (qp.max_violation(free) <= options.feasibility_tolerance) {
      z = free;
    } else {
      const Eigen::VectorXd z0 =
          (warm && warm->feasible_point && warm->feasible_point->size() == n) ? *warm->feasible_point : free;
      if (!phase_one(qp, z0, options, z, sol.iterations)) {
        sol.status = QpStatus::Infeasible;
        sol.z = z.size() == n ? z : Eigen::VectorXd(Eigen::VectorXd::Zero(n));
        sol.objective = qp.objective(sol.z);
        return sol;
      }
    }
  }

  Eigen::VectorXd lambda_w;
  sol.status = core.run(z, w, lambda_w, sol.iterations, options);

  // Polish: solve the equality problem on the final working set directly.
  if (sol.status == QpStatus::Optimal && !w.empty()) {
    Eigen::VectorXd zp, lp;
    if (core.equality_solve(w, zp, lp) && qp.max_violation(zp) <= std::max(options.feasibility_tolerance, qp.max_violation(z))) {
      z = zp;
      lambda_w = lp;
    }
  }
  for (std::size_t j = 0; j < w.size(); ++j)
    if (static_cast<Eigen::Index>(j) < lambda_w.size()) sol.lambda(w[j]) = lambda_w(static_cast<Eigen::Index>(j));
  // Multipliers within round-off of zero are reported as zero.
  for (Eigen::Index i = 0; i < sol.lambda.size(); ++i)
    if (sol.lambda(i) < 0.0 && sol.lambda(i) >= -options.multiplier_tolerance * (1.0 + sol.lambda.cwiseAbs().maxCoeff()))
      sol.lambda(i) = 0.0;
  std::sort(w.begin(), w.end());
  sol.active = std::move(w);
  sol.z = std::move(z);
  sol.objective = qp.objective(sol.z);
  sol.residuals = kkt_residuals(qp, sol.z, sol.lambda);
  return sol;
}

}  // namespace tiltune::mpc
