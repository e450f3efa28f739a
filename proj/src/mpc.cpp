#include "tiltune/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace tiltune::mpc {

void MpcConfig::validate() const {
  if (horizon < 1) throw ConfigError("mpc horizon must be at least 1");
  if (w_beta < 0.0 || w_r < 0.0 || w_s < 0.0 || w_u < 0.0) throw ConfigError("mpc weights must be >= 0");
  if (!(w_rho > 0.0)) throw ConfigError("mpc slack weight must be > 0");
  if (!(w_u > 0.0)) throw ConfigError("mpc input weight must be > 0 for a strictly convex QP");
  if (!(alpha_max > 0.0) || !(rate_limit > 0.0) || !(ts > 0.0) || !(actuator_bandwidth > 0.0))
    throw ConfigError("mpc limits, sample time and actuator bandwidth must be > 0");
}

Eigen::VectorXd CondensedQp::feasible_point(double steer_now) const {
  const int n = horizon;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(n + 1);
  z.head(n).setConstant(steer_now);
  // Largest slip violation under that input.
  const auto& g = qp.g;
  double rho = 0.0;
  for (int k = 0; k < 2 * n; ++k) {
    const Eigen::Index row = 2 * n + k;
    rho = std::max(rho, g.row(row).head(n).dot(z.head(n)) - qp.b(row));
  }
  z(n) = rho > 0.0 ? rho * (1.0 + 1e-12) + 1e-15 : 0.0;
  return z;
}

CondensedQp condense(const dynamics::LtiModel& model, const Eigen::Vector3d& x0, std::span<const double> r_ref,
                     double lf, const MpcConfig& config) {
  config.validate();
  const int n = config.horizon;
  if (static_cast<int>(r_ref.size()) != n) {
    std::ostringstream msg;
    msg << "mpc reference has " << r_ref.size() << " samples, horizon is " << n;
    throw DimensionError(msg.str());
  }
  if (!(model.vx > 0.0)) throw SingularityError("mpc model built at v_x <= 0");

  CondensedQp out;
  out.horizon = n;
  out.phi = Eigen::MatrixXd::Zero(3 * n, 3);
  out.gamma = Eigen::MatrixXd::Zero(3 * n, n);
  out.offset = Eigen::VectorXd::Zero(3 * n);
  out.reference = Eigen::VectorXd::Zero(3 * n);

  const Eigen::Vector3d ed = model.e * model.d;
  Eigen::Matrix3d apow = Eigen::Matrix3d::Identity();  // A^(k-1)
  Eigen::Vector3d free = Eigen::Vector3d::Zero();
  std::vector<Eigen::Vector3d> apow_b;  // A^j B
  for (int k = 1; k <= n; ++k) {
    apow_b.push_back(apow * model.b);
    free = model.a * free + ed;
    apow = model.a * apow;
    out.phi.block(3 * (k - 1), 0, 3, 3) = apow;
    out.offset.segment(3 * (k - 1), 3) = free;
    for (int j = 0; j < k; ++j) out.gamma.block(3 * (k - 1), j, 3, 1) = apow_b[static_cast<std::size_t>(k - 1 - j)];
    out.reference(3 * (k - 1) + 1) = r_ref[static_cast<std::size_t>(k - 1)];
  }

  const Eigen::Matrix3d w = config.state_weight();
  Eigen::MatrixXd wbar = Eigen::MatrixXd::Zero(3 * n, 3 * n);
  for (int k = 0; k < n; ++k) wbar.block(3 * k, 3 * k, 3, 3) = w;
  const Eigen::VectorXd e0 = out.phi * x0 + out.offset - out.reference;

  auto& qp = out.qp;
  qp.h = Eigen::MatrixXd::Zero(n + 1, n + 1);
  qp.h.topLeftCorner(n, n) = 2.0 * (out.gamma.transpose() * wbar * out.gamma);
  qp.h.topLeftCorner(n, n).diagonal().array() += 2.0 * config.w_u;
  qp.h(n, n) = 2.0 * n * config.w_rho;
  qp.h = 0.5 * (qp.h + qp.h.transpose()).eval();
  qp.f = Eigen::VectorXd::Zero(n + 1);
  qp.f.head(n) = 2.0 * out.gamma.transpose() * wbar * e0;
  out.constant = e0.dot(wbar * e0);

  out.slip_row = Eigen::RowVector3d(1.0, lf / model.vx, -1.0);
  const int m = 4 * n + 1;
  qp.g = Eigen::MatrixXd::Zero(m, n + 1);
  qp.b = Eigen::VectorXd::Zero(m);
  const Eigen::VectorXd base = out.phi * x0 + out.offset;
  const double max_step = config.rate_limit * config.ts;
  for (int k = 0; k < n; ++k) {
    // s_k - s_{k-1}, with s_0 the measured actuator position.
    Eigen::RowVectorXd ds = out.gamma.row(3 * k + 2);
    double ds0 = base(3 * k + 2);
    if (k > 0) {
      ds -= out.gamma.row(3 * (k - 1) + 2);
      ds0 -= base(3 * (k - 1) + 2);
    } else {
      ds0 -= x0(2);
    }
    qp.g.row(k).head(n) = ds;
    qp.b(k) = max_step - ds0;
    qp.g.row(n + k).head(n) = -ds;
    qp.b(n + k) = max_step + ds0;

    const Eigen::RowVectorXd da = out.slip_row * out.gamma.middleRows(3 * k, 3);
    const double da0 = out.slip_row.dot(base.segment(3 * k, 3));
    qp.g.row(2 * n + k).head(n) = da;
    qp.g(2 * n + k, n) = -1.0;
    qp.b(2 * n + k) = config.alpha_max - da0;
    qp.g.row(3 * n + k).head(n) = -da;
    qp.g(3 * n + k, n) = -1.0;
    qp.b(3 * n + k) = config.alpha_max + da0;
  }
  qp.g(4 * n, n) = -1.0;
  return out;
}

MpcController::MpcController(dynamics::VehicleParams model, MpcConfig config)
    : model_(std::move(model)), config_(config) {
  model_.validate();
  config_.validate();
  ref_buffer_.assign(static_cast<std::size_t>(config_.horizon), 0.0);
}

void MpcController::reset(double command) {
  last_command_ = command;
  warm_active_.clear();
}

MpcStep MpcController::step(const dynamics::Measurement& meas, double beta_est, double r_ref) {
  std::fill(ref_buffer_.begin(), ref_buffer_.end(), r_ref);
  return step(meas, beta_est, ref_buffer_);
}

MpcStep MpcController::step(const dynamics::Measurement& meas, double beta_est, std::span<const double> r_ref) {
  const auto model = dynamics::build_discrete_model(meas, beta_est, model_, config_.actuator_bandwidth, config_.ts);
  const Eigen::Vector3d x0(beta_est, meas.yaw_rate, meas.steer);
  const auto cqp = condense(model, x0, r_ref, model_.lf, config_);

  QpWarmStart warm;
  warm.active = warm_active_;
  warm.feasible_point = cqp.feasible_point(meas.steer);
  const auto sol = solve_qp(cqp.qp, {}, &warm);

  MpcStep out;
  out.status = sol.status;
  out.iterations = sol.iterations;
  if (sol.status != QpStatus::Optimal || !sol.z.allFinite()) {
    out.fallback = true;
    out.command = last_command_;
    warm_active_.clear();
    return out;
  }
  out.command = sol.z(0);
  out.slack = sol.z(config_.horizon);
  out.cost = cqp.cost(sol.z);
  out.active_constraints = static_cast<int>(sol.active.size());
  last_command_ = out.command;
  warm_active_ = sol.active;
  return out;
}

void write_mpc_log(std::ostream& out, const std::vector<double>& t, const std::vector<MpcStep>& steps) {
  if (t.size() != steps.size()) throw DimensionError("mpc log: time and step vectors differ in length");
  const auto old = out.precision(12);
  out << "t,command,cost,slack,iterations,active,status,fallback\n";
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    out << t[i] << ',' << s.command << ',' << s.cost << ',' << s.slack << ',' << s.iterations << ','
        << s.active_constraints << ',' << to_string(s.status) << ',' << (s.fallback ? 1 : 0) << '\n';
  }
  out.precision(old);
}

}  // namespace tiltune::mpc
