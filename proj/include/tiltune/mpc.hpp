#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tiltune/dynamics.hpp"
#include "tiltune/qp.hpp"

namespace tiltune::mpc {

struct MpcConfig {
  int horizon = 20;
  double w_beta = 0.2;
  double w_r = 0.8;
  double w_s = 0.0;
  double w_u = 1.0;
  double w_rho = 100.0;
  double alpha_max = deg2rad(9.10);          // front slip bound [rad]
  double rate_limit = deg2rad(100.0);        // [rad/s]
  double ts = 0.01;                          // [s]
  double actuator_bandwidth = 33.8;          // first-order model [rad/s]

  Eigen::Matrix3d state_weight() const { return Eigen::Vector3d(w_beta, w_r, w_s).asDiagonal(); }
  void validate() const;
};

/// Dense QP over z = [u_0 .. u_{N-1}, rho] after eliminating the states.
///
/// Rows of G, in order: N rate rows s_k - s_{k-1} <= rate*ts, N rows of the
/// opposite sign, N slip rows alpha_k - rho <= alpha_max, N opposite, and
/// -rho <= 0.
struct CondensedQp {
  QpProblem qp;
  int horizon = 0;
  Eigen::MatrixXd phi;       // stacked x_1..x_N as phi x0 + gamma u + offset
  Eigen::MatrixXd gamma;
  Eigen::VectorXd offset;    // free response to the frozen disturbance
  Eigen::VectorXd reference; // stacked state references
  double constant = 0.0;     // cost term independent of z
  Eigen::RowVector3d slip_row;  // alpha_f = slip_row * x

  /// Full stage cost at z, including the constant term.
  double cost(const Eigen::VectorXd& z) const { return qp.objective(z) + constant; }
  /// Constant input at the current actuator position, slack at the largest
  /// resulting slip violation: always feasible.
  Eigen::VectorXd feasible_point(double steer_now) const;
};

/// Eliminates the states of x_{k+1} = A x_k + B u_k + E d over the horizon.
/// `r_ref` must hold `config.horizon` values (reference of x_1..x_N).
CondensedQp condense(const dynamics::LtiModel& model, const Eigen::Vector3d& x0, std::span<const double> r_ref,
                     double lf, const MpcConfig& config);

struct MpcStep {
  double command = 0.0;
  bool fallback = false;  // solver failed, previous command held
  QpStatus status = QpStatus::Optimal;
  int iterations = 0;
  double slack = 0.0;
  double cost = 0.0;
  int active_constraints = 0;
};

/// Receding-horizon yaw-rate controller. Each call linearizes the nominal
/// model at the measurement, condenses and solves the QP, and applies u_0.
class MpcController {
 public:
  MpcController(dynamics::VehicleParams model, MpcConfig config);

  /// `r_ref` has one value per horizon stage.
  MpcStep step(const dynamics::Measurement& meas, double beta_est, std::span<const double> r_ref);
  /// Same reference held over the horizon.
  MpcStep step(const dynamics::Measurement& meas, double beta_est, double r_ref);

  void reset(double command = 0.0);
  double last_command() const { return last_command_; }
  const MpcConfig& config() const { return config_; }
  const dynamics::VehicleParams& model() const { return model_; }

 private:
  dynamics::VehicleParams model_;
  MpcConfig config_;
  double last_command_ = 0.0;
  std::vector<int> warm_active_;
  std::vector<double> ref_buffer_;
};

/// Per-step diagnostics as CSV (t, command, cost, slack, iterations, active, status, fallback).
void write_mpc_log(std::ostream& out, const std::vector<double>& t, const std::vector<MpcStep>& steps);

}  // namespace tiltune::mpc
