#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "tiltune/common.hpp"

namespace tiltune::dynamics {

/// Coefficients of the simplified magic formula
/// F_y = -(F_z c / (a b)) sin(b atan(a tan(alpha))).
/// Initial slope is -F_z c, the peak magnitude F_z c / (a b).
struct TireParams {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  void validate() const;
};

/// Single-track vehicle constants. Defaults are the reference two-seater.
struct VehicleParams {
  double mass = 1729.1;          // [kg]
  double yaw_inertia = 2482.7;   // [kg m^2]
  double lf = 1.48;              // CoM to front axle [m]
  double lr = 1.16;              // CoM to rear axle [m]
  double aero_front = 0.065;     // [kg/m]
  double aero_rear = 0.221;      // [kg/m]
  double load_transfer = 153.63; // k_x [kg]
  double gravity = 9.81;         // [m/s^2]
  TireParams front{10.72, 1.51, 20.08};
  TireParams rear{19.75, 0.75, 28.69};

  double wheelbase() const { return lf + lr; }
  void validate() const;
};

/// Steer-by-wire actuator: third-order linear low-level loop followed by a
/// rate limiter and a position saturation.
struct ActuatorParams {
  std::array<double, 3> num{58.34, 1547.0, 9137.0};          // descending powers of s
  std::array<double, 4> den{1.002, 64.55, 1549.0, 9137.0};
  double bandwidth = 33.8;                 // first-order approximation [rad/s]
  double rate_limit = deg2rad(100.0);      // [rad/s]
  double position_limit = deg2rad(20.0);   // [rad]

  void validate() const;
};

struct ActuatorState {
  Eigen::Vector3d filter = Eigen::Vector3d::Zero();  // controllable canonical realization
  double rate_limited = 0.0;                          // rate limiter output
  double position = 0.0;                              // s_act after saturation

  /// Equilibrium with the actuator at rest at `steer`.
  static ActuatorState at_rest(double steer, const ActuatorParams& params);
};

struct VehicleState {
  double beta = 0.0;      // sideslip [rad]
  double yaw_rate = 0.0;  // [rad/s]
  double vx = 0.0;        // [m/s]
  double ax = 0.0;        // [m/s^2]
  ActuatorState actuator;
  double fy_front = 0.0;  // lateral forces; dynamic states only with a relaxation lag [N]
  double fy_rear = 0.0;

  double steer() const { return actuator.position; }

  /// Straight running at speed `vx` with the actuator at rest at zero.
  static VehicleState straight(double vx);
};

struct PointMass {
  double mass = 0.0;  // [kg]
  double x = 0.0;     // forward of the nominal CoM [m]
  double y = 0.0;     // left of the nominal CoM [m]
};

struct NoiseConfig {
  double yaw_rate_std = 0.0;        // white noise on r [rad/s]
  double sideslip_std = 0.0;        // post-filter std of the beta noise [rad]
  double sideslip_cutoff_hz = 5.0;  // first-order low pass shaping the beta noise

  bool silent() const { return yaw_rate_std == 0.0 && sideslip_std == 0.0; }
};

/// Differences between the digital twin and the physical vehicle.
struct PlantPerturbation {
  std::vector<PointMass> added_masses;
  double rear_stiffness_scale = 1.0;
  double relaxation_length = 0.0;  // [m]; 0 disables the force lag
  NoiseConfig noise;

  /// 100 kg passenger plus a 70/10 kg unbalanced front-trunk load, rear
  /// cornering stiffness -15 %, 0.3 m relaxation, paper sensor noise.
  static PlantPerturbation reference();
  void validate() const;
};

/// Everything needed to integrate one plant instance.
struct Plant {
  VehicleParams vehicle;
  ActuatorParams actuator;
  double relaxation_length = 0.0;
};

/// Twin (nominal) and physical-vehicle plants.
Plant make_twin(const VehicleParams& params, const ActuatorParams& actuator);
Plant make_vehicle(const VehicleParams& params, const ActuatorParams& actuator,
                   const PlantPerturbation& perturbation);

struct Measurement {
  double yaw_rate = 0.0;
  double beta = 0.0;
  double steer = 0.0;  // s_act
  double vx = 0.0;
  double ax = 0.0;
};

struct SlipAngles {
  double front = 0.0;
  double rear = 0.0;
};

struct AxleLoads {
  double front = 0.0;
  double rear = 0.0;
};

struct LinearizedTire {
  double force = 0.0;      // F_y at the linearization slip [N]
  double stiffness = 0.0;  // C_alpha = -dF_y/dalpha [N/rad]
  double slip = 0.0;       // [rad]
  double load = 0.0;       // F_z [N]
};

/// x_{k+1} = A x_k + B u_k + E d, y = C x with x = [beta, r, s_act].
struct LtiModel {
  Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
  Eigen::Matrix<double, 3, 2> e = Eigen::Matrix<double, 3, 2>::Zero();
  Eigen::RowVector3d c = Eigen::RowVector3d::Zero();
  Eigen::Vector2d d = Eigen::Vector2d::Zero();
  double ts = 0.0;
  double vx = 0.0;  // operating speed, frozen over the horizon
};

/// Lateral force of one axle. Throws DomainError for |alpha| >= pi/2 or a
/// negative load.
double lateral_tire_force(double alpha, double load, const TireParams& tire);

/// Slip angle at which |F_y| peaks (b > 1), or pi/2 when the curve is monotone.
double peak_slip(const TireParams& tire);

SlipAngles axle_slip_angles(double beta, double yaw_rate, double vx, double steer,
                            const VehicleParams& params);

AxleLoads vertical_loads(double vx, double ax, const VehicleParams& params);

/// One step of the actuator: linear filter integrated with s_cmd held over
/// `dt`, then rate limiter and saturation.
ActuatorState actuator_step(const ActuatorState& state, double steer_cmd, double dt,
                            const ActuatorParams& params);

/// One fixed-step RK4 step of the single-track model (forces, loads, speed and
/// optional force lag) followed by one actuator step.
VehicleState vehicle_step(const VehicleState& state, double steer_cmd, double ax_ref, double dt,
                          const Plant& plant);

LinearizedTire linearize_tire(double slip, double load, const TireParams& tire);

/// Local linear model from a measurement using the first-order actuator.
LtiModel build_discrete_model(const Measurement& meas, double beta_est, const VehicleParams& params,
                              double actuator_bandwidth, double ts);

/// Operating point behind build_discrete_model.
struct OperatingPoint {
  SlipAngles slip;
  AxleLoads loads;
  LinearizedTire front;
  LinearizedTire rear;
};
OperatingPoint operating_point(const Measurement& meas, double beta_est, const VehicleParams& params);

VehicleParams apply_perturbation(const VehicleParams& params, const PlantPerturbation& perturbation);

/// Residuals (beta_dot, r_dot) of the single-track equations with steady
/// forces at fixed steer and zero longitudinal acceleration.
Eigen::Vector2d lateral_residual(double beta, double yaw_rate, double vx, double steer,
                                 const VehicleParams& params);

struct SteadyState {
  double beta = 0.0;
  double yaw_rate = 0.0;
  int iterations = 0;
  bool used_simulation = false;
};

/// Constant-steer steady state by damped Newton, with a simulation fallback.
/// `guess` seeds the Newton iteration (continuation along a sweep).
SteadyState steady_state(const VehicleParams& params, double steer, double vx,
                         const SteadyState* guess = nullptr);

/// Sensor model for the physical vehicle: white noise on r, low-pass filtered
/// noise on beta, other channels exact.
class Sensor {
 public:
  Sensor(NoiseConfig config, double ts, std::uint64_t seed);

  Measurement measure(const VehicleState& state);
  const NoiseConfig& config() const { return config_; }

 private:
  NoiseConfig config_;
  double pole_ = 0.0;
  double drive_std_ = 0.0;
  double beta_noise_ = 0.0;
  bool primed_ = false;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Exact projection of the state onto the measured channels.
Measurement exact_measurement(const VehicleState& state);

/// One row of an exported plant trace.
struct TraceSample {
  double t = 0.0;
  VehicleState state;
  double steer_cmd = 0.0;
};

/// CSV with columns t,beta,r,vx,ax,s_cmd,s_act,alpha_f,alpha_r,fz_f,fz_r.
void write_trace_csv(std::ostream& out, const std::vector<TraceSample>& trace, const VehicleParams& params);

}  // namespace tiltune::dynamics
