#include "tiltune/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace tiltune::dynamics {

namespace {

constexpr double kHalfPi = kPi / 2.0;

template <typename T>
int sign(T v) {
  return (T(0) < v) - (v < T(0));
}

void require_positive(double value, const char* what) {
  if (!(value > 0.0)) {
    std::ostringstream msg;
    msg << what << " must be strictly positive (got " << value << ")";
    throw ConfigError(msg.str());
  }
}

// Controllable canonical realization of the actuator transfer function.
struct ActuatorRealization {
  Eigen::Matrix3d a;
  Eigen::Vector3d b;
  Eigen::RowVector3d c;

  explicit ActuatorRealization(const ActuatorParams& p) {
    const double lead = p.den[0];
    const double a0 = p.den[3] / lead;
    const double a1 = p.den[2] / lead;
    const double a2 = p.den[1] / lead;
    a << 0.0, 1.0, 0.0,
         0.0, 0.0, 1.0,
         -a0, -a1, -a2;
    b << 0.0, 0.0, 1.0;
    c << p.num[2] / lead, p.num[1] / lead, p.num[0] / lead;
  }
};

struct LateralDerivative {
  double beta_dot;
  double yaw_accel;
  double vx_dot;
  double fy_front_dot;
  double fy_rear_dot;
};

using LateralVector = Eigen::Matrix<double, 5, 1>;

LateralVector lateral_derivative(const LateralVector& y, double steer, double ax, const Plant& plant) {
  const auto& p = plant.vehicle;
  const double beta = y(0);
  const double r = y(1);
  const double vx = y(2);
  const auto slip = axle_slip_angles(beta, r, vx, steer, p);
  const auto loads = vertical_loads(vx, ax, p);
  const double ff_ss = lateral_tire_force(slip.front, loads.front, p.front);
  const double fr_ss = lateral_tire_force(slip.rear, loads.rear, p.rear);

  double ff = ff_ss;
  double fr = fr_ss;
  LateralVector dy = LateralVector::Zero();
  if (plant.relaxation_length > 0.0) {
    ff = y(3);
    fr = y(4);
    const double rate = vx / plant.relaxation_length;
    dy(3) = (ff_ss - ff) * rate;
    dy(4) = (fr_ss - fr) * rate;
  }
  dy(0) = (ff + fr) / (p.mass * vx) - r;
  dy(1) = (p.lf * ff - p.lr * fr) / p.yaw_inertia;
  dy(2) = ax;
  return dy;
}

}  // namespace

void TireParams::validate() const {
  require_positive(a, "tire a");
  require_positive(b, "tire b");
  require_positive(c, "tire c");
}

void VehicleParams::validate() const {
  require_positive(mass, "mass");
  require_positive(yaw_inertia, "yaw inertia");
  require_positive(lf, "lf");
  require_positive(lr, "lr");
  require_positive(aero_front, "aero_front");
  require_positive(aero_rear, "aero_rear");
  require_positive(load_transfer, "load_transfer");
  require_positive(gravity, "gravity");
  front.validate();
  rear.validate();
}

void ActuatorParams::validate() const {
  require_positive(bandwidth, "actuator bandwidth");
  require_positive(rate_limit, "actuator rate limit");
  require_positive(position_limit, "actuator position limit");
  require_positive(den[0], "actuator leading denominator coefficient");
  require_positive(den[3], "actuator denominator constant term");
}

ActuatorState ActuatorState::at_rest(double steer, const ActuatorParams& params) {
  ActuatorState s;
  const double b0 = params.num[2] / params.den[0];
  s.filter = Eigen::Vector3d(steer / b0, 0.0, 0.0);
  s.rate_limited = steer;
  s.position = std::clamp(steer, -params.position_limit, params.position_limit);
  return s;
}

VehicleState VehicleState::straight(double vx) {
  VehicleState s;
  s.vx = vx;
  return s;
}

PlantPerturbation PlantPerturbation::reference() {
  PlantPerturbation p;
  p.added_masses = {{100.0, 0.0, -0.35}, {70.0, 1.2, -0.5}, {10.0, 1.2, 0.5}};
  p.rear_stiffness_scale = 0.85;
  p.relaxation_length = 0.3;
  p.noise = NoiseConfig{0.006, 0.0044, 5.0};
  return p;
}

void PlantPerturbation::validate() const {
  if (!(rear_stiffness_scale > 0.0 && rear_stiffness_scale <= 1.0))
    throw ConfigError("rear stiffness scale must lie in (0, 1]");
  if (relaxation_length < 0.0) throw ConfigError("relaxation length must be >= 0");
  if (noise.yaw_rate_std < 0.0 || noise.sideslip_std < 0.0)
    throw ConfigError("noise standard deviations must be >= 0");
  if (noise.sideslip_std > 0.0) require_positive(noise.sideslip_cutoff_hz, "sideslip noise cutoff");
  for (const auto& m : added_masses)
    if (m.mass < 0.0) throw ConfigError("added masses must be non-negative");
}

Plant make_twin(const VehicleParams& params, const ActuatorParams& actuator) {
  params.validate();
  actuator.validate();
  return Plant{params, actuator, 0.0};
}

Plant make_vehicle(const VehicleParams& params, const ActuatorParams& actuator,
                   const PlantPerturbation& perturbation) {
  auto vehicle = apply_perturbation(params, perturbation);
  actuator.validate();
  return Plant{vehicle, actuator, perturbation.relaxation_length};
}

double lateral_tire_force(double alpha, double load, const TireParams& tire) {
  if (!(std::abs(alpha) < kHalfPi)) throw DomainError("tire slip angle outside (-pi/2, pi/2)");
  if (load < 0.0) throw DomainError("negative vertical load");
  const double phi = std::atan(tire.a * std::tan(alpha));
  return -(load * tire.c / (tire.a * tire.b)) * std::sin(tire.b * phi);
}

double peak_slip(const TireParams& tire) {
  if (tire.b <= 1.0) return kHalfPi;
  return std::atan(std::tan(kHalfPi / tire.b) / tire.a);
}

SlipAngles axle_slip_angles(double beta, double yaw_rate, double vx, double steer,
                            const VehicleParams& params) {
  if (!(vx > 0.0)) throw SingularityError("slip angles undefined for v_x <= 0");
  return {beta + params.lf * yaw_rate / vx - steer, beta - params.lr * yaw_rate / vx};
}

AxleLoads vertical_loads(double vx, double ax, const VehicleParams& p) {
  const double static_load = p.mass * p.gravity / p.wheelbase();
  const double v2 = vx * vx;
  return {p.lr * static_load + p.aero_front * v2 - p.load_transfer * ax,
          p.lf * static_load + p.aero_rear * v2 + p.load_transfer * ax};
}

ActuatorState actuator_step(const ActuatorState& state, double steer_cmd, double dt,
                            const ActuatorParams& params) {
  if (!(dt > 0.0)) throw DomainError("actuator step needs dt > 0");
  const ActuatorRealization sys(params);
  auto f = [&](const Eigen::Vector3d& x) -> Eigen::Vector3d { return sys.a * x + sys.b * steer_cmd; };
  const Eigen::Vector3d& x = state.filter;
  const Eigen::Vector3d k1 = f(x);
  const Eigen::Vector3d k2 = f(x + 0.5 * dt * k1);
  const Eigen::Vector3d k3 = f(x + 0.5 * dt * k2);
  const Eigen::Vector3d k4 = f(x + dt * k3);

  ActuatorState next;
  next.filter = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  const double linear_out = sys.c * next.filter;
  const double max_delta = params.rate_limit * dt;
  next.rate_limited = state.rate_limited + std::clamp(linear_out - state.rate_limited, -max_delta, max_delta);
  const double candidate = std::clamp(next.rate_limited, -params.position_limit, params.position_limit);
  // The saturation is 1-Lipschitz, so the rate bound also holds on s_act; the
  // clamp below only guards rounding when both limits are active.
  next.position = std::clamp(candidate, state.position - max_delta, state.position + max_delta);
  return next;
}

VehicleState vehicle_step(const VehicleState& state, double steer_cmd, double ax_ref, double dt,
                          const Plant& plant) {
  if (!(dt > 0.0)) throw DomainError("vehicle step needs dt > 0");
  if (!(state.vx > 0.0)) throw SingularityError("vehicle step at v_x <= 0");
  const double steer = state.actuator.position;

  LateralVector y;
  y << state.beta, state.yaw_rate, state.vx, state.fy_front, state.fy_rear;
  const LateralVector k1 = lateral_derivative(y, steer, ax_ref, plant);
  const LateralVector k2 = lateral_derivative(y + 0.5 * dt * k1, steer, ax_ref, plant);
  const LateralVector k3 = lateral_derivative(y + 0.5 * dt * k2, steer, ax_ref, plant);
  const LateralVector k4 = lateral_derivative(y + dt * k3, steer, ax_ref, plant);
  const LateralVector next_y = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

  VehicleState next;
  next.beta = next_y(0);
  next.yaw_rate = next_y(1);
  next.vx = next_y(2);
  next.ax = ax_ref;
  if (!(next.vx > 0.0)) throw SingularityError("vehicle speed reached zero");
  if (!std::isfinite(next.beta) || !std::isfinite(next.yaw_rate))
    throw DomainError("vehicle state diverged");
  next.actuator = actuator_step(state.actuator, steer_cmd, dt, plant.actuator);

  if (plant.relaxation_length > 0.0) {
    next.fy_front = next_y(3);
    next.fy_rear = next_y(4);
  } else {
    const auto& p = plant.vehicle;
    const auto slip = axle_slip_angles(next.beta, next.yaw_rate, next.vx, next.actuator.position, p);
    const auto loads = vertical_loads(next.vx, next.ax, p);
    next.fy_front = lateral_tire_force(slip.front, loads.front, p.front);
    next.fy_rear = lateral_tire_force(slip.rear, loads.rear, p.rear);
  }
  return next;
}

LinearizedTire linearize_tire(double slip, double load, const TireParams& tire) {
  if (load < 0.0) throw DomainError("negative vertical load");
  const double t = std::tan(slip);
  const double phi = std::atan(tire.a * t);
  LinearizedTire lin;
  lin.slip = slip;
  lin.load = load;
  lin.force = lateral_tire_force(slip, load, tire);
  lin.stiffness = load * tire.c * std::cos(tire.b * phi) * (1.0 + t * t) / (1.0 + tire.a * tire.a * t * t);
  return lin;
}

OperatingPoint operating_point(const Measurement& meas, double beta_est, const VehicleParams& params) {
  OperatingPoint op;
  op.slip = axle_slip_angles(beta_est, meas.yaw_rate, meas.vx, meas.steer, params);
  op.loads = vertical_loads(meas.vx, meas.ax, params);
  op.front = linearize_tire(op.slip.front, op.loads.front, params.front);
  op.rear = linearize_tire(op.slip.rear, op.loads.rear, params.rear);
  return op;
}

LtiModel build_discrete_model(const Measurement& meas, double beta_est, const VehicleParams& p,
                              double actuator_bandwidth, double ts) {
  if (!(ts > 0.0)) throw DomainError("sample time must be positive");
  const auto op = operating_point(meas, beta_est, p);
  const double v = meas.vx;
  const double m = p.mass;
  const double j = p.yaw_inertia;
  const double cf = op.front.stiffness;
  const double cr = op.rear.stiffness;

  LtiModel model;
  model.ts = ts;
  model.vx = v;
  model.a << 1.0 - ts * (cf + cr) / (m * v),
             ts * (-p.lf * cf + p.lr * cr - m * v * v) / (m * v * v),
             ts * cf / (m * v),
             ts * (-p.lf * cf + p.lr * cr) / j,
             1.0 - ts * (p.lf * p.lf * cf + p.lr * p.lr * cr) / (j * v),
             ts * cf * p.lf / j,
             0.0, 0.0, 1.0 - ts * actuator_bandwidth;
  model.b << 0.0, 0.0, ts * actuator_bandwidth;
  model.e << ts, 0.0,
             0.0, ts,
             0.0, 0.0;
  model.c << 0.0, 1.0, 0.0;
  const double front_offset = op.front.force + cf * op.front.slip;
  const double rear_offset = op.rear.force + cr * op.rear.slip;
  model.d << (front_offset + rear_offset) / (m * v),
             (p.lf * front_offset - p.lr * rear_offset) / j;
  return model;
}

VehicleParams apply_perturbation(const VehicleParams& params, const PlantPerturbation& perturbation) {
  params.validate();
  perturbation.validate();
  VehicleParams out = params;
  double added = 0.0;
  double mx = 0.0;
  double my = 0.0;
  for (const auto& pm : perturbation.added_masses) {
    added += pm.mass;
    mx += pm.mass * pm.x;
    my += pm.mass * pm.y;
  }
  if (added > 0.0) {
    const double total = params.mass + added;
    const double xc = mx / total;
    const double yc = my / total;
    double inertia = params.yaw_inertia + params.mass * (xc * xc + yc * yc);
    for (const auto& pm : perturbation.added_masses) {
      const double dx = pm.x - xc;
      const double dy = pm.y - yc;
      inertia += pm.mass * (dx * dx + dy * dy);
    }
    out.mass = total;
    out.yaw_inertia = inertia;
    out.lf = params.lf - xc;
    out.lr = params.lr + xc;
    out.load_transfer = params.load_transfer * total / params.mass;
    if (!(out.lf > 0.0 && out.lr > 0.0))
      throw ConfigError("perturbed centre of mass lies outside the wheelbase");
  }
  out.rear.c = params.rear.c * perturbation.rear_stiffness_scale;
  return out;
}

Eigen::Vector2d lateral_residual(double beta, double yaw_rate, double vx, double steer,
                                 const VehicleParams& p) {
  const auto slip = axle_slip_angles(beta, yaw_rate, vx, steer, p);
  const auto loads = vertical_loads(vx, 0.0, p);
  const double ff = lateral_tire_force(slip.front, loads.front, p.front);
  const double fr = lateral_tire_force(slip.rear, loads.rear, p.rear);
  return {(ff + fr) / (p.mass * vx) - yaw_rate, (p.lf * ff - p.lr * fr) / p.yaw_inertia};
}

namespace {

bool newton_solve(const VehicleParams& p, double steer, double vx, Eigen::Vector2d& x, int& iterations) {
  constexpr double kTol = 1e-13;
  const auto loads = vertical_loads(vx, 0.0, p);
  auto residual = [&](const Eigen::Vector2d& z, Eigen::Vector2d& out) {
    try {
      out = lateral_residual(z(0), z(1), vx, steer, p);
      return out.allFinite();
    } catch (const DomainError&) {
      return false;
    }
  };
  Eigen::Vector2d res;
  if (!residual(x, res)) return false;
  for (iterations = 0; iterations < 100; ++iterations) {
    if (res.lpNorm<Eigen::Infinity>() < kTol) return true;
    const auto slip = axle_slip_angles(x(0), x(1), vx, steer, p);
    const double cf = linearize_tire(slip.front, loads.front, p.front).stiffness;
    const double cr = linearize_tire(slip.rear, loads.rear, p.rear).stiffness;
    Eigen::Matrix2d jac;
    jac << -(cf + cr) / (p.mass * vx), (-cf * p.lf + cr * p.lr) / (p.mass * vx * vx) - 1.0,
           (-p.lf * cf + p.lr * cr) / p.yaw_inertia, -(p.lf * p.lf * cf + p.lr * p.lr * cr) / (p.yaw_inertia * vx);
    const Eigen::Vector2d step = jac.fullPivLu().solve(-res);
    if (!step.allFinite()) return false;
    double lambda = 1.0;
    bool accepted = false;
    for (int k = 0; k < 40; ++k, lambda *= 0.5) {
      Eigen::Vector2d trial = x + lambda * step;
      Eigen::Vector2d trial_res;
      if (residual(trial, trial_res) &&
          trial_res.norm() <= (1.0 - 1e-4 * lambda) * res.norm()) {
        x = trial;
        res = trial_res;
        accepted = true;
        break;
      }
    }
    if (!accepted) return res.lpNorm<Eigen::Infinity>() < 1e-10;
  }
  return res.lpNorm<Eigen::Infinity>() < kTol;
}

}  // namespace

SteadyState steady_state(const VehicleParams& params, double steer, double vx, const SteadyState* guess) {
  if (!(vx > 0.0)) throw SingularityError("steady state undefined for v_x <= 0");
  Eigen::Vector2d x = guess ? Eigen::Vector2d(guess->beta, guess->yaw_rate) : Eigen::Vector2d::Zero();
  int iterations = 0;
  if (newton_solve(params, steer, vx, x, iterations)) return {x(0), x(1), iterations, false};

  // Fallback: integrate the lateral dynamics at fixed steer until they settle,
  // then polish with Newton.
  Plant plant{params, ActuatorParams{}, 0.0};
  VehicleState s = VehicleState::straight(vx);
  s.actuator.position = steer;
  constexpr double dt = 1e-3;
  try {
    for (int k = 0; k < 120000; ++k) {
      LateralVector y;
      y << s.beta, s.yaw_rate, vx, 0.0, 0.0;
      const LateralVector k1 = lateral_derivative(y, steer, 0.0, plant);
      const LateralVector k2 = lateral_derivative(y + 0.5 * dt * k1, steer, 0.0, plant);
      const LateralVector k3 = lateral_derivative(y + 0.5 * dt * k2, steer, 0.0, plant);
      const LateralVector k4 = lateral_derivative(y + dt * k3, steer, 0.0, plant);
      y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      s.beta = y(0);
      s.yaw_rate = y(1);
      if (k % 100 == 0 && lateral_residual(s.beta, s.yaw_rate, vx, steer, params).lpNorm<Eigen::Infinity>() < 1e-8)
        break;
    }
  } catch (const DomainError&) {
  }
  x = Eigen::Vector2d(s.beta, s.yaw_rate);
  if (x.allFinite() && newton_solve(params, steer, vx, x, iterations)) return {x(0), x(1), iterations, true};

  std::ostringstream msg;
  msg << "no steady state at steer " << steer << " rad, v_x " << vx << " m/s";
  throw ConvergenceError(msg.str());
}

Sensor::Sensor(NoiseConfig config, double ts, std::uint64_t seed) : config_(config), rng_(seed) {
  if (!(ts > 0.0)) throw DomainError("sensor sample time must be positive");
  if (config_.sideslip_std > 0.0) {
    pole_ = std::exp(-2.0 * kPi * config_.sideslip_cutoff_hz * ts);
    // Stationary variance of y_k = a y_{k-1} + (1-a) w_k is var(w)(1-a)/(1+a).
    drive_std_ = config_.sideslip_std * std::sqrt((1.0 + pole_) / (1.0 - pole_));
  }
}

Measurement Sensor::measure(const VehicleState& state) {
  Measurement m = exact_measurement(state);
  const double w_r = normal_(rng_);
  const double w_b = normal_(rng_);
  if (!primed_) {
    beta_noise_ = config_.sideslip_std * w_b;
    primed_ = true;
  } else {
    beta_noise_ = pole_ * beta_noise_ + (1.0 - pole_) * drive_std_ * w_b;
  }
  m.yaw_rate += config_.yaw_rate_std * w_r;
  m.beta += beta_noise_;
  return m;
}

Measurement exact_measurement(const VehicleState& state) {
  return {state.yaw_rate, state.beta, state.actuator.position, state.vx, state.ax};
}

void write_trace_csv(std::ostream& out, const std::vector<TraceSample>& trace, const VehicleParams& params) {
  out << "t,beta,r,vx,ax,s_cmd,s_act,alpha_f,alpha_r,fz_f,fz_r\n";
  const auto old_precision = out.precision(12);
  for (const auto& row : trace) {
    const auto& s = row.state;
    const auto slip = axle_slip_angles(s.beta, s.yaw_rate, s.vx, s.steer(), params);
    const auto loads = vertical_loads(s.vx, s.ax, params);
    out << row.t << ',' << s.beta << ',' << s.yaw_rate << ',' << s.vx << ',' << s.ax << ',' << row.steer_cmd
        << ',' << s.steer() << ',' << slip.front << ',' << slip.rear << ',' << loads.front << ','
        << loads.rear << '\n';
  }
  out.precision(old_precision);
}

}  // namespace tiltune::dynamics
