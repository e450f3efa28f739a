#include "tiltune/til.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace tiltune::til {

double mixed_signal(double r, double beta, double zeta) { return (1.0 - zeta) * r - zeta * beta; }

void PidGains::validate() const {
  if (!std::isfinite(kp)) throw ConfigError("k_p must be finite");
  if (!(ti > 0.0)) throw ConfigError("T_I must be > 0");
  if (!(td >= 0.0) || !std::isfinite(td)) throw ConfigError("T_D must be finite and >= 0");
}

void CompensatorConfig::validate() const {
  if (!(zeta >= 0.0 && zeta <= 1.0)) throw ConfigError("zeta must lie in [0, 1]");
  if (!(nd > 0.0)) throw ConfigError("N_D must be > 0");
  if (!(ts > 0.0)) throw ConfigError("compensator sample time must be > 0");
  if (!(alpha_max > 0.0) || !(lf > 0.0)) throw ConfigError("alpha_max and l_f must be > 0");
}

Pid::Pid(PidGains gains, double nd, double ts, bool anti_windup)
    : gains_(gains), ts_(ts), anti_windup_(anti_windup) {
  gains_.validate();
  if (!(nd > 0.0) || !(ts > 0.0)) throw ConfigError("pid needs N_D > 0 and ts > 0");
  ki_step_ = std::isinf(gains_.ti) ? 0.0 : gains_.kp * ts / (2.0 * gains_.ti);
  if (gains_.td > 0.0) {
    const double c = 2.0 / ts;
    const double tau = gains_.td / nd;
    d_pole_ = (c * tau - 1.0) / (c * tau + 1.0);
    d_gain_ = gains_.kp * gains_.td * c / (1.0 + c * tau);
  }
}

void Pid::reset() {
  integral_ = 0.0;
  derivative_ = 0.0;
  prev_error_ = 0.0;
}

double Pid::step(double e, double lower, double upper) {
  const double p = gains_.kp * e;
  double integral = integral_ + ki_step_ * (e + prev_error_);
  const double derivative = d_pole_ * derivative_ + d_gain_ * (e - prev_error_);
  const double raw = p + integral + derivative;
  if (anti_windup_ && ((raw > upper && integral > integral_) || (raw < lower && integral < integral_)))
    integral = integral_;
  integral_ = integral;
  derivative_ = derivative;
  prev_error_ = e;
  return std::clamp(p + integral + derivative, lower, upper);
}

signal::TransferFunction Pid::discrete() const {
  // kp + ki_step (z+1)/(z-1) + d_gain (z-1)/(z-d_pole) over (z-1)(z-d_pole)
  using signal::poly_add;
  using signal::poly_mul;
  using signal::poly_scale;
  const std::vector<double> zm1{1.0, -1.0}, zp1{1.0, 1.0}, zmd{1.0, -d_pole_};
  const auto den = poly_mul(zm1, zmd);
  auto num = poly_scale(den, gains_.kp);
  num = poly_add(num, poly_scale(poly_mul(zp1, zmd), ki_step_));
  num = poly_add(num, poly_scale(poly_mul(zm1, zm1), d_gain_));
  return {num, den};
}

SteerBounds delta_saturation(double twin_command, const dynamics::Measurement& meas, double lf, double alpha_max) {
  if (!(meas.vx > 0.0)) throw SingularityError("steer bounds undefined for v_x <= 0");
  const double centre = meas.beta + lf * meas.yaw_rate / meas.vx;
  return {centre - alpha_max - twin_command, centre + alpha_max - twin_command};
}

void Maneuver::validate() const {
  if (steer_request.empty()) throw ConfigError("maneuver '" + name + "' has no samples");
  if (ax.size() != steer_request.size()) throw DimensionError("maneuver '" + name + "': steer and a_x lengths differ");
  if (!(ts > 0.0)) throw ConfigError("maneuver sample time must be > 0");
  if (!(v0 > 0.0)) throw ConfigError("maneuver initial speed must be > 0");
  double v = v0;
  for (double a : ax) {
    v += a * ts;
    if (!(v > 0.0)) throw ConfigError("maneuver '" + name + "' reaches v_x <= 0");
  }
}

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::MpcOnTwin: return "mpc-on-twin";
    case Mode::MpcOnVehicle: return "mpc-on-vehicle";
    case Mode::MpcOpenLoopOnVehicle: return "mpc-open-loop-on-vehicle";
    case Mode::Til: return "til";
    case Mode::Excitation: return "excitation";
  }
  return "unknown";
}

Mode mode_from_string(const std::string& name) {
  for (Mode m : {Mode::MpcOnTwin, Mode::MpcOnVehicle, Mode::MpcOpenLoopOnVehicle, Mode::Til, Mode::Excitation})
    if (name == to_string(m)) return m;
  throw ConfigError("unknown controller mode '" + name + "'");
}

void write_trace_csv(std::ostream& out, const TilTrace& tr) {
  const auto old = out.precision(17);
  out << "t,twin_r,twin_beta,twin_s_cmd,r,beta,r_meas,beta_meas,s_cmd,s_act,s_delta,eps_twin,eps,y_eps,vx\n";
  for (std::size_t k = 0; k < tr.size(); ++k)
    out << tr.t[k] << ',' << tr.twin_yaw_rate[k] << ',' << tr.twin_beta[k] << ',' << tr.twin_command[k] << ','
        << tr.yaw_rate[k] << ',' << tr.beta[k] << ',' << tr.meas_yaw_rate[k] << ',' << tr.meas_beta[k] << ','
        << tr.command[k] << ',' << tr.steer[k] << ',' << tr.delta[k] << ',' << tr.twin_mixed[k] << ','
        << tr.mixed[k] << ',' << tr.error[k] << ',' << tr.vx[k] << '\n';
  out.precision(old);
}

TilSystem::TilSystem(TilSetup setup, refgen::StaticYawMap map, Maneuver maneuver)
    : setup_(std::move(setup)), map_(std::move(map)), maneuver_(std::move(maneuver)) {
  maneuver_.validate();
  setup_.compensator.validate();
  setup_.mpc.validate();
  if (!(setup_.plant_dt > 0.0)) throw ConfigError("plant step must be > 0");
  const double ratio = maneuver_.ts / setup_.plant_dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || std::round(ratio) < 1.0)
    throw ConfigError("control period must be an integer multiple of the plant step");
  if (std::abs(setup_.mpc.ts - maneuver_.ts) > 1e-15 || std::abs(setup_.compensator.ts - maneuver_.ts) > 1e-15)
    throw ConfigError("mpc, compensator and maneuver sample times differ");
  twin_plant_ = dynamics::make_twin(setup_.nominal, setup_.actuator);
  vehicle_plant_ = dynamics::make_vehicle(setup_.nominal, setup_.actuator, setup_.perturbation);
}

void TilSystem::advance(dynamics::VehicleState& state, double command, double ax, const dynamics::Plant& plant) const {
  const int substeps = static_cast<int>(std::lround(maneuver_.ts / setup_.plant_dt));
  for (int i = 0; i < substeps; ++i) state = dynamics::vehicle_step(state, command, ax, setup_.plant_dt, plant);
}

const TwinRun& TilSystem::twin() const {
  if (!twin_cache_) twin_cache_ = simulate_twin();
  return *twin_cache_;
}

TwinRun TilSystem::simulate_twin() const {
  const auto n = maneuver_.samples();
  TwinRun run;
  auto reserve = [n](std::vector<double>& v) { v.reserve(n); };
  for (auto* v : {&run.t, &run.r_ref, &run.command, &run.beta, &run.yaw_rate, &run.steer, &run.vx, &run.ax, &run.mixed})
    reserve(*v);
  refgen::ReferenceGenerator gen(map_, setup_.ref_cutoff_hz, maneuver_.ts);
  gen.reset(maneuver_.steer_request[0], maneuver_.v0);
  mpc::MpcController ctl(setup_.nominal, setup_.mpc);
  auto state = dynamics::VehicleState::straight(maneuver_.v0);
  for (std::size_t k = 0; k < n; ++k) {
    const auto meas = dynamics::exact_measurement(state);
    const double r_ref = gen.step(maneuver_.steer_request[k], meas.vx);
    const auto step = ctl.step(meas, meas.beta, r_ref);
    run.t.push_back(static_cast<double>(k) * maneuver_.ts);
    run.r_ref.push_back(r_ref);
    run.command.push_back(step.command);
    run.beta.push_back(state.beta);
    run.yaw_rate.push_back(state.yaw_rate);
    run.steer.push_back(state.steer());
    run.vx.push_back(state.vx);
    run.ax.push_back(maneuver_.ax[k]);
    run.mixed.push_back(mixed_signal(state.yaw_rate, state.beta, setup_.compensator.zeta));
    run.mpc.push_back(step);
    advance(state, step.command, maneuver_.ax[k], twin_plant_);
  }
  return run;
}

namespace {

void push_row(TilTrace& tr, double t, double twin_r, double twin_beta, double twin_cmd, double twin_mixed,
              const dynamics::VehicleState& s, const dynamics::Measurement& m, double cmd, double delta, double mixed,
              double error) {
  tr.t.push_back(t);
  tr.twin_yaw_rate.push_back(twin_r);
  tr.twin_beta.push_back(twin_beta);
  tr.twin_command.push_back(twin_cmd);
  tr.yaw_rate.push_back(s.yaw_rate);
  tr.beta.push_back(s.beta);
  tr.meas_yaw_rate.push_back(m.yaw_rate);
  tr.meas_beta.push_back(m.beta);
  tr.command.push_back(cmd);
  tr.steer.push_back(s.steer());
  tr.delta.push_back(delta);
  tr.twin_mixed.push_back(twin_mixed);
  tr.mixed.push_back(mixed);
  tr.error.push_back(error);
  tr.vx.push_back(s.vx);
}

}  // namespace

TilTrace TilSystem::run(Mode mode, const PidGains& gains, std::uint64_t noise_seed,
                        const std::vector<double>* excitation) const {
  const auto& tw = twin();
  const auto n = maneuver_.samples();
  const auto& comp = setup_.compensator;
  TilTrace tr;
  tr.mode = mode;

  if (mode == Mode::MpcOnTwin) {
    for (std::size_t k = 0; k < n; ++k) {
      dynamics::VehicleState s = dynamics::VehicleState::straight(tw.vx[k]);
      s.beta = tw.beta[k];
      s.yaw_rate = tw.yaw_rate[k];
      s.actuator.position = tw.steer[k];
      const auto m = dynamics::exact_measurement(s);
      push_row(tr, tw.t[k], tw.yaw_rate[k], tw.beta[k], tw.command[k], tw.mixed[k], s, m, tw.command[k], 0.0,
               tw.mixed[k], 0.0);
    }
    return tr;
  }
  if (mode == Mode::Excitation && (!excitation || excitation->size() != n))
    throw DimensionError("excitation must have one sample per control period");

  std::optional<Pid> pid;
  if (mode == Mode::Til) pid.emplace(gains, comp.nd, comp.ts, comp.anti_windup);
  std::optional<refgen::ReferenceGenerator> gen;
  std::optional<mpc::MpcController> ctl;
  if (mode == Mode::MpcOnVehicle) {
    gen.emplace(map_, setup_.ref_cutoff_hz, maneuver_.ts);
    gen->reset(maneuver_.steer_request[0], maneuver_.v0);
    ctl.emplace(setup_.nominal, setup_.mpc);
  }

  dynamics::Sensor sensor(setup_.perturbation.noise, maneuver_.ts, noise_seed);
  auto state = dynamics::VehicleState::straight(maneuver_.v0);
  for (std::size_t k = 0; k < n; ++k) {
    const auto meas = sensor.measure(state);
    const double eps = mixed_signal(meas.yaw_rate, meas.beta, comp.zeta);
    const double error = tw.mixed[k] - eps;
    double delta = 0.0;
    double cmd = tw.command[k];
    switch (mode) {
      case Mode::MpcOnVehicle: {
        const double r_ref = gen->step(maneuver_.steer_request[k], meas.vx);
        cmd = ctl->step(meas, meas.beta, r_ref).command;
        break;
      }
      case Mode::Til: {
        double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
        if (comp.saturation) {
          const auto b = delta_saturation(tw.command[k], meas, comp.lf, comp.alpha_max);
          lo = b.lower;
          hi = b.upper;
        }
        delta = pid->step(error, lo, hi);
        cmd = tw.command[k] + delta;
        break;
      }
      case Mode::Excitation:
        delta = (*excitation)[k];
        cmd = tw.command[k] + delta;
        break;
      default:
        break;
    }
    push_row(tr, tw.t[k], tw.yaw_rate[k], tw.beta[k], tw.command[k], tw.mixed[k], state, meas, cmd, delta, eps, error);
    try {
      advance(state, cmd, maneuver_.ax[k], vehicle_plant_);
    } catch (const Error& e) {
      tr.diverged = true;
      tr.failure = e.what();
      break;
    }
    if (!std::isfinite(state.beta) || std::abs(state.beta) > setup_.divergence_beta) {
      tr.diverged = true;
      tr.failure = "vehicle sideslip beyond the divergence limit";
      break;
    }
  }
  return tr;
}

TilTrace TilSystem::run_live(const PidGains& gains, std::uint64_t noise_seed) const {
  const auto n = maneuver_.samples();
  const auto& comp = setup_.compensator;
  TilTrace tr;
  tr.mode = Mode::Til;
  refgen::ReferenceGenerator gen(map_, setup_.ref_cutoff_hz, maneuver_.ts);
  gen.reset(maneuver_.steer_request[0], maneuver_.v0);
  mpc::MpcController ctl(setup_.nominal, setup_.mpc);
  Pid pid(gains, comp.nd, comp.ts, comp.anti_windup);
  dynamics::Sensor sensor(setup_.perturbation.noise, maneuver_.ts, noise_seed);
  auto twin = dynamics::VehicleState::straight(maneuver_.v0);
  auto vehicle = dynamics::VehicleState::straight(maneuver_.v0);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * maneuver_.ts;
    // Twin side: reference, MPC, twin output at t, twin advance.
    const auto twin_meas = dynamics::exact_measurement(twin);
    const double r_ref = gen.step(maneuver_.steer_request[k], twin_meas.vx);
    const double twin_cmd = ctl.step(twin_meas, twin_meas.beta, r_ref).command;
    const double twin_r = twin.yaw_rate, twin_beta = twin.beta;
    const double twin_eps = mixed_signal(twin_r, twin_beta, comp.zeta);
    advance(twin, twin_cmd, maneuver_.ax[k], twin_plant_);
    // Vehicle side.
    const auto meas = sensor.measure(vehicle);
    const double eps = mixed_signal(meas.yaw_rate, meas.beta, comp.zeta);
    const double error = twin_eps - eps;
    double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    if (comp.saturation) {
      const auto b = delta_saturation(twin_cmd, meas, comp.lf, comp.alpha_max);
      lo = b.lower;
      hi = b.upper;
    }
    const double delta = pid.step(error, lo, hi);
    const double cmd = twin_cmd + delta;
    push_row(tr, t, twin_r, twin_beta, twin_cmd, twin_eps, vehicle, meas, cmd, delta, eps, error);
    try {
      advance(vehicle, cmd, maneuver_.ax[k], vehicle_plant_);
    } catch (const Error& e) {
      tr.diverged = true;
      tr.failure = e.what();
      break;
    }
    if (!std::isfinite(vehicle.beta) || std::abs(vehicle.beta) > setup_.divergence_beta) {
      tr.diverged = true;
      tr.failure = "vehicle sideslip beyond the divergence limit";
      break;
    }
  }
  return tr;
}

}  // namespace tiltune::til
