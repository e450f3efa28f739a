#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tiltune/dynamics.hpp"
#include "tiltune/mpc.hpp"
#include "tiltune/refgen.hpp"
#include "tiltune/signal.hpp"

namespace tiltune::til {

/// (1 - zeta) r - zeta beta
double mixed_signal(double r, double beta, double zeta);

/// k_p (1 + 1/(s T_I) + s T_D / (1 + s T_D / N_D)). T_I = +inf removes the
/// integral action.
struct PidGains {
  double kp = 0.0;
  double ti = std::numeric_limits<double>::infinity();
  double td = 0.0;

  void validate() const;
  bool operator==(const PidGains&) const = default;
};

struct CompensatorConfig {
  double zeta = 0.2;
  double nd = 10.0;
  double ts = 0.01;
  bool anti_windup = true;
  bool saturation = true;              // steer bound from the front slip limit
  double alpha_max = deg2rad(9.10);
  double lf = 1.48;                    // nominal CoM to front axle [m]

  void validate() const;
};

/// Tustin-discretized PID with a first-order filtered derivative and
/// conditional integration.
class Pid {
 public:
  Pid(PidGains gains, double nd, double ts, bool anti_windup = true);

  /// Output for error `e`, clamped to [lower, upper].
  double step(double e, double lower = -std::numeric_limits<double>::infinity(),
              double upper = std::numeric_limits<double>::infinity());
  void reset();

  double integral() const { return integral_; }
  const PidGains& gains() const { return gains_; }
  /// Discrete transfer function of the unsaturated law in z.
  signal::TransferFunction discrete() const;

 private:
  PidGains gains_;
  double ts_;
  bool anti_windup_;
  double ki_step_ = 0.0;   // k_p ts / (2 T_I)
  double d_pole_ = 0.0;    // (c tau - 1)/(c tau + 1)
  double d_gain_ = 0.0;    // k_p T_D c / (1 + c tau)
  double integral_ = 0.0;
  double derivative_ = 0.0;
  double prev_error_ = 0.0;
};

struct SteerBounds {
  double lower = 0.0;
  double upper = 0.0;
};

/// Range of s_delta keeping the total command inside the steer interval
/// beta + l_f r / v_x -/+ alpha_max at the current measurement.
SteerBounds delta_saturation(double twin_command, const dynamics::Measurement& meas, double lf, double alpha_max);

/// Driver inputs at the control rate.
struct Maneuver {
  std::string name;
  double ts = 0.01;
  double v0 = 0.0;                    // initial speed [m/s]
  std::vector<double> steer_request;  // [rad]
  std::vector<double> ax;             // [m/s^2]

  std::size_t samples() const { return steer_request.size(); }
  double duration() const { return ts * static_cast<double>(samples()); }
  void validate() const;
};

/// Nominal loop: reference generator and MPC acting on the twin. It does
/// not depend on the compensator gains, so one run serves every vehicle run.
struct TwinRun {
  std::vector<double> t;
  std::vector<double> r_ref;
  std::vector<double> command;  // s~_cmd
  std::vector<double> beta;
  std::vector<double> yaw_rate;
  std::vector<double> steer;    // twin s_act
  std::vector<double> vx;
  std::vector<double> ax;
  std::vector<double> mixed;    // eps~
  std::vector<mpc::MpcStep> mpc;
};

enum class Mode {
  MpcOnTwin,             // twin only; vehicle columns repeat the twin
  MpcOnVehicle,          // nominal MPC closed on the noisy vehicle
  MpcOpenLoopOnVehicle,  // twin command applied to the vehicle, no compensator
  Til,                   // twin command plus the compensator
  Excitation,            // twin command plus a prescribed s_delta sequence
};

const char* to_string(Mode mode);
Mode mode_from_string(const std::string& name);

struct TilTrace {
  Mode mode = Mode::Til;
  std::vector<double> t;
  std::vector<double> twin_yaw_rate;
  std::vector<double> twin_beta;
  std::vector<double> twin_command;
  std::vector<double> yaw_rate;   // true vehicle state
  std::vector<double> beta;
  std::vector<double> meas_yaw_rate;
  std::vector<double> meas_beta;
  std::vector<double> command;    // s_cmd
  std::vector<double> steer;      // s_act
  std::vector<double> delta;      // s_delta after saturation
  std::vector<double> twin_mixed; // eps~
  std::vector<double> mixed;      // eps from measurements
  std::vector<double> error;      // y_eps = eps~ - eps
  std::vector<double> vx;
  bool diverged = false;
  std::string failure;            // set when the vehicle run stopped early

  std::size_t size() const { return t.size(); }
};

void write_trace_csv(std::ostream& out, const TilTrace& trace);

struct TilSetup {
  dynamics::VehicleParams nominal;
  dynamics::ActuatorParams actuator;
  dynamics::PlantPerturbation perturbation;
  mpc::MpcConfig mpc;
  CompensatorConfig compensator;
  double ref_cutoff_hz = 6.3;
  double plant_dt = 1e-3;
  double divergence_beta = deg2rad(45.0);  // runs beyond this |beta| are stopped
};

/// Owns the twin/vehicle pair for one maneuver. The twin run is computed on
/// first use and reused.
class TilSystem {
 public:
  TilSystem(TilSetup setup, refgen::StaticYawMap map, Maneuver maneuver);

  const TwinRun& twin() const;

  /// Vehicle run in `mode`. `gains` is used in Til mode, `excitation` in
  /// Excitation mode (one sample per control period). `noise_seed` seeds the
  /// vehicle sensor.
  TilTrace run(Mode mode, const PidGains& gains, std::uint64_t noise_seed,
               const std::vector<double>* excitation = nullptr) const;

  /// Til mode with twin and vehicle advanced together in one loop, without
  /// the cached twin run.
  TilTrace run_live(const PidGains& gains, std::uint64_t noise_seed) const;

  const TilSetup& setup() const { return setup_; }
  const Maneuver& maneuver() const { return maneuver_; }
  const dynamics::Plant& twin_plant() const { return twin_plant_; }
  const dynamics::Plant& vehicle_plant() const { return vehicle_plant_; }
  const refgen::StaticYawMap& map() const { return map_; }

 private:
  TwinRun simulate_twin() const;
  void advance(dynamics::VehicleState& state, double command, double ax, const dynamics::Plant& plant) const;

  TilSetup setup_;
  refgen::StaticYawMap map_;
  Maneuver maneuver_;
  dynamics::Plant twin_plant_;
  dynamics::Plant vehicle_plant_;
  mutable std::optional<TwinRun> twin_cache_;
};

}  // namespace tiltune::til
