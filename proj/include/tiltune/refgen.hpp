#pragma once

#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "tiltune/dynamics.hpp"
#include "tiltune/signal.hpp"

namespace tiltune::refgen {

/// Steady-state yaw rate of the nominal vehicle on a (speed, steer) grid,
/// saturated at the largest value reachable at each speed. Only non-negative
/// steer is stored; negative steer is served by odd symmetry.
class StaticYawMap {
 public:
  StaticYawMap() = default;
  StaticYawMap(std::vector<double> speeds, std::vector<double> steers, Eigen::MatrixXd table);

  /// Bilinear lookup. Speed and |steer| are clamped to the grid hull.
  double lookup(double steer, double vx) const;

  const std::vector<double>& speeds() const { return speeds_; }
  const std::vector<double>& steers() const { return steers_; }
  /// rows: speeds, columns: steers [rad/s]
  const Eigen::MatrixXd& table() const { return table_; }

  /// speed,steer,yaw_rate triples, one per line, with a header.
  void write_csv(std::ostream& out) const;
  static StaticYawMap read_csv(std::istream& in);

 private:
  std::vector<double> speeds_;
  std::vector<double> steers_;
  Eigen::MatrixXd table_;
};

/// 30..220 km/h in 10 km/h steps [m/s].
std::vector<double> default_speed_grid();
/// 0..20 deg in 0.25 deg steps [rad].
std::vector<double> default_steer_grid();

/// Runs the constant-steer steady state at every grid point (continuation
/// along steer) and applies the running maximum per speed.
/// Throws ConvergenceError naming the grid point that failed.
StaticYawMap build_static_map(const dynamics::VehicleParams& twin, const std::vector<double>& speeds,
                              const std::vector<double>& steers);

double static_reference(const StaticYawMap& map, double steer, double vx);

/// Unit-gain two-pole low pass w^2/(s + w)^2, Tustin discretized with
/// prewarping at its corner frequency.
class RefFilter {
 public:
  RefFilter(double cutoff_hz, double ts);

  double step(double r_static);
  /// Resets to the equilibrium for a constant input.
  void reset(double value = 0.0);
  const signal::TransferFunction& discrete() const { return tf_; }

 private:
  signal::TransferFunction tf_;
  signal::DiscreteFilter filter_;
};

/// Static map followed by the filter; one call per control period.
class ReferenceGenerator {
 public:
  ReferenceGenerator(StaticYawMap map, double cutoff_hz, double ts);

  double step(double steer_request, double vx);
  void reset(double steer_request, double vx);
  const StaticYawMap& map() const { return map_; }

 private:
  StaticYawMap map_;
  RefFilter filter_;
};

}  // namespace tiltune::refgen
