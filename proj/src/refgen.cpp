#include "tiltune/refgen.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace tiltune::refgen {

namespace {

void check_grid(const std::vector<double>& grid, const char* what) {
  if (grid.size() < 2) throw ConfigError(std::string(what) + " grid needs at least two nodes");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw ConfigError(std::string(what) + " grid must be strictly increasing");
}

// Index i and weight w such that x ~ grid[i] (1 - w) + grid[i+1] w, clamped.
std::pair<std::size_t, double> locate(const std::vector<double>& grid, double x) {
  if (x <= grid.front()) return {0, 0.0};
  if (x >= grid.back()) return {grid.size() - 2, 1.0};
  const auto it = std::upper_bound(grid.begin(), grid.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - grid.begin()) - 1;
  return {i, (x - grid[i]) / (grid[i + 1] - grid[i])};
}

}  // namespace

StaticYawMap::StaticYawMap(std::vector<double> speeds, std::vector<double> steers, Eigen::MatrixXd table)
    : speeds_(std::move(speeds)), steers_(std::move(steers)), table_(std::move(table)) {
  check_grid(speeds_, "speed");
  check_grid(steers_, "steer");
  if (steers_.front() < 0.0) throw ConfigError("steer grid must start at or above zero");
  if (table_.rows() != static_cast<Eigen::Index>(speeds_.size()) ||
      table_.cols() != static_cast<Eigen::Index>(steers_.size()))
    throw ConfigError("yaw map table does not match its grids");
}

double StaticYawMap::lookup(double steer, double vx) const {
  const double sign = steer < 0.0 ? -1.0 : 1.0;
  const auto [i, wi] = locate(speeds_, vx);
  const auto [j, wj] = locate(steers_, std::abs(steer));
  const auto ii = static_cast<Eigen::Index>(i);
  const auto jj = static_cast<Eigen::Index>(j);
  const double low = table_(ii, jj) * (1.0 - wj) + table_(ii, jj + 1) * wj;
  const double high = table_(ii + 1, jj) * (1.0 - wj) + table_(ii + 1, jj + 1) * wj;
  return sign * (low * (1.0 - wi) + high * wi);
}

void StaticYawMap::write_csv(std::ostream& out) const {
  const auto old = out.precision(17);
  out << "speed,steer,yaw_rate\n";
  for (std::size_t i = 0; i < speeds_.size(); ++i)
    for (std::size_t j = 0; j < steers_.size(); ++j)
      out << speeds_[i] << ',' << steers_[j] << ','
          << table_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << '\n';
  out.precision(old);
}

StaticYawMap StaticYawMap::read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty yaw map file");
  std::vector<double> speeds, steers, values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    double v[3];
    char comma;
    if (!(row >> v[0] >> comma >> v[1] >> comma >> v[2])) throw ConfigError("malformed yaw map row: " + line);
    if (speeds.empty() || speeds.back() != v[0]) speeds.push_back(v[0]);
    if (speeds.size() == 1) steers.push_back(v[1]);
    values.push_back(v[2]);
  }
  if (values.size() != speeds.size() * steers.size()) throw ConfigError("yaw map file is not a full grid");
  Eigen::MatrixXd table(static_cast<Eigen::Index>(speeds.size()), static_cast<Eigen::Index>(steers.size()));
  for (Eigen::Index i = 0; i < table.rows(); ++i)
    for (Eigen::Index j = 0; j < table.cols(); ++j)
      table(i, j) = values[static_cast<std::size_t>(i * table.cols() + j)];
  return {std::move(speeds), std::move(steers), std::move(table)};
}

std::vector<double> default_speed_grid() {
  std::vector<double> out;
  for (int kmh = 30; kmh <= 220; kmh += 10) out.push_back(kmh2ms(kmh));
  return out;
}

std::vector<double> default_steer_grid() {
  std::vector<double> out;
  for (int k = 0; k <= 80; ++k) out.push_back(deg2rad(0.25 * k));
  return out;
}

StaticYawMap build_static_map(const dynamics::VehicleParams& twin, const std::vector<double>& speeds,
                              const std::vector<double>& steers) {
  check_grid(speeds, "speed");
  check_grid(steers, "steer");
  if (speeds.front() <= 0.0) throw ConfigError("map speeds must be positive");
  Eigen::MatrixXd table(static_cast<Eigen::Index>(speeds.size()), static_cast<Eigen::Index>(steers.size()));
  for (std::size_t i = 0; i < speeds.size(); ++i) {
    dynamics::SteadyState prev;
    bool have_prev = false;
    double running = 0.0;
    for (std::size_t j = 0; j < steers.size(); ++j) {
      dynamics::SteadyState ss;
      try {
        ss = dynamics::steady_state(twin, steers[j], speeds[i], have_prev ? &prev : nullptr);
      } catch (const ConvergenceError&) {
        std::ostringstream msg;
        msg << "static map: no steady state at v_x = " << speeds[i] << " m/s, steer = " << steers[j] << " rad";
        throw ConvergenceError(msg.str());
      }
      prev = ss;
      have_prev = true;
      running = std::max(running, ss.yaw_rate);
      table(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = running;
    }
  }
  return {speeds, steers, std::move(table)};
}

double static_reference(const StaticYawMap& map, double steer, double vx) { return map.lookup(steer, vx); }

RefFilter::RefFilter(double cutoff_hz, double ts) {
  if (!(cutoff_hz > 0.0)) throw ConfigError("reference filter cutoff must be positive");
  const double w = 2.0 * kPi * cutoff_hz;
  tf_ = signal::tustin(signal::double_pole_lowpass(cutoff_hz), ts, w);
  filter_ = signal::DiscreteFilter(tf_);
}

double RefFilter::step(double r_static) { return filter_.step(r_static); }

void RefFilter::reset(double value) { filter_.prime(value); }

ReferenceGenerator::ReferenceGenerator(StaticYawMap map, double cutoff_hz, double ts)
    : map_(std::move(map)), filter_(cutoff_hz, ts) {}

double ReferenceGenerator::step(double steer_request, double vx) {
  return filter_.step(map_.lookup(steer_request, vx));
}

void ReferenceGenerator::reset(double steer_request, double vx) { filter_.reset(map_.lookup(steer_request, vx)); }

}  // namespace tiltune::refgen
