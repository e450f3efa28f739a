#include "tiltune/vrft.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "tiltune/common.hpp"

namespace tiltune::vrft {

using signal::poly_add;
using signal::poly_mul;
using signal::poly_scale;
using signal::TransferFunction;

namespace {

std::vector<double> trimmed(const std::vector<double>& p) {
  std::size_t first = 0;
  while (first + 1 < p.size() && p[first] == 0.0) ++first;
  return {p.begin() + static_cast<std::ptrdiff_t>(first), p.end()};
}

double norm1(const std::vector<double>& p) {
  double s = 0.0;
  for (double c : p) s += std::abs(c);
  return s;
}

double polyval(const std::vector<double>& p, double x) {
  double acc = 0.0;
  for (double c : p) acc = acc * x + c;
  return acc;
}

// Synthetic division by (z - root); the remainder is dropped.
std::vector<double> deflate(const std::vector<double>& p, double root) {
  std::vector<double> q(p.size() - 1);
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    acc = acc * root + p[i];
    q[i] = acc;
  }
  return q;
}

bool is_stable(const TransferFunction& tf, double margin = 1e-12) {
  for (const auto& p : signal::poles(tf))
    if (!(std::abs(p) < 1.0 - margin)) return false;
  return true;
}

std::vector<double> z_power(int r) {
  std::vector<double> p(static_cast<std::size_t>(r) + 1, 0.0);
  p[0] = 1.0;
  return p;
}

TransferFunction series(const TransferFunction& a, const TransferFunction& b) {
  return {poly_mul(a.num, b.num), poly_mul(a.den, b.den)};
}

TransferFunction reduce(TransferFunction tf) {
  tf = cancel_common_root(std::move(tf), 1.0);
  return cancel_common_root(std::move(tf), -1.0);
}

std::size_t trim_samples(const FitConfig& config, double ts) {
  if (!(config.trim_seconds >= 0.0)) throw ConfigError("vrft trim time must be >= 0");
  return static_cast<std::size_t>(std::ceil(config.trim_seconds / ts - 1e-9));
}

struct Problem {
  Eigen::MatrixXd phi;
  Eigen::VectorXd target;
};

Problem assemble(const ExperimentData& data, const FilterSpec& spec, const FitConfig& config) {
  data.validate();
  const auto reg = build_regression(spec, config, data.ts);
  const std::size_t trim = trim_samples(config, data.ts);
  const std::size_t p = reg.regressors.size();
  if (data.size() < trim + p)
    throw DimensionError("vrft experiment has " + std::to_string(data.size()) + " samples, needs at least " +
                         std::to_string(trim + p) + " after trimming");
  const std::size_t rows = data.size() - trim;

  // Plant output seen by the compensator is -y_eps.
  std::vector<double> y(data.y_eps.size());
  std::transform(data.y_eps.begin(), data.y_eps.end(), y.begin(), [](double v) { return -v; });

  Problem out{Eigen::MatrixXd(rows, p), Eigen::VectorXd(rows)};
  for (std::size_t j = 0; j < p; ++j) {
    const auto col = signal::filter(reg.regressors[j], y);
    for (std::size_t i = 0; i < rows; ++i) out.phi(i, j) = col[trim + i];
  }
  const auto t = signal::filter(reg.target, data.s_delta);
  for (std::size_t i = 0; i < rows; ++i) out.target(i) = t[trim + i];
  return out;
}

std::vector<double> to_linear(const til::PidGains& g, Structure structure) {
  g.validate();
  const double ki = std::isinf(g.ti) ? 0.0 : g.kp / g.ti;
  if (structure == Structure::Pi) return {g.kp, ki};
  return {g.kp, ki, g.kp * g.td};
}

}  // namespace

TransferFunction cancel_common_root(TransferFunction tf, double root, double tol) {
  tf.num = trimmed(tf.num);
  tf.den = trimmed(tf.den);
  while (tf.num.size() > 1 && tf.den.size() > 1 &&
         std::abs(polyval(tf.num, root)) <= tol * norm1(tf.num) &&
         std::abs(polyval(tf.den, root)) <= tol * norm1(tf.den)) {
    tf.num = deflate(tf.num, root);
    tf.den = deflate(tf.den, root);
  }
  return tf;
}

FilterSpec FilterSpec::from_prototypes(double mr_cutoff_hz, double mw_cutoff_hz, double ts) {
  if (!(mr_cutoff_hz > 0.0) || !(mw_cutoff_hz > 0.0)) throw ConfigError("vrft filter cutoffs must be > 0");
  if (!(ts > 0.0)) throw ConfigError("vrft sample time must be > 0");
  const double nyquist = 0.5 / ts;
  if (mr_cutoff_hz >= nyquist || mw_cutoff_hz >= nyquist)
    throw ConfigError("vrft filter cutoffs must be below the Nyquist frequency");
  FilterSpec spec{signal::tustin(signal::first_order_lowpass(mr_cutoff_hz), ts, 2.0 * kPi * mr_cutoff_hz),
                  signal::tustin(signal::double_pole_lowpass(mw_cutoff_hz), ts, 2.0 * kPi * mw_cutoff_hz)};
  spec.validate();
  return spec;
}

void FilterSpec::validate() const {
  if (mr.num.empty() || mr.den.empty() || mw.num.empty() || mw.den.empty())
    throw ConfigError("vrft filters need numerator and denominator");
  if (mr.relative_degree() < 0 || mw.relative_degree() < 0) throw ConfigError("vrft filters must be proper");
  if (!is_stable(mr) || !is_stable(mw)) throw ConfigError("vrft filters must have poles inside the unit circle");
  const double dc = polyval(mr.num, 1.0) / polyval(mr.den, 1.0);
  if (!(std::abs(dc - 1.0) < 1e-9)) throw ConfigError("reference model must have unit DC gain");
}

void ExperimentData::validate() const {
  if (!(ts > 0.0)) throw ConfigError("experiment sample time must be > 0");
  if (s_delta.size() != y_eps.size()) throw DimensionError("experiment input and output lengths differ");
  for (std::size_t k = 0; k < s_delta.size(); ++k)
    if (!std::isfinite(s_delta[k]) || !std::isfinite(y_eps[k]))
      throw DomainError("experiment sample " + std::to_string(k) + " is not finite");
}

void write_experiment_csv(std::ostream& out, const ExperimentData& data) {
  data.validate();
  const auto old = out.precision(17);
  out << "t,s_delta,y_eps\n";
  for (std::size_t k = 0; k < data.size(); ++k)
    out << data.ts * static_cast<double>(k) << ',' << data.s_delta[k] << ',' << data.y_eps[k] << '\n';
  out.precision(old);
}

ExperimentData read_experiment_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("experiment csv is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,s_delta,y_eps") throw ConfigError("experiment csv header must be 't,s_delta,y_eps'");
  ExperimentData data;
  std::vector<double> t;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    double v[3];
    for (int i = 0; i < 3; ++i) {
      if (!std::getline(ss, field, ',')) throw ConfigError("experiment csv row " + std::to_string(row) + ": expected 3 fields");
      try {
        std::size_t used = 0;
        v[i] = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw ConfigError("experiment csv row " + std::to_string(row) + ": bad number '" + field + "'");
      }
    }
    t.push_back(v[0]);
    data.s_delta.push_back(v[1]);
    data.y_eps.push_back(v[2]);
  }
  if (t.size() >= 2) data.ts = t[1] - t[0];
  data.validate();
  return data;
}

std::vector<double> prbs(std::size_t n, double amplitude, std::size_t period, std::mt19937_64& rng) {
  if (n == 0) throw ConfigError("prbs length must be > 0");
  if (period == 0) throw ConfigError("prbs chip period must be > 0");
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) throw ConfigError("prbs amplitude must be finite and >= 0");
  std::uniform_int_distribution<unsigned> start(1, 511);
  unsigned state = start(rng);
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0 && k % period == 0) {
      const unsigned feedback = (state ^ (state >> 4)) & 1u;
      state = (state >> 1) | (feedback << 8);
    }
    out[k] = (state & 1u) ? -amplitude : amplitude;
  }
  return out;
}

ExperimentData collect_open_loop(const til::TilSystem& system, std::span<const double> excitation,
                                 std::uint64_t noise_seed) {
  const std::vector<double> seq(excitation.begin(), excitation.end());
  const auto trace = system.run(til::Mode::Excitation, til::PidGains{}, noise_seed, &seq);
  if (trace.diverged || !trace.failure.empty())
    throw ConvergenceError("open-loop experiment stopped early: " + trace.failure);
  return {system.maneuver().ts, trace.delta, trace.error};
}

Regression build_regression(const FilterSpec& spec, const FitConfig& config, double ts) {
  spec.validate();
  if (!(ts > 0.0)) throw ConfigError("vrft sample time must be > 0");
  if (config.structure == Structure::Pid && !(config.derivative_tau > 0.0))
    throw ConfigError("vrft derivative filter time constant must be > 0");

  const auto nr = trimmed(spec.mr.num);
  const auto dr = trimmed(spec.mr.den);
  Regression reg;
  reg.delay = spec.mr.relative_degree();
  const auto zr = z_power(reg.delay);

  // M_w (M_r^-1 - 1) z^-r
  const TransferFunction weighted_inverse = reduce(
      {poly_mul(spec.mw.num, poly_add(dr, poly_scale(nr, -1.0))), poly_mul(poly_mul(spec.mw.den, nr), zr)});

  const TransferFunction integral{{0.5 * ts, 0.5 * ts}, {1.0, -1.0}};
  reg.regressors.push_back(weighted_inverse);
  reg.regressors.push_back(reduce(series(integral, weighted_inverse)));
  if (config.structure == Structure::Pid) {
    const double c = 2.0 / ts;
    const double tau = config.derivative_tau;
    const TransferFunction derivative{{c, -c}, {1.0 + c * tau, 1.0 - c * tau}};
    reg.regressors.push_back(reduce(series(derivative, weighted_inverse)));
  }
  for (const auto& r : reg.regressors) {
    if (r.relative_degree() < 0) throw DesignError("vrft regressor filter is improper");
    if (!is_stable(r))
      throw DesignError("reference model inverse is unstable (M_r has zeros on or outside the unit circle)");
  }
  reg.target = {spec.mw.num, poly_mul(spec.mw.den, zr)};
  return reg;
}

FitResult fit_pid(const ExperimentData& data, const FilterSpec& spec, const FitConfig& config) {
  const auto prob = assemble(data, spec, config);
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(prob.phi);
  if (qr.rank() < prob.phi.cols())
    throw SingularityError("vrft regressor matrix has rank " + std::to_string(qr.rank()) + " < " +
                           std::to_string(prob.phi.cols()) + ": insufficient excitation");
  const Eigen::VectorXd theta = qr.solve(prob.target);

  FitResult out;
  out.linear.assign(theta.data(), theta.data() + theta.size());
  out.samples = static_cast<std::size_t>(prob.phi.rows());
  out.cost = (prob.target - prob.phi * theta).squaredNorm() / static_cast<double>(prob.phi.rows());

  const double kp = theta(0);
  const double ki = theta(1);
  const double kd = theta.size() > 2 ? theta(2) : 0.0;
  if (!(kp > 0.0)) throw DesignError("vrft produced k_p = " + std::to_string(kp) + " <= 0");
  if (ki < 0.0) throw DesignError("vrft produced negative T_I (k_i = " + std::to_string(ki) + ")");
  if (kd < 0.0) throw DesignError("vrft produced negative T_D (k_d = " + std::to_string(kd) + ")");
  out.gains.kp = kp;
  out.gains.ti = ki > 0.0 ? kp / ki : std::numeric_limits<double>::infinity();
  out.gains.td = kd / kp;
  return out;
}

double vrft_cost_linear(std::span<const double> linear, const ExperimentData& data, const FilterSpec& spec,
                        const FitConfig& config) {
  const auto prob = assemble(data, spec, config);
  if (linear.size() != static_cast<std::size_t>(prob.phi.cols()))
    throw DimensionError("vrft parameter vector has the wrong length");
  const Eigen::Map<const Eigen::VectorXd> theta(linear.data(), static_cast<Eigen::Index>(linear.size()));
  return (prob.target - prob.phi * theta).squaredNorm() / static_cast<double>(prob.phi.rows());
}

double vrft_cost(const til::PidGains& gains, const ExperimentData& data, const FilterSpec& spec,
                 const FitConfig& config) {
  const auto linear = to_linear(gains, config.structure);
  return vrft_cost_linear(linear, data, spec, config);
}

double bo_vrft_cost(std::span<const double> y_eps, const FilterSpec& spec) {
  if (y_eps.empty()) return 0.0;
  const auto shaped = signal::filter(series(spec.mw, spec.mr), y_eps);
  double s = 0.0;
  for (double v : shaped) s += v * v;
  return s / static_cast<double>(shaped.size());
}

}  // namespace tiltune::vrft
