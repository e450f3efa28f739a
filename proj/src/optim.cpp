#include "tiltune/optim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

namespace tiltune::opt {

void Box::validate() const {
  if (lower.empty()) throw ConfigError("search box has no dimensions");
  if (upper.size() != lower.size() || log_scale.size() != lower.size())
    throw DimensionError("search box: lower, upper and log_scale lengths differ");
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (!(upper[i] > lower[i])) throw ConfigError("search box: upper must exceed lower in every dimension");
    if (log_scale[i] && !(lower[i] > 0.0)) throw ConfigError("search box: log-scaled dimension needs lower > 0");
  }
}

std::vector<double> Box::to_unit(std::span<const double> theta) const {
  if (theta.size() != dim()) throw DimensionError("point dimension does not match the search box");
  std::vector<double> u(dim());
  for (std::size_t i = 0; i < dim(); ++i)
    u[i] = log_scale[i] ? std::log(theta[i] / lower[i]) / std::log(upper[i] / lower[i])
                        : (theta[i] - lower[i]) / (upper[i] - lower[i]);
  return u;
}

std::vector<double> Box::from_unit(std::span<const double> unit) const {
  if (unit.size() != dim()) throw DimensionError("point dimension does not match the search box");
  std::vector<double> t(dim());
  for (std::size_t i = 0; i < dim(); ++i) {
    const double u = std::clamp(unit[i], 0.0, 1.0);
    t[i] = log_scale[i] ? lower[i] * std::pow(upper[i] / lower[i], u) : lower[i] + u * (upper[i] - lower[i]);
  }
  return t;
}

bool Box::contains(std::span<const double> theta, double tol) const {
  if (theta.size() != dim()) return false;
  for (std::size_t i = 0; i < dim(); ++i) {
    const double span = upper[i] - lower[i];
    if (theta[i] < lower[i] - tol * span || theta[i] > upper[i] + tol * span) return false;
  }
  return true;
}

double best_feasible(std::span<const IterationRecord> history) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : history)
    if (r.feasible) best = std::min(best, r.f);
  return best;
}

std::size_t infeasible_count(std::span<const IterationRecord> history) {
  return static_cast<std::size_t>(std::count_if(history.begin(), history.end(), [](const auto& r) { return !r.feasible; }));
}

void write_history_csv(std::ostream& out, std::span<const IterationRecord> history,
                       const std::vector<std::string>& theta_names, bool with_timing) {
  const auto old = out.precision(17);
  out << "n";
  for (const auto& name : theta_names) out << ',' << name;
  out << ",f,g,feasible,failed,incumbent,phase";
  if (with_timing) out << ",selection_s";
  out << '\n';
  for (const auto& r : history) {
    if (r.theta.size() != theta_names.size()) throw DimensionError("history row and column names differ in length");
    out << r.n;
    for (double v : r.theta) out << ',' << v;
    out << ',' << r.f << ',' << r.g << ',' << (r.feasible ? 1 : 0) << ',' << (r.failed ? 1 : 0) << ',' << r.incumbent
        << ',' << r.phase;
    if (with_timing) out << ',' << r.selection_seconds;
    out << '\n';
  }
  out.precision(old);
}

namespace {

double radical_inverse(std::size_t index, unsigned base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (index > 0) {
    r += static_cast<double>(index % base) * f;
    index /= base;
    f *= inv;
  }
  return r;
}

unsigned nth_prime(std::size_t n) {
  static constexpr unsigned primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
  if (n >= std::size(primes)) throw DimensionError("halton sequence supports at most 16 dimensions");
  return primes[n];
}

}  // namespace

std::vector<std::vector<double>> halton(std::size_t count, std::size_t dim, std::uint64_t seed, std::size_t skip) {
  std::vector<double> shift(dim, 0.0);
  if (seed != 0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& s : shift) s = u(rng);
  }
  std::vector<std::vector<double>> pts(count, std::vector<double>(dim));
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t d = 0; d < dim; ++d) {
      double v = radical_inverse(i + skip, nth_prime(d)) + shift[d];
      pts[i][d] = v - std::floor(v);
    }
  return pts;
}

}  // namespace tiltune::opt
