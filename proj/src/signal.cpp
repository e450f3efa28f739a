#include "tiltune/signal.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tiltune/common.hpp"

namespace tiltune::signal {

namespace {

std::vector<double> trim_leading_zeros(std::span<const double> p) {
  std::size_t first = 0;
  while (first + 1 < p.size() && p[first] == 0.0) ++first;
  return {p.begin() + static_cast<std::ptrdiff_t>(first), p.end()};
}

std::complex<double> polyval(std::span<const double> p, std::complex<double> x) {
  std::complex<double> acc = 0.0;
  for (double c : p) acc = acc * x + c;
  return acc;
}

std::vector<double> poly_pow(std::span<const double> p, int n) {
  std::vector<double> out{1.0};
  for (int i = 0; i < n; ++i) out = poly_mul(out, p);
  return out;
}

}  // namespace

std::complex<double> TransferFunction::evaluate(std::complex<double> x) const {
  return polyval(num, x) / polyval(den, x);
}

int TransferFunction::relative_degree() const {
  auto n = trim_leading_zeros(num);
  auto d = trim_leading_zeros(den);
  return static_cast<int>(d.size()) - static_cast<int>(n.size());
}

std::vector<double> poly_mul(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

std::vector<double> poly_add(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = std::max(a.size(), b.size());
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) out[n - a.size() + i] += a[i];
  for (std::size_t i = 0; i < b.size(); ++i) out[n - b.size() + i] += b[i];
  return out;
}

std::vector<double> poly_scale(std::span<const double> a, double k) {
  std::vector<double> out(a.begin(), a.end());
  for (double& c : out) c *= k;
  return out;
}

TransferFunction tustin(const TransferFunction& continuous, double ts, double prewarp) {
  if (ts <= 0.0) throw DomainError("tustin: sample time must be positive");
  const double c = prewarp > 0.0 ? prewarp / std::tan(prewarp * ts / 2.0) : 2.0 / ts;
  const auto num = trim_leading_zeros(continuous.num);
  const auto den = trim_leading_zeros(continuous.den);
  const int order = static_cast<int>(std::max(num.size(), den.size())) - 1;

  // sum_i p_i s^(deg-i)  ->  sum_i p_i c^k (z-1)^k (z+1)^(order-k)
  const std::vector<double> zm1{1.0, -1.0};
  const std::vector<double> zp1{1.0, 1.0};
  auto map = [&](const std::vector<double>& p) {
    std::vector<double> out(static_cast<std::size_t>(order) + 1, 0.0);
    const int deg = static_cast<int>(p.size()) - 1;
    for (int i = 0; i <= deg; ++i) {
      const int k = deg - i;
      auto term = poly_mul(poly_pow(zm1, k), poly_pow(zp1, order - k));
      term = poly_scale(term, p[static_cast<std::size_t>(i)] * std::pow(c, k));
      out = poly_add(out, term);
    }
    return out;
  };
  return {map(num), map(den)};
}

std::complex<double> frequency_response(const TransferFunction& discrete, double omega, double ts) {
  return discrete.evaluate(std::polar(1.0, omega * ts));
}

TransferFunction double_pole_lowpass(double cutoff_hz) {
  const double w = 2.0 * kPi * cutoff_hz;
  return {{w * w}, {1.0, 2.0 * w, w * w}};
}

TransferFunction first_order_lowpass(double cutoff_hz) {
  const double w = 2.0 * kPi * cutoff_hz;
  return {{w}, {1.0, w}};
}

DiscreteFilter::DiscreteFilter(const TransferFunction& tf) {
  const auto num = trim_leading_zeros(tf.num);
  const auto den = trim_leading_zeros(tf.den);
  if (den.empty() || den.front() == 0.0) throw DomainError("filter: empty denominator");
  if (num.size() > den.size()) throw DomainError("filter: improper transfer function");
  const std::size_t order = den.size() - 1;
  b_.assign(order + 1, 0.0);
  a_.assign(order + 1, 0.0);
  for (std::size_t i = 0; i < num.size(); ++i) b_[order + 1 - num.size() + i] = num[i] / den.front();
  for (std::size_t i = 0; i <= order; ++i) a_[i] = den[i] / den.front();
  state_.assign(order, 0.0);
}

double DiscreteFilter::step(double input) {
  if (a_.empty()) return input;
  const double out = b_[0] * input + (state_.empty() ? 0.0 : state_[0]);
  const std::size_t order = state_.size();
  for (std::size_t i = 0; i < order; ++i) {
    const double next = i + 1 < order ? state_[i + 1] : 0.0;
    state_[i] = next + b_[i + 1] * input - a_[i + 1] * out;
  }
  return out;
}

void DiscreteFilter::reset() { std::fill(state_.begin(), state_.end(), 0.0); }

double DiscreteFilter::dc_gain() const {
  double nb = 0.0, na = 0.0;
  for (double v : b_) nb += v;
  for (double v : a_) na += v;
  if (na == 0.0) throw DomainError("filter: pole at z = 1, no finite DC gain");
  return nb / na;
}

void DiscreteFilter::prime(double input) {
  const double out = dc_gain() * input;
  const std::size_t order = state_.size();
  for (std::size_t i = 0; i < order; ++i) {
    double acc = 0.0;
    for (std::size_t j = i + 1; j <= order; ++j) acc += b_[j] * input - a_[j] * out;
    state_[i] = acc;
  }
}

std::vector<double> DiscreteFilter::apply(std::span<const double> input) {
  std::vector<double> out;
  out.reserve(input.size());
  for (double x : input) out.push_back(step(x));
  return out;
}

std::vector<double> filter(const TransferFunction& tf, std::span<const double> input) {
  DiscreteFilter f(tf);
  return f.apply(input);
}

double rms(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double acc = 0.0;
  for (double v : values) acc += v * v;
  return std::sqrt(acc / static_cast<double>(values.size()));
}

std::vector<std::complex<double>> poles(const TransferFunction& tf) {
  const auto den = trim_leading_zeros(tf.den);
  const int n = static_cast<int>(den.size()) - 1;
  if (n <= 0) return {};
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j) companion(0, j) = -den[static_cast<std::size_t>(j) + 1] / den[0];
  for (int i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(companion);
  std::vector<std::complex<double>> out;
  for (int i = 0; i < n; ++i) out.push_back(es.eigenvalues()(i));
  return out;
}

}  // namespace tiltune::signal
