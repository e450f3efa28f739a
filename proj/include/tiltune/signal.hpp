#pragma once

#include <complex>
#include <span>
#include <vector>

namespace tiltune::signal {

/// Rational transfer function. Coefficients are in descending powers of the
/// transform variable (s or z); `num` and `den` may have different lengths.
struct TransferFunction {
  std::vector<double> num;
  std::vector<double> den;

  std::complex<double> evaluate(std::complex<double> x) const;
  /// Relative degree deg(den) - deg(num) after trimming leading zeros.
  int relative_degree() const;
};

/// Product of polynomials given in descending powers.
std::vector<double> poly_mul(std::span<const double> a, std::span<const double> b);
std::vector<double> poly_add(std::span<const double> a, std::span<const double> b);
std::vector<double> poly_scale(std::span<const double> a, double k);

/// Bilinear (Tustin) map of a continuous transfer function,
/// s = c (z - 1)/(z + 1) with c = 2/ts, or c = w/tan(w ts/2) when a prewarp
/// frequency w [rad/s] is given so that the response at w is preserved.
TransferFunction tustin(const TransferFunction& continuous, double ts, double prewarp = 0.0);

/// Discrete response H(e^{j w ts}).
std::complex<double> frequency_response(const TransferFunction& discrete, double omega, double ts);

/// Two-pole unity-gain low pass w^2/(s + w)^2 with w = 2 pi f.
TransferFunction double_pole_lowpass(double cutoff_hz);
/// First-order unity-gain low pass w/(s + w).
TransferFunction first_order_lowpass(double cutoff_hz);

/// Direct form II transposed realization of a causal discrete transfer function.
class DiscreteFilter {
 public:
  DiscreteFilter() = default;
  explicit DiscreteFilter(const TransferFunction& tf);

  double step(double input);
  void reset();
  /// Sets the internal state to the equilibrium for a constant `input`.
  void prime(double input);
  /// Sum(b)/Sum(a).
  double dc_gain() const;
  std::vector<double> apply(std::span<const double> input);

  const std::vector<double>& b() const { return b_; }
  const std::vector<double>& a() const { return a_; }

 private:
  std::vector<double> b_;  // normalized by a_[0], padded to the order
  std::vector<double> a_;
  std::vector<double> state_;
};

/// Filters a whole sequence from rest.
std::vector<double> filter(const TransferFunction& tf, std::span<const double> input);

/// Root-mean-square of a sequence (0 for empty input).
double rms(std::span<const double> values);

/// Poles of a discrete transfer function (roots of the denominator).
std::vector<std::complex<double>> poles(const TransferFunction& tf);

}  // namespace tiltune::signal
