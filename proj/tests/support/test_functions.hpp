#pragma once

#include <cmath>
#include <span>

#include "tiltune/common.hpp"
#include "tiltune/optim.hpp"

namespace oracle {

inline double branin(double x1, double x2) {
  using tiltune::kPi;
  const double b = 5.1 / (4.0 * kPi * kPi), c = 5.0 / kPi, t = 1.0 / (8.0 * kPi);
  const double q = x2 - b * x1 * x1 + c * x1 - 6.0;
  return q * q + 10.0 * (1.0 - t) * std::cos(x1) + 10.0;
}

/// Disc constraint that leaves one of the three Branin minima feasible.
inline double branin_disc(double x1, double x2) { return 50.0 - (x1 - 2.5) * (x1 - 2.5) - (x2 - 7.5) * (x2 - 7.5); }

inline tiltune::opt::Box branin_box() { return {{-5.0, 0.0}, {10.0, 15.0}, {false, false}}; }

inline tiltune::opt::Evaluation branin_eval(std::span<const double> x) {
  return {branin(x[0], x[1]), branin_disc(x[0], x[1]), false};
}

struct GridOracle {
  double optimum = 0.0;  // min f over feasible grid points
  double lipschitz_f = 0.0;  // max gradient norm on the grid, unit-cube metric
  double lipschitz_g = 0.0;
};

/// Brute-force scan on a (n+1)^2 grid of the unit square.
inline GridOracle branin_grid(int n) {
  GridOracle o;
  o.optimum = INFINITY;
  const double s = 15.0, h = 1e-6;
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j) {
      const double x1 = -5.0 + s * i / n, x2 = s * j / n;
      if (branin_disc(x1, x2) >= 0.0) o.optimum = std::fmin(o.optimum, branin(x1, x2));
      const double fx = (branin(x1 + h, x2) - branin(x1 - h, x2)) / (2.0 * h) * s;
      const double fy = (branin(x1, x2 + h) - branin(x1, x2 - h)) / (2.0 * h) * s;
      o.lipschitz_f = std::fmax(o.lipschitz_f, std::hypot(fx, fy));
      o.lipschitz_g = std::fmax(o.lipschitz_g, std::hypot(2.0 * (x1 - 2.5) * s, 2.0 * (x2 - 7.5) * s));
    }
  return o;
}

}  // namespace oracle
