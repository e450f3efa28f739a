#include "doctest.h"

#include <cmath>
#include <complex>
#include <random>
#include <sstream>
#include <vector>

#include "tiltune/dynamics.hpp"

using namespace tiltune;
using namespace tiltune::dynamics;

namespace {

// Brute-force maximizer of |F| on a fine grid followed by golden-section refinement.
double scan_peak(const TireParams& tire) {
  const double load = 1000.0;
  double best = 0.0;
  double best_alpha = 0.0;
  for (int i = 1; i < 15000; ++i) {
    const double alpha = i * 1e-4;
    const double f = std::abs(lateral_tire_force(alpha, load, tire));
    if (f > best) {
      best = f;
      best_alpha = alpha;
    }
  }
  double lo = best_alpha - 1e-4, hi = best_alpha + 1e-4;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int k = 0; k < 100; ++k) {
    const double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
    if (std::abs(lateral_tire_force(a, load, tire)) > std::abs(lateral_tire_force(b, load, tire)))
      hi = b;
    else
      lo = a;
  }
  return 0.5 * (lo + hi);
}

// Steady state parametrized by the yaw rate: the axle forces follow from the
// moment balance, each tire curve is inverted by bisection on the rising branch.
struct ClosedFormSteady {
  double steer;
  double beta;
};

double invert_tire(double force, double load, const TireParams& tire) {
  double lo = -peak_slip(tire), hi = peak_slip(tire);
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (lateral_tire_force(mid, load, tire) > force)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

ClosedFormSteady closed_form_steady(double r, double vx, const VehicleParams& p) {
  const double l = p.wheelbase();
  const double ff = p.mass * vx * r * p.lr / l;
  const double fr = p.mass * vx * r * p.lf / l;
  const auto loads = vertical_loads(vx, 0.0, p);
  const double af = invert_tire(ff, loads.front, p.front);
  const double ar = invert_tire(fr, loads.rear, p.rear);
  const double beta = ar + p.lr * r / vx;
  return {beta + p.lf * r / vx - af, beta};
}

VehicleState settle(const Plant& plant, double steer, double vx, double seconds) {
  auto s = VehicleState::straight(vx);
  s.actuator = ActuatorState::at_rest(steer, plant.actuator);
  const int n = static_cast<int>(seconds / 1e-3);
  for (int k = 0; k < n; ++k) s = vehicle_step(s, steer, 0.0, 1e-3, plant);
  return s;
}

}  // namespace

TEST_CASE("tire force: zero slip, odd symmetry, domain") {
  VehicleParams p;
  CHECK(lateral_tire_force(0.0, 5000.0, p.front) == 0.0);
  CHECK(lateral_tire_force(0.05, 5000.0, p.rear) == doctest::Approx(-lateral_tire_force(-0.05, 5000.0, p.rear)));
  CHECK_THROWS_AS(lateral_tire_force(kPi / 2, 5000.0, p.front), DomainError);
  CHECK_THROWS_AS(lateral_tire_force(0.1, -1.0, p.front), DomainError);
}

TEST_CASE("tire force: front peak slip near 9.10 deg") {
  VehicleParams p;
  const double scanned = scan_peak(p.front);
  CHECK(rad2deg(scanned) == doctest::Approx(9.035).epsilon(1e-3));
  CHECK(std::abs(rad2deg(scanned) - 9.10) / 9.10 < 0.01);
  CHECK(peak_slip(p.front) == doctest::Approx(scanned).epsilon(1e-6));
  CHECK(peak_slip(p.rear) == doctest::Approx(kPi / 2));
}

TEST_CASE("tire force: small-slip Taylor check at the static front load") {
  VehicleParams p;
  const double fz = 7453.2;
  const double f = lateral_tire_force(0.01, fz, p.front);
  const double linear = -fz * p.front.c * 0.01;
  CHECK(std::abs(f - linear) < 1e-2 * std::abs(linear));
  const double f2 = lateral_tire_force(0.005, fz, p.front);
  // Error of the linear model shrinks at least quadratically.
  CHECK(std::abs(f2 + fz * p.front.c * 0.005) < 0.3 * std::abs(f - linear));
}

TEST_CASE("slip angles") {
  VehicleParams p;
  auto s = axle_slip_angles(0.0, 0.0, 20.0, 0.0, p);
  CHECK(s.front == 0.0);
  CHECK(s.rear == 0.0);
  s = axle_slip_angles(0.01, 0.1, 33.3, 0.02, p);
  CHECK(s.front == doctest::Approx(-0.00556).epsilon(2e-3));
  CHECK(s.rear == doctest::Approx(0.00652).epsilon(2e-3));
  const double beta = 0.02, r = 0.3, v = 25.0;
  CHECK(axle_slip_angles(beta, r, v, beta + p.lf * r / v, p).front == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(axle_slip_angles(0.0, 0.0, 0.0, 0.0, p), SingularityError);
}

TEST_CASE("vertical loads") {
  VehicleParams p;
  auto z = vertical_loads(0.0, 0.0, p);
  CHECK(z.front == doctest::Approx(7453.2).epsilon(1e-5));
  CHECK(z.rear == doctest::Approx(9509.3).epsilon(1e-5));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> v(0.0, 70.0), a(-10.0, 10.0);
  for (int i = 0; i < 200; ++i) {
    const double vx = v(rng), ax = a(rng);
    const auto l = vertical_loads(vx, ax, p);
    const double expected = p.mass * p.gravity + (p.aero_front + p.aero_rear) * vx * vx;
    CHECK(std::abs(l.front + l.rear - expected) <= 1e-11 * expected);
    const auto l0 = vertical_loads(vx, 0.0, p);
    CHECK(l0.front - l.front == doctest::Approx(p.load_transfer * ax));
    CHECK(l.rear - l0.rear == doctest::Approx(p.load_transfer * ax));
  }
}

TEST_CASE("actuator: unit DC gain") {
  ActuatorParams a;
  ActuatorState s;
  const double cmd = deg2rad(2.0);
  for (int k = 0; k < 3000; ++k) s = actuator_step(s, cmd, 1e-3, a);
  CHECK(s.position == doctest::Approx(cmd).epsilon(1e-9));
  const auto rest = ActuatorState::at_rest(cmd, a);
  const auto next = actuator_step(rest, cmd, 1e-3, a);
  CHECK(next.position == doctest::Approx(cmd).epsilon(1e-12));
}

TEST_CASE("actuator: rate limited ramp") {
  ActuatorParams a;
  ActuatorState s;
  const double dt = 1e-3;
  const double slope = deg2rad(150.0);
  std::vector<double> pos;
  for (int k = 1; k <= 150; ++k) {
    s = actuator_step(s, slope * k * dt, dt, a);
    pos.push_back(s.position);
  }
  // Once the linear loop catches up with the ramp the limiter sets the slope.
  const double measured = (pos[149] - pos[99]) / (50 * dt);
  CHECK(measured == doctest::Approx(a.rate_limit).epsilon(1e-9));
}

TEST_CASE("actuator: third-order loop bandwidth") {
  ActuatorParams a;
  auto gain = [&](double w) {
    const std::complex<double> s(0.0, w);
    const auto num = (a.num[0] * s + a.num[1]) * s + a.num[2];
    const auto den = ((a.den[0] * s + a.den[1]) * s + a.den[2]) * s + a.den[3];
    return std::abs(num / den);
  };
  double lo = 1.0, hi = 1000.0;
  // |G| is above 1/sqrt(2) up to the crossing, below afterwards.
  for (int k = 0; k < 200; ++k) {
    const double mid = std::sqrt(lo * hi);
    if (gain(mid) > 1.0 / std::sqrt(2.0))
      lo = mid;
    else
      hi = mid;
  }
  CHECK(lo == doctest::Approx(77.2).epsilon(2e-3));
  CHECK(gain(1e-6) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("vehicle: zero-force equilibrium is preserved") {
  const auto plant = make_twin(VehicleParams{}, ActuatorParams{});
  auto s = VehicleState::straight(30.0);
  for (int k = 0; k < 5000; ++k) s = vehicle_step(s, 0.0, 0.0, 1e-3, plant);
  CHECK(s.beta == 0.0);
  CHECK(s.yaw_rate == 0.0);
  CHECK(s.steer() == 0.0);
}

TEST_CASE("vehicle: constant steer converges to the steady state") {
  const VehicleParams p;
  const auto plant = make_twin(p, ActuatorParams{});
  const double vx = kmh2ms(100.0);
  const double steer = deg2rad(1.0);
  const auto s = settle(plant, steer, vx, 20.0);
  const auto res = lateral_residual(s.beta, s.yaw_rate, vx, steer, p);
  CHECK(res.lpNorm<Eigen::Infinity>() < 1e-9);

  const auto ss = steady_state(p, steer, vx);
  CHECK(ss.beta == doctest::Approx(s.beta).epsilon(1e-7));
  CHECK(ss.yaw_rate == doctest::Approx(s.yaw_rate).epsilon(1e-7));
  CHECK(lateral_residual(ss.beta, ss.yaw_rate, vx, steer, p).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("steady state matches the yaw-rate parametrized closed form") {
  const VehicleParams p;
  for (double kmh : {40.0, 100.0, 160.0}) {
    const double vx = kmh2ms(kmh);
    SteadyState prev;
    for (double r : {0.02, 0.1, 0.2, 0.3}) {
      if (p.mass * vx * r * p.lr / p.wheelbase() > 0.95 * vertical_loads(vx, 0, p).front * p.front.c / (p.front.a * p.front.b))
        continue;
      const auto oracle = closed_form_steady(r, vx, p);
      const auto ss = steady_state(p, oracle.steer, vx, &prev);
      CHECK(ss.yaw_rate == doctest::Approx(r).epsilon(1e-9));
      CHECK(ss.beta == doctest::Approx(oracle.beta).epsilon(1e-8));
      prev = ss;
    }
  }
}

TEST_CASE("steady state: linear-range gain follows the understeer gradient") {
  const VehicleParams p;
  const double cf = 7453.2 * p.front.c, cr = 9509.3 * p.rear.c;
  for (double kmh : {50.0, 120.0, 200.0}) {
    const double vx = kmh2ms(kmh);
    const auto loads = vertical_loads(vx, 0.0, p);
    const double kf = loads.front * p.front.c, kr = loads.rear * p.rear.c;
    const double k_us = p.mass * (p.lr * kr - p.lf * kf) / (p.wheelbase() * kf * kr);
    const double steer = deg2rad(0.05);
    const auto ss = steady_state(p, steer, vx);
    const double linear = vx * steer / (p.wheelbase() + k_us * vx * vx);
    CHECK(ss.yaw_rate == doctest::Approx(linear).epsilon(1e-3));
  }
  (void)cf;
  (void)cr;
}

TEST_CASE("steady state: softer rear changes the yaw response") {
  const VehicleParams p;
  PlantPerturbation pert;
  pert.rear_stiffness_scale = 0.85;
  const auto q = apply_perturbation(p, pert);
  const double vx = kmh2ms(120.0), steer = deg2rad(1.0);
  const auto a = steady_state(p, steer, vx);
  const auto b = steady_state(q, steer, vx);
  CHECK(a.yaw_rate != doctest::Approx(b.yaw_rate).epsilon(1e-3));
  CHECK(b.yaw_rate > a.yaw_rate);
}

TEST_CASE("linearized tire") {
  const VehicleParams p;
  const double fz = 7000.0;
  auto lin = linearize_tire(0.0, fz, p.front);
  CHECK(lin.force == 0.0);
  CHECK(lin.stiffness == doctest::Approx(fz * p.front.c).epsilon(1e-14));

  for (double abar : {-0.2, -0.05, 0.0, 0.03, 0.1, 0.2}) {
    lin = linearize_tire(abar, fz, p.front);
    const double h = 1e-7;
    const double fd = -(lateral_tire_force(abar + h, fz, p.front) - lateral_tire_force(abar - h, fz, p.front)) / (2 * h);
    CHECK(std::abs(fd - lin.stiffness) <= 1e-6 * std::max(1.0, std::abs(lin.stiffness)) * 10);
    // Stored values are reproducible.
    const auto again = linearize_tire(lin.slip, lin.load, p.front);
    CHECK(again.force == lin.force);
    CHECK(again.stiffness == lin.stiffness);
    // Linear model error is second order.
    const double e1 = std::abs(lateral_tire_force(abar + 1e-3, fz, p.front) - (lin.force - lin.stiffness * 1e-3));
    const double e2 = std::abs(lateral_tire_force(abar + 5e-4, fz, p.front) - (lin.force - lin.stiffness * 5e-4));
    CHECK(e2 <= 0.3 * e1 + 1e-9);
  }

  const auto beyond = linearize_tire(deg2rad(12.0), fz, p.front);
  CHECK(beyond.stiffness < 0.0);
}

TEST_CASE("discrete model structure") {
  const VehicleParams p;
  Measurement m;
  m.vx = 30.0;
  const auto model = build_discrete_model(m, 0.0, p, 33.8, 0.01);
  CHECK(model.a(2, 2) == doctest::Approx(0.662).epsilon(1e-12));
  CHECK(model.b(2) == doctest::Approx(0.338));
  CHECK(model.b(0) == 0.0);
  CHECK(model.b(1) == 0.0);
  CHECK(model.c(1) == 1.0);
  const auto loads = vertical_loads(30.0, 0.0, p);
  const double cf = loads.front * p.front.c, cr = loads.rear * p.rear.c;
  CHECK(model.a(0, 0) == doctest::Approx(1.0 - 0.01 * (cf + cr) / (p.mass * 30.0)).epsilon(1e-14));
  CHECK(model.d.norm() == 0.0);
  m.vx = 0.0;
  CHECK_THROWS_AS(build_discrete_model(m, 0.0, p, 33.8, 0.01), SingularityError);
}

TEST_CASE("discrete model: one step is forward Euler of the linearized equations") {
  const VehicleParams p;
  Measurement m{0.25, 0.01, 0.02, 28.0, 0.5};
  const double omega = 33.8, ts = 0.01;
  const auto model = build_discrete_model(m, m.beta, p, omega, ts);
  const Eigen::Vector3d x0(0.012, 0.24, 0.021);
  const double u = 0.025;
  const Eigen::Vector3d x1 = model.a * x0 + model.b * u + model.e * model.d;

  // Linearized single-track equations with affine tire forces.
  const auto op = operating_point(m, m.beta, p);
  const double v = m.vx;
  auto ff = [&](double beta, double r, double s) {
    const double af = beta + p.lf * r / v - s;
    return op.front.force - op.front.stiffness * (af - op.front.slip);
  };
  auto fr = [&](double beta, double r) {
    const double ar = beta - p.lr * r / v;
    return op.rear.force - op.rear.stiffness * (ar - op.rear.slip);
  };
  const double fyf = ff(x0(0), x0(1), x0(2)), fyr = fr(x0(0), x0(1));
  Eigen::Vector3d euler;
  euler(0) = x0(0) + ts * ((fyf + fyr) / (p.mass * v) - x0(1));
  euler(1) = x0(1) + ts * (p.lf * fyf - p.lr * fyr) / p.yaw_inertia;
  euler(2) = x0(2) + ts * omega * (u - x0(2));
  CHECK((x1 - euler).norm() < 1e-14);
}

TEST_CASE("discrete model: prediction error vs the nonlinear plant is second order") {
  const VehicleParams p;
  const double vx = 30.0;
  const auto ss = steady_state(p, deg2rad(1.0), vx);
  auto err = [&](double ts, double scale) {
    Measurement m{ss.yaw_rate, ss.beta, deg2rad(1.0), vx, 0.0};
    // First-order actuator in the plant so the only mismatch is the discretization.
    const auto model = build_discrete_model(m, ss.beta, p, 33.8, ts);
    const Eigen::Vector3d x0(ss.beta + 0.01 * scale, ss.yaw_rate + 0.02 * scale, deg2rad(1.0));
    const Eigen::Vector3d x1 = model.a * x0 + model.b * deg2rad(1.0) + model.e * model.d;
    // Fine integration of the nonlinear ODE with the steer held.
    double beta = x0(0), r = x0(1);
    const int n = 1000;
    const double h = ts / n;
    for (int k = 0; k < n; ++k) {
      const auto res = lateral_residual(beta, r, vx, deg2rad(1.0), p);
      beta += h * res(0);
      r += h * res(1);
    }
    return std::hypot(x1(0) - beta, x1(1) - r);
  };
  const double base = err(0.01, 1.0);
  CHECK(err(0.005, 1.0) < 0.3 * base);
  CHECK(err(0.005, 0.5) < 0.3 * base);
}

TEST_CASE("perturbation") {
  const VehicleParams p;
  const auto same = apply_perturbation(p, PlantPerturbation{});
  CHECK(same.mass == p.mass);
  CHECK(same.yaw_inertia == p.yaw_inertia);
  CHECK(same.lf == p.lf);
  CHECK(same.lr == p.lr);
  CHECK(same.load_transfer == p.load_transfer);
  CHECK(same.rear.c == p.rear.c);

  const auto pert = PlantPerturbation::reference();
  const auto q = apply_perturbation(p, pert);
  CHECK(q.mass == doctest::Approx(1909.1));
  CHECK(q.lf + q.lr == doctest::Approx(p.lf + p.lr));
  CHECK(q.lf < p.lf);
  CHECK(q.yaw_inertia > p.yaw_inertia);
  CHECK(linearize_tire(0.0, 9000.0, q.rear).stiffness ==
        doctest::Approx(0.85 * linearize_tire(0.0, 9000.0, p.rear).stiffness).epsilon(1e-15));

  // Inertia about the new CoM equals the sum of point-mass terms about any origin.
  double total = p.mass, mx = 0.0;
  for (const auto& m : pert.added_masses) {
    total += m.mass;
    mx += m.mass * m.x;
  }
  double my = 0.0;
  for (const auto& m : pert.added_masses) my += m.mass * m.y;
  const double xc = mx / total, yc = my / total;
  double j0 = p.yaw_inertia;
  for (const auto& m : pert.added_masses) j0 += m.mass * (m.x * m.x + m.y * m.y);
  CHECK(q.yaw_inertia == doctest::Approx(j0 - total * (xc * xc + yc * yc)).epsilon(1e-12));

  PlantPerturbation bad;
  bad.added_masses = {{5000.0, 3.0, 0.0}};
  CHECK_THROWS_AS(apply_perturbation(p, bad), ConfigError);
  bad = PlantPerturbation{};
  bad.rear_stiffness_scale = 1.2;
  CHECK_THROWS_AS(apply_perturbation(p, bad), ConfigError);
}

TEST_CASE("sensor") {
  VehicleState s = VehicleState::straight(30.0);
  s.beta = 0.01;
  s.yaw_rate = 0.2;
  s.ax = 1.0;
  Sensor exact(NoiseConfig{}, 0.01, 1);
  const auto m = exact.measure(s);
  CHECK(m.beta == s.beta);
  CHECK(m.yaw_rate == s.yaw_rate);
  CHECK(m.vx == s.vx);
  CHECK(m.ax == s.ax);

  Sensor noisy(NoiseConfig{0.006, 0.0044, 5.0}, 0.01, 42);
  const int n = 100000;
  double sr = 0.0, sr2 = 0.0, sb = 0.0, sb2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto z = noisy.measure(s);
    const double er = z.yaw_rate - s.yaw_rate, eb = z.beta - s.beta;
    sr += er;
    sr2 += er * er;
    sb += eb;
    sb2 += eb * eb;
  }
  const double std_r = std::sqrt(sr2 / n - (sr / n) * (sr / n));
  const double std_b = std::sqrt(sb2 / n - (sb / n) * (sb / n));
  CHECK(std::abs(std_r - 0.006) < 0.03 * 0.006);
  CHECK(std::abs(std_b - 0.0044) < 0.05 * 0.0044);
}

TEST_CASE("invariants: actuator limits and determinism along a random trajectory") {
  const auto plant = make_vehicle(VehicleParams{}, ActuatorParams{}, PlantPerturbation::reference());
  auto run = [&](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-deg2rad(30.0), deg2rad(30.0));
    auto s = VehicleState::straight(25.0);
    std::vector<double> trace;
    double cmd = 0.0;
    for (int k = 0; k < 4000; ++k) {
      if (k % 37 == 0) cmd = u(rng);
      const auto next = vehicle_step(s, cmd, 0.5, 1e-3, plant);
      CHECK(std::abs(next.steer()) <= plant.actuator.position_limit);
      CHECK(std::abs(next.steer() - s.steer()) <= plant.actuator.rate_limit * 1e-3 + 1e-12);
      s = next;
      trace.push_back(s.beta);
      trace.push_back(s.yaw_rate);
    }
    return trace;
  };
  CHECK(run(7) == run(7));
}

TEST_CASE("trace export") {
  const VehicleParams p;
  std::vector<TraceSample> rows{{0.0, VehicleState::straight(20.0), 0.0}, {0.01, VehicleState::straight(20.0), 0.01}};
  std::ostringstream out;
  write_trace_csv(out, rows, p);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,beta,r,vx,ax,s_cmd,s_act,alpha_f,alpha_r,fz_f,fz_r");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 2);
}
