#include "tiltune/maneuver.hpp"

#include <algorithm>
#include <cmath>

namespace tiltune::harness {

namespace {

std::size_t samples_for(double seconds, double ts) { return static_cast<std::size_t>(std::lround(seconds / ts)); }

}  // namespace

til::Maneuver double_lane_change_step(double speed_kmh, double amplitude, double ts, DlcShape shape) {
  if (!(ts > 0.0) || !(shape.lobe_hz > 0.0)) throw ConfigError("lane change: ts and lobe frequency must be > 0");
  til::Maneuver m;
  m.name = "dlc-step-" + std::to_string(static_cast<int>(std::lround(speed_kmh)));
  m.ts = ts;
  m.v0 = kmh2ms(speed_kmh);
  const double period = 1.0 / shape.lobe_hz;
  const double total = shape.straight + period + shape.pause + shape.hold;
  const std::size_t n = samples_for(total, ts);
  m.steer_request.assign(n, 0.0);
  m.ax.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * ts;
    const double tl = t - shape.straight;
    if (tl >= 0.0 && tl < period)
      m.steer_request[k] = amplitude * std::sin(2.0 * kPi * shape.lobe_hz * tl);
    else if (tl >= period + shape.pause)
      m.steer_request[k] = amplitude * shape.step_ratio;
  }
  return m;
}

til::Maneuver chicane(double speed_kmh, double amplitude, double ts, ChicaneShape shape) {
  if (!(ts > 0.0) || !(shape.lobe > 0.0) || !(shape.ramp > 0.0)) throw ConfigError("chicane: durations must be > 0");
  til::Maneuver m;
  m.name = "chicane-" + std::to_string(static_cast<int>(std::lround(speed_kmh)));
  m.ts = ts;
  m.v0 = kmh2ms(speed_kmh);
  const double total = shape.straight + 2.0 * shape.lobe + shape.tail;
  const std::size_t n = samples_for(total, ts);
  m.steer_request.assign(n, 0.0);
  m.ax.assign(n, 0.0);
  const double accel_start = shape.straight + 1.5 * shape.lobe;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * ts;
    const double tl = t - shape.straight;
    if (tl >= 0.0 && tl < 2.0 * shape.lobe) {
      const double sign = tl < shape.lobe ? 1.0 : -1.0;
      m.steer_request[k] = sign * amplitude * std::sin(kPi * std::fmod(tl, shape.lobe) / shape.lobe);
    }
    const double ta = t - accel_start;
    if (ta >= 0.0) {
      double level = 0.0;
      if (ta < shape.ramp)
        level = ta / shape.ramp;
      else if (ta < shape.ramp + shape.accel_hold)
        level = 1.0;
      else if (ta < 2.0 * shape.ramp + shape.accel_hold)
        level = 1.0 - (ta - shape.ramp - shape.accel_hold) / shape.ramp;
      m.ax[k] = shape.accel * level;
    }
  }
  return m;
}

}  // namespace tiltune::harness
