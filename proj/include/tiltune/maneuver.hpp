#pragma once

#include "tiltune/til.hpp"

namespace tiltune::harness {

struct DlcShape {
  double straight = 1.0;     // [s] before the first lobe
  double lobe_hz = 0.5;      // one full sine period = two opposite lobes
  double pause = 2.0;        // [s] between the lobes and the step
  double hold = 3.0;         // [s] step duration
  double step_ratio = 1.0;   // step amplitude relative to the lobes
};

/// Bi-sinusoidal lane change followed by a step steer at constant speed.
til::Maneuver double_lane_change_step(double speed_kmh, double amplitude, double ts = 0.01, DlcShape shape = {});

struct ChicaneShape {
  double straight = 1.0;    // [s]
  double lobe = 1.5;        // [s] duration of each half-sine lobe
  double accel = 3.0;       // [m/s^2] plateau of the acceleration ramp
  double ramp = 0.5;        // [s] rise and fall time of the acceleration
  double accel_hold = 1.5;  // [s] plateau duration
  double tail = 1.5;        // [s] straight after the second lobe
};

/// Left-right chicane; the driver starts accelerating half way through the
/// second lobe.
til::Maneuver chicane(double speed_kmh, double amplitude, double ts = 0.01, ChicaneShape shape = {});

}  // namespace tiltune::harness
