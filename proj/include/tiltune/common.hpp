#pragma once

#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace tiltune {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

/// Longitudinal speed at or below zero reached a model that divides by v_x.
class SingularityError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "singularity"; }
};

/// Argument outside the domain where a model is defined.
class DomainError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "domain"; }
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "convergence"; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "dimension"; }
};

/// A tuning procedure produced a controller outside its admissible set.
class DesignError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "design"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

inline constexpr double kPi = std::numbers::pi;

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }
constexpr double kmh2ms(double kmh) { return kmh / 3.6; }

/// SplitMix64 finalizer; used to derive independent RNG streams from one root seed.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the stream identified by `tags` under `root`. Streams are derived by
/// folding each tag into the running state with splitmix64, so (root, a, b) and
/// (root, b, a) name different streams.
template <typename... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t root, Tags... tags) {
  std::uint64_t state = splitmix64(root);
  ((state = splitmix64(state ^ static_cast<std::uint64_t>(tags))), ...);
  return state;
}

}  // namespace tiltune
