"""Twin-in-the-Loop compensator tuning: simulation, VRFT, SMGO and CBO."""

from ._tiltune import (
    ConfigError,
    ConvergenceError,
    DesignError,
    DimensionError,
    DomainError,
    Error,
    PidGains,
    Settings,
    SingularityError,
    cbo_minimize,
    compare,
    fit_pid,
    methods,
    prbs,
    simulate,
    smgo_minimize,
    static_map,
    tune,
)

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DesignError",
    "DimensionError",
    "DomainError",
    "Error",
    "PidGains",
    "Settings",
    "SingularityError",
    "cbo_minimize",
    "compare",
    "fit_pid",
    "methods",
    "prbs",
    "settings",
    "simulate",
    "smgo_minimize",
    "static_map",
    "tune",
]


def settings(**overrides):
    """Default settings with `section__key=value` overrides (double underscore for the dot)."""
    s = Settings()
    s.update({k.replace("__", "."): v for k, v in overrides.items()})
    return s
