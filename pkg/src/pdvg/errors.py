"""Typed errors shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific class that applies.
"""


class PdvgError(Exception):
    """Base class for all package errors."""


class ConfigError(PdvgError):
    """Scenario document malformed or violating a type invariant."""


class InfeasibleError(PdvgError):
    """A requested computation has no solution (planning, smoothing, radius)."""


class NumericalError(PdvgError):
    """Numerical failure: degenerate geometry, divergence, singular system."""


class DegenerateGeometryError(NumericalError):
    """Aircraft/radar geometry where a Jacobian is singular (e.g. radar at nadir)."""


class InfeasibleRadiusError(InfeasibleError):
    """detection_radius preconditions violated; no radius attains the target P_D."""


class SmoothingError(InfeasibleError):
    """A fillet does not fit on a waypoint leg."""

    def __init__(self, waypoint_index: int, message: str):
        self.waypoint_index = waypoint_index
        super().__init__(f"waypoint {waypoint_index}: {message}")


class NoPathError(InfeasibleError):
    """Goal unreachable in the visibility graph."""
