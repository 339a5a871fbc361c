"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value violates its contract.

    The message names the offending field with a dotted path, e.g.
    ``physics.delta: must be > 0``.
    """


class InitialDataError(ValueError):
    """Initial data fail the admissibility check (wall too close to the
    bottom, or its Sobolev norm too large for the chosen cutoff band)."""


class DegenerateJacobian(ArithmeticError):
    """The vertical-stretch map has nonpositive Jacobian R + eta(z) at an
    evaluation point.  The cutoff machinery should have prevented this;
    seeing it means a state escaped the admissibility guard."""


class PicardDivergence(RuntimeError):
    """The fixed-point iteration for the fluid substep did not reach the
    requested tolerance within the iteration budget."""


class SolverFailure(RuntimeError):
    """An inner linear solve failed (singular or non-finite system).
    Signals corrupted assembly rather than a physics event."""
