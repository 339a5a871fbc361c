"""Operator-splitting solver for a stochastically forced fluid-structure
interaction benchmark on a fixed reference channel, with an energy ledger
that re-verifies the scheme's discrete stability estimates at run time."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateJacobian,
    InitialDataError,
    PicardDivergence,
    SolverFailure,
)
from .geometry import ReferenceDomain, WallProfile

__all__ = [
    "ConfigError",
    "DegenerateJacobian",
    "InitialDataError",
    "PicardDivergence",
    "SolverFailure",
    "ReferenceDomain",
    "WallProfile",
    "__version__",
]
