"""Numerical tools for Schwarz rearrangement and time-space optimal control of the heat equation on a ball."""

from .errors import (
    ConfigurationError,
    ContractError,
    DegenerateLevelError,
    DomainError,
    FieldFormatError,
    MonotonicityError,
    NumericalError,
    RangeError,
    SerializationError,
    TalentiError,
)
from .grid import (
    RadialField,
    RadialGrid,
    SpaceTimeField,
    TimeGrid,
    integrate_ball,
    integrate_spacetime,
)
from .heat import solve_adjoint, solve_heat
from .rearrangement import concentration_profile, dominates, schwarz_rearrange
from .control import AdmissibleControl, bathtub_optimize

__version__ = "0.1.0"

__all__ = [
    "AdmissibleControl",
    "bathtub_optimize",
    "concentration_profile",
    "dominates",
    "schwarz_rearrange",
    "solve_adjoint",
    "solve_heat",
    "ConfigurationError",
    "ContractError",
    "DegenerateLevelError",
    "DomainError",
    "FieldFormatError",
    "MonotonicityError",
    "NumericalError",
    "RadialField",
    "RadialGrid",
    "RangeError",
    "SerializationError",
    "SpaceTimeField",
    "TalentiError",
    "TimeGrid",
    "integrate_ball",
    "integrate_spacetime",
]
