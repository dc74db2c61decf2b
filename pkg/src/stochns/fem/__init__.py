from .infsup import infsup_constant
from .projections import interpolate, project_div_free, project_pressure
from .system import DiscreteField, FemSystem, SaddleSolveError, assemble, factorize

__all__ = [
    "DiscreteField",
    "FemSystem",
    "SaddleSolveError",
    "assemble",
    "factorize",
    "infsup_constant",
    "interpolate",
    "project_div_free",
    "project_pressure",
]
