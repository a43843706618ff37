"""Brownian rays with autoregressive increments: simulation, estimation,
queue reconstruction and option pricing."""

__version__ = "0.1.0"

from .errors import (
    BrownRayError,
    ConstraintViolation,
    InsufficientData,
    InsufficientPaths,
    NegativeTheta,
    NonConvergence,
    OutOfNoArbitrageBounds,
    PSDViolation,
    SingularMatrix,
)
from .model import ArFit, RayComponent, RaySystem, SecondMoments

__all__ = [
    "__version__",
    "ArFit",
    "BrownRayError",
    "ConstraintViolation",
    "InsufficientData",
    "InsufficientPaths",
    "NegativeTheta",
    "NonConvergence",
    "OutOfNoArbitrageBounds",
    "PSDViolation",
    "RayComponent",
    "RaySystem",
    "SecondMoments",
    "SingularMatrix",
]
