"""Excursion-set detection for Gaussian random fields via tiled SOV integration.

Modules
-------
field
    Geometry, Matérn covariance, posterior conditioning, field sampling.
tiles
    Dense tile storage and the tiled right-looking Cholesky factorization.
tlr
    Tile low-rank compression, TLR Cholesky and rank statistics.
normdist
    Standard normal CDF, quantile and interval probability.
pmvn
    Tiled separation-of-variables MVN probability integrator.
crd
    Confidence-function construction and region extraction.
mcval
    Direct-sampling Monte Carlo oracles and region validation.
runtime
    Task-graph builder and work-stealing executor.
"""
from . import kernels
from .errors import (
    DomainError,
    ExcursionError,
    FactorizationError,
    GraphError,
    ParameterError,
    ShapeError,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "ExcursionError",
    "FactorizationError",
    "GraphError",
    "ParameterError",
    "ShapeError",
    "kernels",
    "__version__",
]
