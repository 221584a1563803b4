"""Immortal branching processes: exact solutions, master equations, Monte Carlo,
Laplace inversion and generating functions."""

from .core import (
    DistributionSnapshot,
    Engine,
    IBPError,
    Kind,
    MomentSet,
    ProcessSpec,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "DistributionSnapshot",
    "Engine",
    "IBPError",
    "Kind",
    "MomentSet",
    "ProcessSpec",
    "validate",
    "__version__",
]
