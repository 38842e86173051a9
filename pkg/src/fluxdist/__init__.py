"""Broken power-law flux distributions estimated from Poisson source counts."""

from .distribution import BrokenParetoParams
from .em import Dataset, EmConfig, FitResult, aaem_fit, aem_fit, iem_fit, saem_fit

__version__ = "0.1.0"

__all__ = [
    "BrokenParetoParams",
    "Dataset",
    "EmConfig",
    "FitResult",
    "saem_fit",
    "aaem_fit",
    "aem_fit",
    "iem_fit",
]
