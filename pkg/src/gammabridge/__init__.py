"""Gamma bridges of random length: sampling, filtering of the hidden length,
compensators and Monte Carlo validation."""

from .mixing_law import MixingLaw
from .pathgen import Ensemble, Path, ProcessParams

__all__ = ["MixingLaw", "Ensemble", "Path", "ProcessParams"]
__version__ = "0.1.0"
