"""Dissipative Landau-Zener sweeps: Bloch-equation and path-integral engines."""

from .model import BathParams, ModelParams, coherent_probability
from .neqb import run_converged, run_protocol
from .quapi import ConvergenceParams, converge, propagate

__all__ = [
    "BathParams", "ModelParams", "coherent_probability",
    "run_protocol", "run_converged",
    "ConvergenceParams", "propagate", "converge",
]
__version__ = "0.1.0"
