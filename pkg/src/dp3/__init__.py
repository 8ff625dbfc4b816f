"""Numerics for the degenerate third Painleve equation and its monodromy data."""
from .core import EquationParams, MonodromyData

__all__ = ["EquationParams", "MonodromyData"]
__version__ = "0.1.0"
