"""Empirical certification of quadratic transportation (T2) inequalities for SDE path laws."""

__version__ = "0.1.0"

from . import constants, girsanov, particles, sde, transport, zvonkin

__all__ = ["constants", "girsanov", "particles", "sde", "transport", "zvonkin", "__version__"]
