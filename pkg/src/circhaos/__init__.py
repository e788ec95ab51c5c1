"""Chaos expansions, Fredholm determinants and bond prices for the CIR / squared-Gaussian model."""

from .errors import CirChaosError
from .model import CirParams, SqGaussParams, embed_cir

__all__ = ["CirChaosError", "CirParams", "SqGaussParams", "embed_cir"]
__version__ = "0.1.0"
