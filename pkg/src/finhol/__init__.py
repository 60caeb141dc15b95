"""Finsler surface geometry and holonomy-algebra toolkit."""
from .jets import BACKEND, Jet, lift, partial

__version__ = "0.1.0"

__all__ = ["BACKEND", "Jet", "lift", "partial", "__version__"]
