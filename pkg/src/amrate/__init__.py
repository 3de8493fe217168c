"""Alternating-minimization training of small dense networks, with
empirical checks of j-step sufficient decrease and KL convergence rates."""

from ._backend import name as backend

__version__ = "0.1.0"
__all__ = ["backend", "__version__"]
