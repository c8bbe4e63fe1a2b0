"""Quenched limit theorems for random expanding dynamical systems.

Submodules
----------
environment
    Stationary environments, mixing coefficients and visiting times.
systems
    Random circle maps and subshifts of finite type with fiber geometry.
transfer
    Discretized transfer operators (Ulam cells or cylinders) and cocycle windows.
rpf
    Sequential Ruelle-Perron-Frobenius triplets, normalization and decay.
cones
    Real Birkhoff cones, Hilbert metrics and contraction ledgers.
blocks
    Block schedules, induced cocycles and block triplets under complex twists.
limits
    Variance, characteristic functions, Berry-Esseen and moderate deviations.
sampling
    Monte Carlo Birkhoff sums under the fiber measures.
config, cli
    Experiment configuration and the command-line front end.
"""

from __future__ import annotations

from . import blocks, cones, environment, limits, rpf, sampling, systems, transfer
from .errors import QuenchlabError

__version__ = "0.1.0"

__all__ = ["blocks", "cones", "environment", "limits", "rpf", "sampling", "systems", "transfer",
           "QuenchlabError", "__version__"]
