"""Numerics for vector-valued generalized grey Brownian motion (vggBm).

Submodules: specfun, fracops, measure, sampling, localtime, sde, validation, cli.
"""

from __future__ import annotations

__version__ = "0.1.0"
