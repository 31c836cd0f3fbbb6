"""Numerical laboratory for degenerate stability of weighted Sobolev extremals.

Modules
-------
cylinder       grids, harmonic transforms, nodal nonlinearities
bubbles        closed-form bubble, translates, kernels
calculus       norms, residual, dual norm, deficit, Sobolev constant
decompose      bubble fit, kernel projection, manifold distance
linops         linearized operator and bordered constrained solves
stability_lab  two-bubble family with corrections, sweeps, exponent fits
io, cli        persistence and command-line entry points
"""

from .cylinder import FsParameters, Grid, Field, make_params, make_grid

__all__ = ["FsParameters", "Grid", "Field", "make_params", "make_grid"]
__version__ = "0.1.0"
