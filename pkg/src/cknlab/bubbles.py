"""Closed-form bubble, its translates and kernels."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .cylinder import Field, FsParameters, Grid

__all__ = [
    "BubbleSpec",
    "psi_values",
    "dpsi_values",
    "d2psi_values",
    "psi_profile",
    "dpsi_profile",
    "kernel_profile",
    "kernel_values",
    "bubble_sum",
    "bubble_sum_values",
    "euclidean_W",
]


@dataclass(frozen=True)
class BubbleSpec:
    """Amplitude ``alpha`` and center ``s`` of one bubble ``alpha * Psi(t - s)``.

    The exponents come from the grid the bubble is placed on.
    """

    alpha: float
    center: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


def _log_psi(params: FsParameters, t):
    p, lam = params.p, params.lambda_fs
    kappa = math.sqrt(lam) * (p - 1.0) / 2.0
    z = np.abs(kappa * np.asarray(t, float))
    # log cosh(z) without overflow
    logcosh = z + np.log1p(np.exp(-2.0 * z)) - math.log(2.0)
    return math.log((p + 1.0) * lam / 2.0) / (p - 1.0) - 2.0 / (p - 1.0) * logcosh


def psi_values(params: FsParameters, t) -> np.ndarray:
    """``Psi(t) = ((p+1)Lambda/2)^{1/(p-1)} cosh(sqrt(Lambda)(p-1)t/2)^{-2/(p-1)}``."""
    return np.exp(_log_psi(params, t))


def dpsi_values(params: FsParameters, t) -> np.ndarray:
    t = np.asarray(t, float)
    kappa = params.sqrt_lambda * (params.p - 1.0) / 2.0
    return -params.sqrt_lambda * np.tanh(kappa * t) * psi_values(params, t)


def d2psi_values(params: FsParameters, t) -> np.ndarray:
    """Second derivative from the profile equation ``Psi'' = Lambda Psi - Psi^p``."""
    psi = psi_values(params, t)
    return params.lambda_fs * psi - psi ** params.p


def kernel_values(params: FsParameters, t) -> np.ndarray:
    """Radial factor ``Psi^{(p+1)/2}`` of the degenerate kernel."""
    return np.exp(0.5 * (params.p + 1.0) * _log_psi(params, t))


def _check(params: FsParameters, s: float, grid: Grid):
    if params != grid.params:
        raise ValueError("params differ from the grid's params")
    psi0 = psi_values(params, 0.0)
    edge = max(psi_values(params, grid.t_min - s), psi_values(params, grid.t_max - s))
    if edge > 1e-10 * psi0:
        warnings.warn(f"bubble at s={s} is not resolved by the grid: "
                      f"boundary value {edge / psi0:.2e} of the peak", stacklevel=3)


def psi_profile(params: FsParameters, s: float, grid: Grid) -> Field:
    """``Psi_s`` as a mode-0 field."""
    _check(params, s, grid)
    return Field.from_profile(grid, psi_values(params, grid.t - s), 0)


def dpsi_profile(params: FsParameters, s: float, grid: Grid) -> Field:
    """``d/dt Psi_s`` as a mode-0 field (the translation kernel)."""
    _check(params, s, grid)
    return Field.from_profile(grid, dpsi_values(params, grid.t - s), 0)


def kernel_profile(params: FsParameters, s: float, grid: Grid, l: int | None = None) -> Field:
    """``w_{s,d} = Psi_s^{(p+1)/2} theta_d`` as a mode-1 field.

    Only the axisymmetric index ``l = d`` is representable.
    """
    if l is not None and l != params.d:
        raise ValueError("only the axisymmetric kernel l = d is representable")
    if grid.max_mode < 1:
        raise ValueError("grid must carry mode 1")
    _check(params, s, grid)
    return Field.from_profile(grid, kernel_values(params, grid.t - s), 1)


def bubble_sum_values(params: FsParameters, specs, t) -> np.ndarray:
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    for sp_ in specs:
        out = out + sp_.alpha * psi_values(params, t - sp_.center)
    return out


def bubble_sum(specs, grid: Grid) -> Field:
    """``sum_j alpha_j Psi_{s_j}`` as a mode-0 field."""
    specs = list(specs)
    if not specs:
        raise ValueError("specs must be nonempty")
    for sp_ in specs:
        _check(grid.params, sp_.center, grid)
    return Field.from_profile(grid, bubble_sum_values(grid.params, specs, grid.t), 0)


def euclidean_W(params: FsParameters, x_radius) -> np.ndarray | float:
    """Euclidean extremal ``W(|x|)``."""
    r = np.asarray(x_radius, float)
    if np.any(r <= 0):
        raise ValueError("x_radius must be positive")
    p, lam = params.p, params.lambda_fs
    g = params.sqrt_lambda
    # log-space: r**(g(p-1)) overflows for large r
    log_w = (math.log(2.0 * (p + 1.0) * lam) / (p - 1.0)
             - 2.0 / (p - 1.0) * np.logaddexp(0.0, g * (p - 1.0) * np.log(r)))
    out = np.exp(log_w)
    return float(out) if out.ndim == 0 else out
