"""Norms, the residual operator, dual norms, the deficit and energy windows.

All products use the weighted norm
``||u||^2 = int (|d_t u|^2 + |grad_theta u|^2 + Lambda u^2)``; mode-wise this
is ``sum_j int (u_j'^2 + (mu_j + Lambda) u_j^2) dt``.  Discretely,
``<u, v> = h * sum_j u_j . A_j v_j`` with ``A_j`` the finite-difference
version of ``-d^2/dt^2 + mu_j + Lambda``; the dual norm of ``f`` is then
exactly ``||A^{-1} f||``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.linalg import solveh_banded

from .bubbles import psi_values
from .cylinder import Field, FsParameters, Grid, pointwise_power, to_nodal

__all__ = [
    "DualNormResult",
    "BubbleCount",
    "l2_inner",
    "h1_inner",
    "norm",
    "lp_norm",
    "apply_coercive",
    "residual",
    "riesz_solve",
    "dual_norm",
    "deficit",
    "sobolev_constant",
    "attach_sobolev_constant",
    "bubble_energy",
    "bubble_count",
]


def _same_grid(u: Field, v: Field) -> Grid:
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")
    return u.grid


def l2_inner(u: Field, v: Field) -> float:
    """``int_C u v`` (trapezoid in t, harmonic orthonormality in theta)."""
    g = _same_grid(u, v)
    return g.h * float(np.sum(u.modes * v.modes))


def apply_coercive(u: Field) -> Field:
    """``(-d_t^2 - Laplacian_theta + Lambda) u``, mode-wise."""
    g = u.grid
    shift = (g.mu + g.params.lambda_fs)[:, None]
    return Field(g, g.apply_stiffness(u.modes) + shift * u.modes)


def h1_inner(u: Field, v: Field) -> float:
    """Weighted inner product ``<u, v>``."""
    _same_grid(u, v)
    return l2_inner(u, apply_coercive(v))


def norm(u: Field) -> float:
    return math.sqrt(max(h1_inner(u, u), 0.0))


def lp_norm(u: Field, q: float) -> float:
    """``(int_C |u|^q)^{1/q}`` by nodal quadrature."""
    if q < 1:
        raise ValueError("q must be at least 1")
    g = u.grid
    vals = np.abs(to_nodal(u)) ** q
    return float(g.h * np.sum(vals @ g.weights)) ** (1.0 / q)


def residual(v: Field) -> Field:
    """``-d_t^2 v - Laplacian_theta v + Lambda v - |v|^{p-1} v``."""
    return apply_coercive(v) - pointwise_power(v, v.grid.params.p, signed=True)


@dataclass(frozen=True)
class DualNormResult:
    """Dual norm ``value`` of ``f`` and its Riesz representative ``riesz``."""

    value: float
    riesz: Field


def riesz_solve(f: Field) -> DualNormResult:
    """Solve ``(-d_t^2 + mu_j + Lambda) g_j = f_j`` for every mode."""
    g = f.grid
    out = np.zeros_like(f.modes)
    for j in range(g.n_modes):
        rhs = f.modes[j, 1:-1]
        if np.any(rhs):
            out[j, 1:-1] = solveh_banded(g.coercive_bands(j), rhs, check_finite=False)
    riesz = Field(g, out)
    value = math.sqrt(max(l2_inner(f, riesz), 0.0))
    return DualNormResult(value=value, riesz=riesz)


def dual_norm(f: Field) -> float:
    return riesz_solve(f).value


@lru_cache(maxsize=64)
def sobolev_constant(params: FsParameters, grid: Grid) -> float:
    """Discrete Rayleigh quotient of ``Psi``: ``||Psi||^2 / ||Psi||_{p+1}^2``.

    The bubble is centered at the grid midpoint.  In the continuum this
    equals ``(int Psi^{p+1})^{(p-1)/(p+1)}``.
    """
    if params != grid.params:
        raise ValueError("params differ from the grid's params")
    s = 0.5 * (grid.t_min + grid.t_max)
    psi = Field.from_profile(grid, psi_values(params, grid.t - s), 0)
    return norm(psi) ** 2 / lp_norm(psi, params.p + 1.0) ** 2


def attach_sobolev_constant(grid: Grid) -> FsParameters:
    """Copy of ``grid.params`` with ``s_inv`` filled."""
    return replace(grid.params, s_inv=sobolev_constant(grid.params, grid))


def deficit(u: Field, reference: Field | None = None) -> float:
    """``||u||^2 - S^{-1} ||u||_{p+1}^2``.

    With a positive ``reference`` close to ``u`` (typically the bubble the
    input perturbs), the difference from the reference is accumulated
    without cancellation; this is what resolves deficits many orders below
    ``||u||^2``.
    """
    g = u.grid
    p = g.params.p
    s_inv = sobolev_constant(g.params, g)
    if reference is None:
        return norm(u) ** 2 - s_inv * lp_norm(u, p + 1.0) ** 2
    _same_grid(u, reference)
    eta = u - reference
    psi_n = to_nodal(reference)
    eta_n = to_nodal(eta)
    wq = g.weights[None, :]
    m_ref = g.h * float(np.sum(np.abs(psi_n) ** (p + 1) * wq))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(psi_n > 0, eta_n / np.where(psi_n > 0, psi_n, 1.0), -np.inf)
    safe = ratio > -0.5
    diff = np.where(
        safe,
        np.abs(psi_n) ** (p + 1) * np.expm1((p + 1) * np.log1p(np.where(safe, ratio, 0.0))),
        np.abs(psi_n + eta_n) ** (p + 1) - np.abs(psi_n) ** (p + 1),
    )
    d_int = g.h * float(np.sum(diff * wq))
    ref_part = norm(reference) ** 2 - s_inv * m_ref ** (2.0 / (p + 1))
    lin = 2.0 * h1_inner(reference, eta) + h1_inner(eta, eta)
    nonlin = s_inv * m_ref ** (2.0 / (p + 1)) * math.expm1(
        2.0 / (p + 1) * math.log1p(d_int / m_ref))
    return ref_part + lin - nonlin


def bubble_energy(grid: Grid) -> float:
    """``E = (S^{-1})^{(p+1)/(p-1)}``, the energy of one bubble."""
    p = grid.params.p
    return sobolev_constant(grid.params, grid) ** ((p + 1.0) / (p - 1.0))


class BubbleCount(NamedTuple):
    """``nu`` is ``None`` when ``||u||^2 / E`` is outside every window."""

    nu: int | None
    energy_ratio: float

    @property
    def in_window(self) -> bool:
        return self.nu is not None


def bubble_count(u: Field, tol: float = 1e-9) -> BubbleCount:
    """The integer ``nu`` with ``(nu - 1/2) E < ||u||^2 < (nu + 1/2) E``."""
    ratio = norm(u) ** 2 / bubble_energy(u.grid)
    nu = int(math.floor(ratio + 0.5))
    if nu < 1 or abs(ratio - (nu - 0.5)) < tol or abs(ratio - (nu + 0.5)) < tol:
        return BubbleCount(None, ratio)
    return BubbleCount(nu, ratio)
