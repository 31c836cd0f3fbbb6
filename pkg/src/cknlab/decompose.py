"""Optimal bubble decomposition and the distance to the bubble manifold.

``v = sum alpha_j Psi_{s_j} + sum beta_j w_{j,d} + rho_*`` where
``(alpha, s)`` is a critical point of ``||v - sum alpha_j Psi_{s_j}||^2``
and ``beta`` is the weighted-H1 projection of the remainder onto the
degenerate kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bubbles import (BubbleSpec, d2psi_values, dpsi_values, kernel_values,
                      psi_values)
from .calculus import bubble_count, h1_inner, norm
from .cylinder import Field, Grid

__all__ = [
    "DecompositionResult",
    "FitError",
    "fit_bubbles",
    "project_kernels",
    "decompose",
    "manifold_distance",
    "ORTHO_TOL",
]

ORTHO_TOL = 1e-8
MIN_GAP = 1.0
# floor for the remainder norm when normalizing orthogonality residuals
_REL_FLOOR = 1e-6


class FitError(RuntimeError):
    """The bubble fit failed (non-convergence or collapsing centers)."""


@dataclass(frozen=True)
class DecompositionResult:
    specs: tuple
    betas: tuple
    rho: Field
    rho_star: Field
    ortho_residuals: dict
    dist: float
    q: float
    in_window: bool = True
    iterations: int = 0
    grad_norm: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v <= ORTHO_TOL for v in self.ortho_residuals.values())

    def as_dict(self) -> dict:
        return {
            "alphas": [s.alpha for s in self.specs],
            "centers": [s.center for s in self.specs],
            "betas": list(self.betas),
            "dist": self.dist,
            "rho_star_norm": norm(self.rho_star),
            "q": self.q,
            "in_window": self.in_window,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "ortho_residuals": dict(self.ortho_residuals),
            "passed": self.passed,
        }


class _Mode0:
    """Weighted inner products restricted to mode-0 coefficient arrays."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.c0 = grid.angular_factor(0)
        self.lam = grid.params.lambda_fs

    def A(self, u):
        return self.grid.apply_stiffness(u) + self.lam * u

    def inner(self, u, Av):
        return self.grid.h * float(u @ Av)


def _seed(grid: Grid, profile: np.ndarray, nu: int) -> list:
    """Greedy peeling: place a bubble at the current maximum, subtract, repeat."""
    params = grid.params
    psi0 = float(psi_values(params, 0.0))
    rest = profile.copy()
    specs = []
    for _ in range(nu):
        i = int(np.argmax(rest))
        amp = rest[i] / psi0
        if not amp > 0:
            raise FitError("no positive maximum left to seed a bubble")
        specs.append(BubbleSpec(amp, float(grid.t[i])))
        rest = rest - amp * psi_values(params, grid.t - grid.t[i])
    return specs


def _solve_alphas(ops: _Mode0, v0, centers):
    params = ops.grid.params
    t = ops.grid.t
    P = np.array([ops.c0 * psi_values(params, t - s) for s in centers])
    AP = np.array([ops.A(x) for x in P])
    gram = ops.grid.h * P @ AP.T
    rhs = ops.grid.h * AP @ v0
    return np.linalg.solve(gram, rhs)


def fit_bubbles(v: Field, nu: int, init=None, max_iter: int = 100,
                tol: float = 1e-13):
    """Critical point of ``||v - sum alpha_j Psi_{s_j}||^2``.

    Newton iterations with the exact Hessian (Gauss-Newton when it is not
    positive definite), a unit cap on center moves and backtracking.  The
    amplitudes are re-solved exactly from the linear Gram system at the final
    centers.

    Returns
    -------
    specs : list of BubbleSpec
        Sorted by center.
    rho : Field
        ``v - sum alpha_j Psi_{s_j}``.
    info : dict
        ``iterations`` and ``grad_norm`` (relative).
    """
    grid = v.grid
    params = grid.params
    if nu < 1:
        raise ValueError("nu must be at least 1")
    ops = _Mode0(grid)
    v0 = np.array(v.modes[0])
    t = grid.t
    if init is None:
        specs = _seed(grid, v0 / ops.c0, nu)
    else:
        specs = list(init)
        if len(specs) != nu:
            raise ValueError("init must contain nu specs")
    alpha = np.array([s.alpha for s in specs], float)
    cen = np.array([s.center for s in specs], float)
    alpha = _solve_alphas(ops, v0, cen)
    Av = ops.A(v0)
    v_scale = math.sqrt(max(ops.inner(v0, Av), 1e-300))
    psi_scale = math.sqrt(ops.inner(ops.c0 * psi_values(params, t),
                                    ops.A(ops.c0 * psi_values(params, t))))

    def state(alpha, cen):
        P = np.array([ops.c0 * psi_values(params, t - s) for s in cen])
        D = np.array([ops.c0 * dpsi_values(params, t - s) for s in cen])
        E = np.array([ops.c0 * d2psi_values(params, t - s) for s in cen])
        r = v0 - alpha @ P
        return P, D, E, r

    def objective(r):
        return ops.inner(r, ops.A(r))

    P, D, E, r = state(alpha, cen)
    F = objective(r)
    it = 0
    gnorm = np.inf
    for it in range(1, max_iter + 1):
        Ar = ops.A(r)
        # first derivatives of the model in (alpha_1..nu, s_1..nu)
        J = np.vstack([P, -alpha[:, None] * D])
        AJ = np.array([ops.A(x) for x in J])
        grad = -2.0 * grid.h * (AJ @ r)
        gn = 2.0 * grid.h * (J @ AJ.T)
        second = np.zeros_like(gn)
        for j in range(nu):
            second[j, nu + j] = second[nu + j, j] = -ops.inner(D[j], Ar)
            second[nu + j, nu + j] = alpha[j] * ops.inner(E[j], Ar)
        hess = gn - 2.0 * second
        gnorm = float(np.max(np.abs(grad))) / (v_scale * psi_scale)
        if gnorm < tol:
            break
        try:
            np.linalg.cholesky(hess)
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.solve(gn, grad)
        cap = np.max(np.abs(step[nu:])) if nu else 0.0
        if cap > 1.0:
            step = step / cap
        lam = 1.0
        accepted = False
        for _ in range(40):
            a_new = alpha + lam * step[:nu]
            c_new = cen + lam * step[nu:]
            if np.all(a_new > 0):
                P2, D2, E2, r2 = state(a_new, c_new)
                F2 = objective(r2)
                if F2 <= F + 1e-14 * v_scale ** 2:
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            break
        alpha, cen, P, D, E, r, F = a_new, c_new, P2, D2, E2, r2, F2
    if gnorm > 1e-9:
        raise FitError(f"bubble fit did not converge: relative gradient {gnorm:.3e} "
                       f"after {it} iterations")
    order = np.argsort(cen)
    cen = cen[order]
    if nu > 1 and np.min(np.diff(cen)) < MIN_GAP:
        raise FitError(f"bubble centers collapsed (gap {np.min(np.diff(cen)):.3g} < {MIN_GAP})")
    alpha = _solve_alphas(ops, v0, cen)
    if np.any(alpha <= 0):
        raise FitError("fitted amplitude is not positive")
    specs = [BubbleSpec(float(a), float(s)) for a, s in zip(alpha, cen)]
    rho_modes = np.array(v.modes)
    rho_modes[0] = v0 - sum(a * ops.c0 * psi_values(params, t - s) for a, s in zip(alpha, cen))
    return specs, Field(grid, rho_modes), {"iterations": it, "grad_norm": gnorm}


def _kernels(grid: Grid, specs) -> list:
    return [Field.from_profile(grid, kernel_values(grid.params, grid.t - s.center), 1)
            for s in specs]


def project_kernels(rho: Field, specs):
    """Weighted-H1 projection of ``rho`` onto ``{w_{j,d}}``.

    Returns ``(betas, rho_star)`` from the Gram system
    ``<w_i, w_j> beta_j = <w_i, rho>``.
    """
    grid = rho.grid
    ws = _kernels(grid, specs)
    gram = np.array([[h1_inner(a, b) for b in ws] for a in ws])
    if np.linalg.cond(gram) > 1e12:
        raise np.linalg.LinAlgError("kernel Gram matrix is singular (coinciding centers)")
    rhs = np.array([h1_inner(w, rho) for w in ws])
    betas = np.linalg.solve(gram, rhs)
    rho_star = rho
    for b, w in zip(betas, ws):
        rho_star = rho_star - b * w
    return tuple(float(b) for b in betas), rho_star


def _ortho(grid: Grid, specs, rho_star: Field, v_norm: float) -> dict:
    params = grid.params
    floor = max(norm(rho_star), _REL_FLOOR * v_norm)
    out = {}
    for j, s in enumerate(specs):
        tt = grid.t - s.center
        for name, vals, mode in (("psi", psi_values(params, tt), 0),
                                 ("dpsi", dpsi_values(params, tt), 0),
                                 ("w", kernel_values(params, tt), 1)):
            k = Field.from_profile(grid, vals, mode)
            val = abs(h1_inner(rho_star, k)) / (floor * norm(k)) if floor > 0 else 0.0
            out[f"{name}[{j}]"] = float(val)
    return out


def _interaction(grid: Grid, specs) -> float:
    if len(specs) < 2:
        return 0.0
    gap = min(b.center - a.center for a, b in zip(specs, specs[1:]))
    return math.exp(-grid.params.sqrt_lambda * gap)


def decompose(v: Field, nu: int, init=None) -> DecompositionResult:
    """Fit ``nu`` bubbles, project the remainder on the kernels, report."""
    grid = v.grid
    window = bubble_count(v)
    specs, rho, info = fit_bubbles(v, nu, init=init)
    betas, rho_star = project_kernels(rho, specs)
    v_norm = norm(v)
    return DecompositionResult(
        specs=tuple(specs), betas=betas, rho=rho, rho_star=rho_star,
        ortho_residuals=_ortho(grid, specs, rho_star, v_norm),
        dist=norm(rho), q=_interaction(grid, specs),
        in_window=window.nu == nu, iterations=info["iterations"],
        grad_norm=info["grad_norm"])


def manifold_distance(v: Field, nu: int, init=None, n_starts: int = 3,
                      seed: int = 0) -> float:
    """Least fitted distance over the structured seed and perturbed restarts."""
    specs, rho, _ = fit_bubbles(v, nu, init=init)
    best = norm(rho)
    rng = np.random.default_rng(seed)
    for _ in range(n_starts):
        start = [BubbleSpec(s.alpha * float(np.exp(rng.normal(0.0, 0.05))),
                            s.center + float(rng.normal(0.0, 0.3))) for s in specs]
        try:
            _, rho_k, _ = fit_bubbles(v, nu, init=start)
        except FitError:
            continue
        best = min(best, norm(rho_k))
    return best
