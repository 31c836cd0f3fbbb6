"""Linearized operator around a bubble sum and constrained (bordered) solves.

For a mode-0 sum ``U = sum alpha_j Psi_{s_j}`` the linearization
``L g = -d_t^2 g - Laplacian_theta g + Lambda g - p U^{p-1} g`` acts on every
harmonic mode separately.  Near its kernel, solves are done on the bordered
system

    [ L_j   C ] [gamma]   [rhs_j]
    [ B     0 ] [ m   ] = [  0  ]

where the columns of ``C`` are the multiplier carriers (``Psi_i^{p-1} k_i``,
paired in L2) and the rows of ``B`` impose weighted-H1 orthogonality to the
constraint fields ``k_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg.lapack import dgbtrf, dgbtrs
from scipy.sparse.linalg import LinearOperator, onenormest

from .bubbles import (BubbleSpec, bubble_sum_values, dpsi_values, kernel_values,
                      psi_values)
from .calculus import apply_coercive, h1_inner, l2_inner
from .cylinder import Field, Grid

__all__ = [
    "Constraint",
    "ConstraintSet",
    "MultiplierSet",
    "ConditioningError",
    "potential",
    "apply_L",
    "solve_constrained",
    "build_r1_ex",
    "build_r2",
    "unit_specs",
]

COND_LIMIT = 1e12


class ConditioningError(np.linalg.LinAlgError):
    """A bordered system is too ill-conditioned to trust."""


@dataclass(frozen=True)
class Constraint:
    """One orthogonality constraint and its multiplier carrier."""

    name: str
    bubble: int
    kind: str  # "trivial", "nontrivial" or "bubble"
    mode: int
    field: Field
    carrier: Field


def _flags(value, n):
    if isinstance(value, (bool, np.bool_)):
        return [bool(value)] * n
    value = [bool(v) for v in value]
    if len(value) != n:
        raise ValueError("per-bubble flags must match the number of centers")
    return value


@dataclass(frozen=True)
class ConstraintSet:
    constraints: tuple

    @classmethod
    def for_bubbles(cls, grid: Grid, centers, trivial=True, nontrivial=True,
                    bubble=False) -> "ConstraintSet":
        """Standard constraints at unit bubbles ``Psi_{s_j}``.

        Each flag is a bool or one bool per center.  Carriers are
        ``Psi_j^{p-1} d_t Psi_j``, ``Psi_j^{p-1} w_{j,d}`` and ``Psi_j^p``.
        """
        params = grid.params
        p = params.p
        centers = [float(c) for c in centers]
        n = len(centers)
        tr, nt, bb = _flags(trivial, n), _flags(nontrivial, n), _flags(bubble, n)
        out = []
        for j, s in enumerate(centers):
            tt = grid.t - s
            psi = psi_values(params, tt)
            weight = psi ** (p - 1.0)
            if tr[j]:
                d = dpsi_values(params, tt)
                out.append(Constraint(f"dpsi[{j}]", j, "trivial", 0,
                                      Field.from_profile(grid, d, 0),
                                      Field.from_profile(grid, weight * d, 0)))
            if nt[j]:
                w = kernel_values(params, tt)
                out.append(Constraint(f"w[{j}]", j, "nontrivial", 1,
                                      Field.from_profile(grid, w, 1),
                                      Field.from_profile(grid, weight * w, 1)))
            if bb[j]:
                out.append(Constraint(f"psi[{j}]", j, "bubble", 0,
                                      Field.from_profile(grid, psi, 0),
                                      Field.from_profile(grid, weight * psi, 0)))
        return cls(tuple(out))

    def on_mode(self, j: int) -> list:
        return [c for c in self.constraints if c.mode == j]

    @property
    def n_bubbles(self) -> int:
        return 1 + max((c.bubble for c in self.constraints), default=-1)


@dataclass(frozen=True)
class MultiplierSet:
    """Multipliers per bubble (zero where the constraint is absent).

    ``c``: translation kernel, ``sigma``: degenerate kernel, ``a``: bubble
    direction.  ``residual`` is the relative L2 residual of the bordered
    equations; ``orthogonality`` the largest normalized constraint pairing;
    ``condition`` the 1-norm condition estimate per solved mode.
    """

    c: tuple
    sigma: tuple
    a: tuple
    residual: float
    orthogonality: float
    condition: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"c": list(self.c), "sigma": list(self.sigma), "a": list(self.a),
                "residual": self.residual, "orthogonality": self.orthogonality}


def potential(specs, grid: Grid) -> np.ndarray:
    """``p U^{p-1}`` for the bubble sum ``U``."""
    params = grid.params
    u = bubble_sum_values(params, specs, grid.t)
    return params.p * u ** (params.p - 1.0)


def apply_L(specs, g: Field) -> Field:
    """Linearized operator around ``sum alpha_j Psi_{s_j}`` applied to ``g``."""
    return apply_coercive(g) - g.times_profile(potential(specs, g.grid))


def _operator_matrix(grid: Grid, j: int, pot: np.ndarray) -> sp.csc_matrix:
    diag = grid.mu[j] + grid.params.lambda_fs - pot[1:-1]
    return (grid.stiffness_matrix + sp.diags(diag)).tocsc()


class _BorderedSystem:
    """``[[L, C], [B, 0]]`` with ``L`` banded.

    ``L`` is factored once by banded LU with partial pivoting; the border is
    eliminated through its small Schur complement.  Block elimination alone
    loses accuracy when ``L`` is nearly singular, so every solve is followed
    by iterative refinement on the full system.
    """

    def __init__(self, grid: Grid, j: int, pot: np.ndarray, cols: np.ndarray,
                 rows: np.ndarray):
        width = len(grid.stencil) - 1
        n = grid.n_t - 2
        self.n, self.kl = n, width
        self.mat = _operator_matrix(grid, j, pot)
        ab = np.zeros((3 * width + 1, n))
        diag = grid.mu[j] + grid.params.lambda_fs - pot[1:-1]
        ab[2 * width] = grid.stencil[0] + diag
        for k in range(1, width + 1):
            ab[2 * width - k, k:] = grid.stencil[k]
            ab[2 * width + k, :n - k] = grid.stencil[k]
        lu, piv, info = dgbtrf(ab, width, width)
        if info < 0:
            raise np.linalg.LinAlgError("banded factorization failed")
        self.lu, self.piv = lu, piv
        self.C = cols  # (n, m)
        self.B = rows  # (m, n)
        self.m = cols.shape[1]
        if self.m:
            self.XC = self._band(cols, 0)
            self.YB = self._band(rows.T, 1)
            self.S = rows @ self.XC
            self.ST = cols.T @ self.YB

    def _band(self, rhs, trans):
        x, info = dgbtrs(self.lu, self.kl, self.kl, rhs, self.piv, trans=trans)
        if info != 0:
            raise np.linalg.LinAlgError("banded solve failed")
        return x

    def matvec(self, z, transpose=False):
        x, y = z[:self.n], z[self.n:]
        if transpose:
            top = self.mat.T @ x + (self.B.T @ y if self.m else 0.0)
            return np.concatenate([top, self.C.T @ x]) if self.m else top
        top = self.mat @ x + (self.C @ y if self.m else 0.0)
        return np.concatenate([top, self.B @ x]) if self.m else top

    def _eliminate(self, z, transpose):
        f, g = z[:self.n], z[self.n:]
        x0 = self._band(f, 1 if transpose else 0)
        if not self.m:
            return x0
        if transpose:
            y = np.linalg.solve(self.ST, self.C.T @ x0 - g)
            return np.concatenate([x0 - self.YB @ y, y])
        y = np.linalg.solve(self.S, self.B @ x0 - g)
        return np.concatenate([x0 - self.XC @ y, y])

    def solve(self, z, transpose=False, sweeps=3):
        z = np.asarray(z, float).ravel()
        sol = self._eliminate(z, transpose)
        for _ in range(sweeps):
            sol = sol + self._eliminate(z - self.matvec(sol, transpose), transpose)
        return sol

    def condition(self) -> float:
        size = self.n + self.m
        full = self.mat if not self.m else sp.bmat(
            [[self.mat, sp.csc_matrix(self.C)], [sp.csr_matrix(self.B), None]], format="csc")
        inv = LinearOperator((size, size), matvec=lambda z: self.solve(z, sweeps=1),
                             rmatvec=lambda z: self.solve(z, transpose=True, sweeps=1),
                             dtype=float)
        return float(onenormest(full) * onenormest(inv))


def solve_constrained(specs, rhs: Field, constraints: ConstraintSet,
                      cond_limit: float = COND_LIMIT):
    """Solve ``L gamma = rhs - sum m_i carrier_i`` with ``<gamma, k_i> = 0``.

    Returns ``(gamma, MultiplierSet)``.  Modes whose right-hand side is
    identically zero are skipped (their solution and multipliers are zero).

    Raises
    ------
    ConditioningError
        If the 1-norm condition estimate of some mode's system exceeds
        ``cond_limit``.
    """
    grid = rhs.grid
    specs = list(specs)
    pot = potential(specs, grid)
    h = grid.h
    n_b = max(constraints.n_bubbles, len(specs))
    c = np.zeros(n_b)
    sigma = np.zeros(n_b)
    a = np.zeros(n_b)
    gamma = np.zeros_like(rhs.modes)
    conds = {}
    n_int = grid.n_t - 2
    scale = float(np.max(np.abs(grid.stencil[0] + grid.mu + grid.params.lambda_fs)))
    for j in range(grid.n_modes):
        f = rhs.modes[j, 1:-1]
        if not np.any(f):
            continue
        cons = constraints.on_mode(j)
        cols, rows, col_scales = [], [], []
        for con in cons:
            car = con.carrier.modes[j, 1:-1]
            kfield = apply_coercive(con.field).modes[j, 1:-1] * h
            cs = scale / np.max(np.abs(car))
            cols.append(car * cs)
            rows.append(kfield * (scale / np.max(np.abs(kfield))))
            col_scales.append(cs)
        system = _BorderedSystem(grid, j, pot, np.array(cols).reshape(len(cons), n_int).T,
                                 np.array(rows).reshape(len(cons), n_int))
        cond = system.condition()
        conds[j] = cond
        if not np.isfinite(cond) or cond > cond_limit:
            raise ConditioningError(
                f"bordered system for mode {j} has condition estimate {cond:.3e} "
                f"above {cond_limit:.1e}")
        sol = system.solve(np.concatenate([f, np.zeros(len(cons))]))
        gamma[j, 1:-1] = sol[:n_int]
        for k, con in enumerate(cons):
            m = sol[n_int + k] * col_scales[k]
            {"trivial": c, "nontrivial": sigma, "bubble": a}[con.kind][con.bubble] = m
    gam = Field(grid, gamma)
    # verification on the assembled fields
    total = apply_L(specs, gam) - rhs
    for con in constraints.constraints:
        m = {"trivial": c, "nontrivial": sigma, "bubble": a}[con.kind][con.bubble]
        total = total + m * con.carrier
    rhs_norm = np.sqrt(l2_inner(rhs, rhs))
    res = np.sqrt(l2_inner(total, total)) / rhs_norm if rhs_norm > 0 else 0.0
    gnorm = np.sqrt(max(h1_inner(gam, gam), 0.0))
    ortho = 0.0
    for con in constraints.constraints:
        kn = np.sqrt(h1_inner(con.field, con.field))
        if gnorm > 0 and kn > 0:
            ortho = max(ortho, abs(h1_inner(gam, con.field)) / (gnorm * kn))
    return gam, MultiplierSet(tuple(c), tuple(sigma), tuple(a), float(res),
                              float(ortho), conds)


def build_r1_ex(specs, grid: Grid) -> Field:
    """Cross part ``U^p - sum (alpha_j Psi_j)^p`` of the nonlinear error."""
    params = grid.params
    p = params.p
    specs = list(specs)
    u = bubble_sum_values(params, specs, grid.t)
    out = u ** p
    for s in specs:
        out = out - (s.alpha * psi_values(params, grid.t - s.center)) ** p
    return Field.from_profile(grid, out, 0)


def build_r2(specs, betas, grid: Grid) -> Field:
    """``p sum_j (U^{p-1} - (alpha_j Psi_j)^{p-1} + (alpha_j^{p-1} - 1) Psi_j^{p-1}) beta_j w_j``."""
    params = grid.params
    p = params.p
    specs = list(specs)
    betas = [float(b) for b in betas]
    if len(betas) != len(specs):
        raise ValueError("betas must align with specs")
    u = bubble_sum_values(params, specs, grid.t)
    out = np.zeros_like(grid.t)
    for s, beta in zip(specs, betas):
        if beta == 0.0:
            continue
        tt = grid.t - s.center
        psi = psi_values(params, tt)
        factor = (u ** (p - 1.0) - (s.alpha * psi) ** (p - 1.0)
                  + (s.alpha ** (p - 1.0) - 1.0) * psi ** (p - 1.0))
        out = out + p * factor * beta * kernel_values(params, tt)
    return Field.from_profile(grid, out, 1)


def unit_specs(centers) -> list:
    return [BubbleSpec(1.0, float(s)) for s in centers]
