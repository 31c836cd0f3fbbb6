"""Two-bubble family with a kernel perturbation: corrections, sweeps, exponents.

The family is ``v = Gamma_R + beta Phi_R`` with ``Gamma_R = Psi + Psi_R`` and
``Phi_R = w_d + w_{R,d}``.  Corrections ``rho_ij`` solve
``L_Gamma rho_ij = Xi_ij + theta_ij`` (``theta_ij`` the multiplier terms)
under orthogonality to the translation and degenerate kernels of both
bubbles, and are combined as

    rho = rho_11 + beta rho_12 + beta^2 rho_21 + beta^3 rho_22 + beta rho_11*.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .bubbles import BubbleSpec, kernel_values, psi_values
from .calculus import bubble_count, norm, residual, riesz_solve
from .cylinder import (DEFAULT_MAX_MODE, DEFAULT_N_T, DEFAULT_PAD_DECAYS, Field,
                       FsParameters, Grid, from_nodal, make_grid, to_nodal)
from .decompose import decompose
from .linops import ConstraintSet, MultiplierSet, solve_constrained, unit_specs

__all__ = [
    "CorrectionLevel",
    "Regime",
    "ExampleSpec",
    "ExampleBuild",
    "SweepRecord",
    "interaction_q",
    "example_grid",
    "build_xi_terms",
    "solve_corrections",
    "build_example",
    "assemble_example",
    "classify_regime",
    "run_sweep",
    "fit_exponent",
    "fit_by_regime",
]


class CorrectionLevel(str, Enum):
    NONE = "none"
    FIRST_ORDER = "first_order"
    FULL = "full"


class Regime(str, Enum):
    KERNEL = "kernel_dominated"
    INTERACTION = "interaction_dominated"
    MIXED = "mixed"


@dataclass(frozen=True)
class ExampleSpec:
    params: FsParameters
    R: float
    beta: float
    correction_level: CorrectionLevel = CorrectionLevel.FULL
    positive_part: bool = False

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("R must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")
        object.__setattr__(self, "correction_level", CorrectionLevel(self.correction_level))


def interaction_q(params: FsParameters, R: float) -> float:
    """``Q_R = exp(-sqrt(Lambda) R)``."""
    if R < 0:
        raise ValueError("R must be nonnegative")
    return math.exp(-params.sqrt_lambda * R)


def example_grid(params: FsParameters, R: float, n_t: int | None = None,
                 pad: float | None = None, max_mode: int = DEFAULT_MAX_MODE,
                 fd_order: int = 4, refine: int = 1) -> Grid:
    """Grid around bubbles at 0 and ``R``.

    Without ``n_t`` the spacing is that of the default single-bubble grid
    divided by ``refine``.
    """
    if pad is None:
        pad = DEFAULT_PAD_DECAYS / params.sqrt_lambda
    if n_t is None:
        h = 2.0 * pad / (DEFAULT_N_T - 1) / refine
        n_t = int(math.ceil((R + 2.0 * pad) / h)) + 1
    return make_grid(params, [0.0, R], pad=pad, n_t=n_t, max_mode=max_mode,
                     fd_order=fd_order)


def _pow(x, q):
    """``x**q`` for ``x >= 0`` with ``0**q = 0`` for any real ``q``."""
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(q * np.log(x[pos]))
    return out


def _excess(a, b, q):
    """``(a + b)**q - a**q`` for ``a, b >= 0`` without cancellation."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    small = (a > 0) & (b <= a)
    ratio = np.where(small, b / np.where(small, a, 1.0), 0.0)
    # when b > a the direct difference keeps full relative accuracy
    return np.where(small, _pow(a, q) * np.expm1(q * np.log1p(ratio)),
                    _pow(a + b, q) - _pow(a, q))


def _cross(a, b, q):
    """``(a + b)**q - a**q - b**q``, expanded about the larger summand."""
    hi = np.maximum(a, b)
    lo = np.minimum(a, b)
    pos = hi > 0
    r = np.where(pos, lo / np.where(pos, hi, 1.0), 0.0)
    return _pow(hi, q) * (np.expm1(q * np.log1p(r)) - _pow(r, q))


class _Radial:
    """Radial ingredients of the family on a grid."""

    def __init__(self, params: FsParameters, R: float, grid: Grid):
        t = grid.t
        self.t = t
        self.psi = psi_values(params, t)
        self.psi_r = psi_values(params, t - R)
        self.gamma = self.psi + self.psi_r
        self.w = kernel_values(params, t)
        self.w_r = kernel_values(params, t - R)
        self.phi = self.w + self.w_r
        self.in_b = (t >= -R / 2) & (t <= R / 2)
        self.in_br = (t > R / 2) & (t <= 1.5 * R)
        self.rest = ~(self.in_b | self.in_br)


def _angular(grid: Grid, radial: np.ndarray, power: int) -> Field:
    """Project ``radial(t) * theta_d**power`` onto the harmonic modes."""
    return from_nodal(grid, radial[:, None] * grid.nodes[None, :] ** power)


def build_xi_terms(spec: ExampleSpec, grid: Grid | None = None) -> dict:
    """Forcing terms ``xi11``, ``xi12``, ``xi21``, ``xi22`` of the corrections."""
    params = spec.params
    grid = grid or example_grid(params, spec.R)
    p, A_p, B_p = params.p, params.A_p, params.B_p
    r = _Radial(params, spec.R, grid)
    xi11 = _cross(r.psi, r.psi_r, p)
    xi12 = p * (_excess(r.psi, r.psi_r, p - 1) * r.w + _excess(r.psi_r, r.psi, p - 1) * r.w_r)
    # w^2 Psi^{p-2} = Psi^{2p-1}, w^3 Psi^{p-3} = Psi^{(5p-3)/2}
    sq = np.where(r.in_b, _pow(r.psi, 2 * p - 1), 0.0)
    sq += np.where(r.in_br, _pow(r.psi_r, 2 * p - 1), 0.0)
    sq += np.where(r.rest, _pow(r.gamma, p - 2) * r.phi ** 2, 0.0)
    cu = np.where(r.in_b, _pow(r.psi, 2.5 * p - 1.5), 0.0)
    cu += np.where(r.in_br, _pow(r.psi_r, 2.5 * p - 1.5), 0.0)
    cu += np.where(r.rest, _pow(r.gamma, p - 3) * r.phi ** 3, 0.0)
    return {
        "xi11": Field.from_profile(grid, xi11, 0),
        "xi12": Field.from_profile(grid, xi12, 1),
        "xi21": _angular(grid, A_p * sq, 2),
        "xi22": _angular(grid, B_p * cu, 3),
    }


def _constraints(grid: Grid, R: float) -> ConstraintSet:
    return ConstraintSet.for_bubbles(grid, [0.0, R], trivial=True, nontrivial=True)


def solve_corrections(spec: ExampleSpec, grid: Grid | None = None,
                      xi: dict | None = None, skip=()) -> dict:
    """Solve for ``rho11, rho12, rho21, rho22, rho11s`` as the level requires.

    Returns a mapping name -> ``(Field, MultiplierSet)``; names listed in
    ``skip`` are left out (``rho11`` is always solved).
    """
    params = spec.params
    grid = grid or example_grid(params, spec.R)
    level = spec.correction_level
    if level is CorrectionLevel.NONE:
        return {}
    xi = xi or build_xi_terms(spec, grid)
    specs = unit_specs([0.0, spec.R])
    cons = _constraints(grid, spec.R)
    names = ["11", "12"] if level is CorrectionLevel.FIRST_ORDER else ["11", "12", "21", "22"]
    out = {}
    for name in names:
        if name == "11" or "rho" + name not in skip:
            out["rho" + name] = _solve_or_zero(specs, xi["xi" + name], cons)
    if level is CorrectionLevel.FULL and "rho11s" not in skip:
        r = _Radial(params, spec.R, grid)
        factor = 2.0 * params.A_p * _pow(r.gamma, params.p - 2) * r.phi
        rho11 = out["rho11"][0]
        # (mode-0 rho11) * theta_d * factor lands in mode 1
        src = _angular(grid, factor * rho11.profile(0), 1)
        out["rho11s"] = _solve_or_zero(specs, src, cons)
    return out


def _solve_or_zero(specs, rhs: Field, cons: ConstraintSet):
    if not np.any(rhs.modes):
        n = len(specs)
        zero = tuple([0.0] * n)
        return Field.zeros(rhs.grid), MultiplierSet(zero, zero, zero, 0.0, 0.0)
    return solve_constrained(specs, rhs, cons)


@dataclass(frozen=True)
class ExampleBuild:
    spec: ExampleSpec
    grid: Grid
    v: Field
    rho: Field
    v_tilde: Field
    corrections: dict
    negative_part_norm: float


def build_example(spec: ExampleSpec, grid: Grid | None = None) -> ExampleBuild:
    """``v``, the combined correction ``rho`` and ``v_tilde = v + rho``.

    With ``positive_part`` the returned ``v_tilde`` is ``max(v + rho, 0)``
    evaluated nodally and re-projected.  ``negative_part_norm`` is the
    weighted norm of ``max(-(v + rho), 0)`` either way.
    """
    params = spec.params
    grid = grid or example_grid(params, spec.R)
    r = _Radial(params, spec.R, grid)
    beta = spec.beta
    v = Field.from_profile(grid, r.gamma, 0) + beta * Field.from_profile(grid, r.phi, 1)
    coef = {"rho11": 1.0, "rho12": beta, "rho21": beta ** 2, "rho22": beta ** 3,
            "rho11s": beta}
    corr = solve_corrections(spec, grid, skip=[k for k, c in coef.items() if c == 0.0])
    rho = Field.zeros(grid)
    for name, (fld, _) in corr.items():
        rho = rho + coef[name] * fld
    v_tilde = v + rho
    nodal = to_nodal(v_tilde)
    neg = from_nodal(grid, np.maximum(-nodal, 0.0))
    if spec.positive_part:
        v_tilde = from_nodal(grid, np.maximum(nodal, 0.0))
    return ExampleBuild(spec, grid, v, rho, v_tilde, corr, norm(neg))


def assemble_example(spec: ExampleSpec, grid: Grid | None = None) -> Field:
    """The corrected (optionally clamped) member ``v_tilde`` of the family."""
    return build_example(spec, grid).v_tilde


def classify_regime(params: FsParameters, beta: float, q: float) -> Regime:
    """Kernel-dominated if ``Q <= beta^3/10``; interaction-dominated if
    ``beta <= Q^{min(p,2)/2}/10``; mixed otherwise."""
    if q <= beta ** 3 / 10.0:
        return Regime.KERNEL
    if beta <= q ** (min(params.p, 2.0) / 2.0) / 10.0:
        return Regime.INTERACTION
    return Regime.MIXED


@dataclass(frozen=True)
class SweepRecord:
    beta: float
    R: float
    q_r: float
    f_dual: float
    dist: float
    nu_flag: bool
    alphas_recovered: tuple
    centers_recovered: tuple
    betas_recovered: tuple
    regime: Regime
    negative_part_norm: float = 0.0
    error: str | None = None

    @property
    def nu_ok(self) -> bool:
        return self.nu_flag

    @property
    def ok(self) -> bool:
        return self.error is None


def _evaluate(args) -> SweepRecord:
    spec, grid = args
    q = interaction_q(spec.params, spec.R)
    regime = classify_regime(spec.params, spec.beta, q)
    nan2 = (float("nan"), float("nan"))
    try:
        build = build_example(spec, grid)
        vt = build.v_tilde
        f_dual = riesz_solve(residual(vt)).value
        dec = decompose(vt, 2, init=[BubbleSpec(1.0, 0.0), BubbleSpec(1.0, spec.R)])
        return SweepRecord(
            beta=spec.beta, R=spec.R, q_r=q, f_dual=f_dual, dist=dec.dist,
            nu_flag=bubble_count(vt).nu == 2,
            alphas_recovered=tuple(s.alpha for s in dec.specs),
            centers_recovered=tuple(s.center for s in dec.specs),
            betas_recovered=tuple(dec.betas), regime=regime,
            negative_part_norm=build.negative_part_norm)
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        return SweepRecord(spec.beta, spec.R, q, float("nan"), float("nan"), False,
                           nan2, nan2, nan2, regime, float("nan"),
                           error=f"{type(exc).__name__}: {exc}")


def _shared_grids(schedule, n_t=None, pad=None, max_mode=DEFAULT_MAX_MODE,
                  refine=1) -> list:
    """One grid per distinct parameter set, wide enough for its largest R."""
    r_max = {}
    for s in schedule:
        r_max[s.params] = max(r_max.get(s.params, 0.0), s.R)
    grids = {}
    for params, R in r_max.items():
        grids[params] = example_grid(params, R, n_t=n_t, pad=pad, max_mode=max_mode,
                                     refine=refine)
    return [grids[s.params] for s in schedule]


def run_sweep(schedule, grid: Grid | None = None, workers: int = 1,
              n_t: int | None = None, pad: float | None = None,
              max_mode: int = DEFAULT_MAX_MODE, refine: int = 1) -> list:
    """Evaluate every spec; failures are recorded, not raised.

    All specs sharing parameters use one grid (``grid`` if given).  Output
    order follows the schedule.
    """
    schedule = list(schedule)
    if not schedule:
        raise ValueError("schedule must be nonempty")
    grids = [grid] * len(schedule) if grid is not None else _shared_grids(
        schedule, n_t=n_t, pad=pad, max_mode=max_mode, refine=refine)
    jobs = list(zip(schedule, grids))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_evaluate, jobs))
    return [_evaluate(j) for j in jobs]


def _value(rec, name):
    return float(rec[name] if isinstance(rec, dict) else getattr(rec, name))


def fit_exponent(records, x: str, y: str):
    """Least-squares slope of ``log y`` against ``log x`` and its standard error."""
    records = list(records)
    if len(records) < 4:
        raise ValueError("need at least 4 records")
    xs = np.array([_value(r, x) for r in records])
    ys = np.array([_value(r, y) for r in records])
    if np.any(~np.isfinite(xs)) or np.any(~np.isfinite(ys)) or np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("exponent fit needs finite positive values")
    dx = np.diff(xs)
    if not (np.all(dx > 0) or np.all(dx < 0)):
        raise ValueError(f"{x} must be strictly monotone")
    lx, ly = np.log(xs), np.log(ys)
    dx, dy = lx - lx.mean(), ly - ly.mean()
    sxx = float(dx @ dx)
    slope = float(dx @ dy) / sxx
    # from the residuals directly: 1 - r^2 would leave a sqrt(eps) floor
    resid = dy - slope * dx
    stderr = math.sqrt(float(resid @ resid) / (len(xs) - 2) / sxx)
    return slope, stderr


def fit_by_regime(records, x: str = "f_dual", y: str = "dist") -> dict:
    """Exponent fits for all successful records and for each regime.

    Records are ordered by ``x`` first; groups that are too small or not
    strictly monotone are reported with an ``error`` entry.
    """
    good = [r for r in records if r.ok]
    groups = {"all": good}
    for reg in Regime:
        groups[reg.value] = [r for r in good if r.regime is reg]
    out = {}
    for name, recs in groups.items():
        recs = sorted(recs, key=lambda r: _value(r, x))
        try:
            slope, err = fit_exponent(recs, x, y)
            out[name] = {"slope": slope, "stderr": err, "n": len(recs)}
        except ValueError as exc:
            out[name] = {"error": str(exc), "n": len(recs)}
    return out
