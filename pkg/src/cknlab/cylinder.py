"""Axisymmetric discretization of the cylinder R x S^{d-1}.

A function on the cylinder that depends on the sphere variable only through
``cos(phi) = theta_d`` is stored as one radial profile per harmonic degree
``j``.  The angular basis ``G_j`` is the orthonormal family of Jacobi
polynomials ``P_j^(alpha, alpha)`` with ``alpha = (d-3)/2`` (Chebyshev for
``d = 2``, Gegenbauer otherwise), normalized against the surface measure of
the sphere so that ``G_0`` is constant and ``G_1`` is proportional to
``cos(phi)``.

In ``t`` the profiles live on a uniform grid with homogeneous Dirichlet
values at both ends.  ``-d^2/dt^2`` is a centered finite-difference
stencil of order 2 or 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.special import eval_jacobi, gammaln, roots_jacobi

__all__ = [
    "FsParameters",
    "Grid",
    "Field",
    "make_params",
    "make_grid",
    "sphere_area",
    "angular_eigenvalue",
    "to_nodal",
    "from_nodal",
    "apply_nodal",
    "pointwise_power",
    "DEFAULT_N_T",
    "DEFAULT_MAX_MODE",
    "DEFAULT_PAD_DECAYS",
]

DEFAULT_N_T = 4097
DEFAULT_MAX_MODE = 8
# default pad, in units of the decay length 1/sqrt(Lambda)
DEFAULT_PAD_DECAYS = 40.0


@dataclass(frozen=True)
class FsParameters:
    """Exponents on the degenerate curve and the derived constants.

    ``s_inv`` is optional; :func:`cknlab.calculus.attach_sobolev_constant`
    returns a copy with it filled.  It does not take part in equality.
    """

    d: int
    p: float
    a: float
    b: float
    a_c: float
    lambda_fs: float
    A_p: float
    B_p: float
    s_inv: float | None = field(default=None, compare=False)

    @property
    def sqrt_lambda(self) -> float:
        return math.sqrt(self.lambda_fs)

    def as_dict(self) -> dict:
        return {"d": self.d, "p": self.p, "a": self.a, "b": self.b,
                "lambda_fs": self.lambda_fs}


def make_params(d: int, p: float) -> FsParameters:
    """Build the parameter set for dimension ``d`` and exponent ``p``.

    Raises
    ------
    ValueError
        If ``d < 2``, ``p <= 1``, or the pair lies outside the regime
        ``a < 0``.
    """
    if isinstance(d, bool) or int(d) != d or d < 2:
        raise ValueError(f"d must be an integer >= 2, got {d!r}")
    d = int(d)
    p = float(p)
    if not (p > 1.0) or not math.isfinite(p):
        raise ValueError(f"p must exceed 1, got {p!r}")
    lam = 4.0 * (d - 1) / ((p + 1.0) ** 2 - 4.0)
    a_c = (d - 2) / 2.0
    root = math.sqrt(lam)
    a = a_c - root
    if not a < 0.0:
        raise ValueError(
            f"(d={d}, p={p}) gives a = {a:.6g} >= 0; the construction needs a < 0")
    k = d * (p - 1.0) / (2.0 * (p + 1.0))  # k = 1 + a - b
    b = 1.0 + a - k
    return FsParameters(d=d, p=p, a=a, b=b, a_c=a_c, lambda_fs=lam,
                        A_p=p * (p - 1.0) / 2.0,
                        B_p=p * (p - 1.0) * (p - 2.0) / 6.0)


def b_fs(a: float, d: int) -> float:
    """The degeneracy curve ``b_FS(a)``."""
    a_c = (d - 2) / 2.0
    g = a_c - a
    return d * g / (2.0 * math.sqrt(g * g + d - 1.0)) + a - a_c


def p_from_ab(a: float, b: float, d: int) -> float:
    """Invert the exponent relation ``p = (d + 2k)/(d - 2k)``, ``k = 1 + a - b``."""
    k = 1.0 + a - b
    return (d + 2.0 * k) / (d - 2.0 * k)


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere S^n in R^{n+1} (``|S^0| = 2``)."""
    return 2.0 * math.exp(0.5 * (n + 1) * math.log(math.pi) - gammaln(0.5 * (n + 1)))


def angular_eigenvalue(j: int, d: int) -> float:
    """Eigenvalue ``j(j+d-2)`` of ``-Laplacian`` on S^{d-1} for degree ``j``."""
    if j < 0:
        raise ValueError("j must be nonnegative")
    return float(j * (j + d - 2))


@dataclass(frozen=True)
class Grid:
    """Tensor grid: uniform in ``t``, Gauss-Jacobi in ``cos(phi)``.

    ``tail_bound`` is metadata only (``exp(-sqrt(Lambda) * pad)``).
    """

    params: FsParameters
    t_min: float
    t_max: float
    n_t: int
    max_mode: int
    n_phi: int
    fd_order: int = 4
    tail_bound: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        if not self.t_min < self.t_max:
            raise ValueError("t_min must be below t_max")
        if self.n_t < 3:
            raise ValueError("n_t must be at least 3")
        if self.max_mode < 0:
            raise ValueError("max_mode must be nonnegative")
        if self.n_phi < 2 * self.max_mode + 2:
            raise ValueError("n_phi must be at least 2*max_mode + 2")
        if self.fd_order not in (2, 4):
            raise ValueError("fd_order must be 2 or 4")
        if self.fd_order == 4 and self.n_t < 5:
            raise ValueError("fourth-order differencing needs n_t >= 5")

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def n_modes(self) -> int:
        return self.max_mode + 1

    @cached_property
    def t(self) -> np.ndarray:
        t = np.linspace(self.t_min, self.t_max, self.n_t)
        t.setflags(write=False)
        return t

    @cached_property
    def h(self) -> float:
        return (self.t_max - self.t_min) / (self.n_t - 1)

    @cached_property
    def area(self) -> float:
        """``|S^{d-1}|``."""
        return sphere_area(self.d - 1)

    @cached_property
    def _angular(self):
        alpha = (self.d - 3) / 2.0
        x, w = roots_jacobi(self.n_phi, alpha, alpha)
        w = w * sphere_area(self.d - 2)
        raw = np.array([eval_jacobi(j, alpha, alpha, x) for j in range(self.n_modes)])
        norms = np.sqrt((raw ** 2) @ w)
        basis = raw / norms[:, None]
        basis = basis * np.sign(np.array([eval_jacobi(j, alpha, alpha, 1.0)
                                          for j in range(self.n_modes)]))[:, None]
        gram = (basis * w) @ basis.T
        err = np.max(np.abs(gram - np.eye(self.n_modes)))
        if err > 1e-12:
            raise RuntimeError(f"angular basis not orthonormal (error {err:.2e})")
        for arr in (x, w, basis):
            arr.setflags(write=False)
        return x, w, basis, (norms, alpha)

    @property
    def nodes(self) -> np.ndarray:
        """Angular nodes ``x_k = cos(phi_k)``."""
        return self._angular[0]

    @property
    def weights(self) -> np.ndarray:
        """Angular weights; they sum to ``|S^{d-1}|``."""
        return self._angular[1]

    @property
    def basis(self) -> np.ndarray:
        """``G_j(x_k)``, shape ``(max_mode+1, n_phi)``."""
        return self._angular[2]

    def harmonic(self, j: int, x) -> np.ndarray:
        """Evaluate ``G_j`` at arbitrary ``x = cos(phi)``."""
        norms, alpha = self._angular[3]
        sign = np.sign(eval_jacobi(j, alpha, alpha, 1.0))
        return sign * eval_jacobi(j, alpha, alpha, np.asarray(x, float)) / norms[j]

    @cached_property
    def mu(self) -> np.ndarray:
        mu = np.array([angular_eigenvalue(j, self.d) for j in range(self.n_modes)])
        mu.setflags(write=False)
        return mu

    def angular_factor(self, j: int) -> float:
        """Coefficient ``c`` with ``theta_d**j = c * G_j`` for ``j`` in {0, 1}."""
        if j == 0:
            return math.sqrt(self.area)
        if j == 1:
            return math.sqrt(self.area / self.d)
        raise ValueError("angular_factor is defined for j = 0, 1")

    # ----- operators in t -----------------------------------------------
    @cached_property
    def stencil(self) -> tuple:
        """Coefficients of ``-d^2/dt^2`` at offsets 0, 1, 2 (symmetric)."""
        h2 = self.h ** 2
        if self.fd_order == 2:
            return (2.0 / h2, -1.0 / h2)
        return (30.0 / (12.0 * h2), -16.0 / (12.0 * h2), 1.0 / (12.0 * h2))

    def apply_stiffness(self, u: np.ndarray) -> np.ndarray:
        """Apply ``-d^2/dt^2`` along the last axis, zero boundary values.

        Values outside the grid are taken as zero, which makes the operator
        on interior nodes a symmetric positive definite Toeplitz matrix.
        """
        u = np.asarray(u, float)
        c = self.stencil
        width = len(c) - 1
        pad = [(0, 0)] * (u.ndim - 1) + [(width, width)]
        up = np.pad(u, pad)
        n = u.shape[-1]
        # c_0 = -2 sum_{k>=1} c_k, so the stencil is sum_k c_k (u_{i-k} - u_i +
        # u_{i+k} - u_i); differencing neighbours first avoids cancelling
        # O(u/h^2) terms
        out = np.zeros_like(u)
        for k in range(1, width + 1):
            out = out + c[k] * ((up[..., width - k:width - k + n] - u)
                                + (up[..., width + k:width + k + n] - u))
        out[..., 0] = 0.0
        out[..., -1] = 0.0
        return out

    @cached_property
    def stiffness_matrix(self) -> sp.csc_matrix:
        """Interior ``-d^2/dt^2`` as a sparse matrix (size ``n_t - 2``)."""
        n = self.n_t - 2
        c = self.stencil
        offsets, diags = [], []
        for k, ck in enumerate(c):
            for off in ({0} if k == 0 else {k, -k}):
                offsets.append(off)
                diags.append(np.full(n - abs(off), ck))
        return sp.diags(diags, offsets, shape=(n, n), format="csc")

    def coercive_bands(self, j: int) -> np.ndarray:
        """Upper banded storage of ``-d^2/dt^2 + mu_j + Lambda`` (interior)."""
        n = self.n_t - 2
        c = self.stencil
        width = len(c) - 1
        ab = np.zeros((width + 1, n))
        ab[width, :] = c[0] + self.mu[j] + self.params.lambda_fs
        for k in range(1, width + 1):
            ab[width - k, k:] = c[k]
        return ab


def make_grid(params: FsParameters, centers, pad: float | None = None,
              n_t: int = DEFAULT_N_T, max_mode: int = DEFAULT_MAX_MODE,
              n_phi: int | None = None, fd_order: int = 4) -> Grid:
    """Grid covering ``[min(centers) - pad, max(centers) + pad]``.

    ``pad`` defaults to ``40/sqrt(Lambda)``; ``n_phi`` defaults to
    ``4*(max_mode+1)``, twice the minimal Gauss size.
    """
    centers = [float(c) for c in centers]
    if not centers:
        raise ValueError("centers must be nonempty")
    if pad is None:
        pad = DEFAULT_PAD_DECAYS / params.sqrt_lambda
    if not pad > 0:
        raise ValueError("pad must be positive")
    if n_phi is None:
        n_phi = 4 * (max_mode + 1)
    return Grid(params=params, t_min=min(centers) - pad, t_max=max(centers) + pad,
                n_t=int(n_t), max_mode=int(max_mode), n_phi=int(n_phi),
                fd_order=fd_order, tail_bound=math.exp(-params.sqrt_lambda * pad))


class Field:
    """Axisymmetric field: ``modes[j]`` is the profile multiplying ``G_j``.

    Fields are immutable; boundary values are forced to zero.
    ``aliasing`` carries the tail-energy diagnostic of a nodal projection.
    """

    __array_priority__ = 100

    def __init__(self, grid: Grid, modes, aliasing: float | None = None):
        m = np.array(modes, dtype=float)
        if m.shape != (grid.n_modes, grid.n_t):
            raise ValueError(f"modes must have shape {(grid.n_modes, grid.n_t)}, got {m.shape}")
        m[:, 0] = 0.0
        m[:, -1] = 0.0
        m.setflags(write=False)
        self.grid = grid
        self.modes = m
        self.aliasing = aliasing

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros((grid.n_modes, grid.n_t)))

    @classmethod
    def from_profile(cls, grid: Grid, values, mode: int = 0) -> "Field":
        """Field equal to ``values(t) * theta_d**mode`` (``mode`` in {0, 1})."""
        m = np.zeros((grid.n_modes, grid.n_t))
        m[mode] = grid.angular_factor(mode) * np.asarray(values, float)
        return cls(grid, m)

    def profile(self, mode: int = 0) -> np.ndarray:
        """Inverse of :meth:`from_profile` for a single mode."""
        return self.modes[mode] / self.grid.angular_factor(mode)

    def evaluate(self, x) -> np.ndarray:
        """Values at ``cos(phi) = x`` for every ``t`` node."""
        g = np.array([self.grid.harmonic(j, x) for j in range(self.grid.n_modes)])
        return np.tensordot(g, self.modes, axes=(0, 0)).T

    def _check(self, other: "Field"):
        if not isinstance(other, Field):
            return NotImplemented
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return None

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return Field(self.grid, self.modes + other.modes)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return Field(self.grid, self.modes - other.modes)

    def __mul__(self, c):
        if isinstance(c, Field):
            return NotImplemented
        return Field(self.grid, self.modes * float(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return Field(self.grid, self.modes / float(c))

    def __neg__(self):
        return Field(self.grid, -self.modes)

    def times_profile(self, values) -> "Field":
        """Multiply by a function of ``t`` only (acts mode-wise)."""
        return Field(self.grid, self.modes * np.asarray(values, float)[None, :])

    def only_modes(self, keep) -> "Field":
        m = np.zeros_like(self.modes)
        keep = list(keep)
        m[keep] = self.modes[keep]
        return Field(self.grid, m)

    def mode_l2(self) -> np.ndarray:
        """Discrete L2 norm of each profile."""
        return np.sqrt(self.grid.h * np.sum(self.modes ** 2, axis=1))

    def __repr__(self):
        return f"Field(n_modes={self.grid.n_modes}, n_t={self.grid.n_t})"


def to_nodal(f: Field) -> np.ndarray:
    """Values on the ``(t_i, phi_k)`` lattice, shape ``(n_t, n_phi)``."""
    return f.modes.T @ f.grid.basis


def from_nodal(grid: Grid, values: np.ndarray) -> Field:
    """Project lattice values onto modes ``0..max_mode``.

    The returned field carries the relative energy not captured by the
    retained modes as ``aliasing``.
    """
    values = np.asarray(values, float)
    weighted = values * grid.weights[None, :]
    modes = (weighted @ grid.basis.T).T
    total = grid.h * float(np.sum(weighted * values))
    kept = grid.h * float(np.sum(modes ** 2))
    tail = max(total - kept, 0.0) / total if total > 0 else 0.0
    return Field(grid, modes, aliasing=tail)


def apply_nodal(func, *fields: Field) -> Field:
    """Evaluate ``func`` on nodal values of ``fields`` and project back."""
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise ValueError("fields live on different grids")
    return from_nodal(grid, func(*[to_nodal(f) for f in fields]))


def signed_power(x: np.ndarray, q: float) -> np.ndarray:
    return np.sign(x) * np.abs(x) ** q


def pointwise_power(f: Field, q: float, signed: bool = True) -> Field:
    """``|f|^{q-1} f`` (``signed``) or ``|f|^q``, computed nodally."""
    if not q > 0:
        raise ValueError("q must be positive")
    if signed:
        return apply_nodal(lambda u: signed_power(u, q), f)
    return apply_nodal(lambda u: np.abs(u) ** q, f)
