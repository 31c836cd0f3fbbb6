import math

import numpy as np
from numpy.testing import assert_allclose
from scipy.special import beta as beta_fn

from cknlab.bubbles import dpsi_profile, kernel_profile, psi_profile
from cknlab.calculus import (bubble_count, bubble_energy, deficit, dual_norm,
                             h1_inner, l2_inner, lp_norm, norm, residual,
                             riesz_solve, sobolev_constant)
from cknlab.cylinder import Field, make_grid


def psi_lp_oracle(prm, q):
    c = ((prm.p + 1) * prm.lambda_fs / 2) ** (1 / (prm.p - 1))
    kappa = prm.sqrt_lambda * (prm.p - 1) / 2
    from cknlab.cylinder import sphere_area
    return sphere_area(prm.d - 1) * c ** q * beta_fn(q / (prm.p - 1), 0.5) / kappa


def test_norm_of_constant_mode0(grid32):
    # ||Psi||^2 = int Psi^{p+1} by the profile equation
    psi = psi_profile(grid32.params, 0.0, grid32)
    assert_allclose(norm(psi) ** 2, psi_lp_oracle(grid32.params, 3), rtol=1e-8)
    assert_allclose(lp_norm(psi, 3) ** 3, psi_lp_oracle(grid32.params, 3), rtol=1e-10)


def test_el_identity(grid32):
    psi = psi_profile(grid32.params, 0.0, grid32)
    a, b = norm(psi) ** 2, lp_norm(psi, 3.0) ** 3
    assert abs(a - b) <= 1e-8 * a


def test_sobolev_constant(p32, grid32):
    s = sobolev_constant(p32, grid32)
    oracle = psi_lp_oracle(p32, 3) ** (1 / 3)
    assert_allclose(s, oracle, rtol=1e-9)
    assert_allclose(s, (4 * math.pi * 23.3148) ** (1 / 3), atol=1e-4)
    fine = make_grid(p32, [0.0], n_t=8193)
    assert abs(sobolev_constant(p32, fine) - s) <= 1e-8


def test_sobolev_center_independent(p32):
    g = make_grid(p32, [0.0, 5.0])
    psi = psi_profile(p32, 0.0, g)
    psi5 = psi_profile(p32, 5.0, g)
    q1 = norm(psi) ** 2 / lp_norm(psi, 3) ** 2
    q2 = norm(psi5) ** 2 / lp_norm(psi5, 3) ** 2
    assert_allclose(q1, q2, rtol=1e-10)
    assert_allclose(q1, sobolev_constant(p32, g), rtol=1e-10)


def test_riesz_inverse_of_forward(grid32):
    from cknlab.bubbles import kernel_values
    prm = grid32.params
    w = kernel_values(prm, grid32.t)
    g = Field.from_profile(grid32, w, 1)
    from cknlab.calculus import apply_coercive
    f = apply_coercive(g)
    assert_allclose(riesz_solve(f).riesz.modes, g.modes, atol=1e-10 * np.max(w))
    assert riesz_solve(Field.zeros(grid32)).value == 0.0


def test_spectral_bound(grid32):
    rng = np.random.default_rng(3)
    prof = np.convolve(rng.normal(size=grid32.n_t), np.ones(31) / 31, mode="same")
    f = Field.from_profile(grid32, prof, 0)
    l2 = math.sqrt(l2_inner(f, f))
    assert dual_norm(f) <= l2 / math.sqrt(grid32.params.lambda_fs)


def test_residual_of_psi_small(grid32):
    psi = psi_profile(grid32.params, 0.0, grid32)
    assert dual_norm(residual(psi)) <= 1e-6 * norm(psi)


def test_deficit_extremal_and_scaling(grid32):
    psi = psi_profile(grid32.params, 0.0, grid32)
    scale = norm(psi) ** 2
    assert abs(deficit(psi)) <= 1e-8 * scale
    for c in (0.5, 0.9, 1.1, 2.0):
        # deficit(c Psi) = (c^2 - c^2) ||Psi||^2 ... brute evaluation
        u = c * psi
        brute = norm(u) ** 2 - sobolev_constant(grid32.params, grid32) * lp_norm(u, 3) ** 2
        assert_allclose(deficit(u), brute, rtol=1e-12, atol=1e-9 * scale)
    # off-extremal profile: strict inequality
    w = psi_profile(grid32.params, 0.0, grid32) + 0.3 * dpsi_profile(grid32.params, 0.0, grid32)
    assert deficit(w) > 1e-6 * norm(w) ** 2


def test_deficit_reference_agrees(grid32):
    psi = psi_profile(grid32.params, 0.0, grid32)
    w = kernel_profile(grid32.params, 0.0, grid32)
    u = psi + 0.1 * w
    assert_allclose(deficit(u, reference=psi), deficit(u), rtol=1e-6)


def test_deficit_quartic(grid32):
    psi = psi_profile(grid32.params, 0.0, grid32)
    w = kernel_profile(grid32.params, 0.0, grid32)
    betas = np.geomspace(1e-3, 1e-1, 7)
    vals = [deficit(psi + b * w, reference=psi) for b in betas]
    slope = np.polyfit(np.log(betas), np.log(vals), 1)[0]
    assert abs(slope - 4.0) <= 0.1


def test_bubble_count(p32):
    g = make_grid(p32, [0.0, 10.0])
    psi = psi_profile(p32, 0.0, g)
    assert bubble_count(psi).nu == 1
    assert bubble_count(psi + psi_profile(p32, 10.0, g)).nu == 2
    assert bubble_count(Field.zeros(g)).nu is None
    assert not bubble_count(Field.zeros(g)).in_window
    assert_allclose(bubble_energy(g), norm(psi) ** 2, rtol=1e-9)


def test_orthogonalities(grid32):
    prm = grid32.params
    psi = psi_profile(prm, 0.0, grid32)
    dp = dpsi_profile(prm, 0.0, grid32)
    w = kernel_profile(prm, 0.0, grid32)
    for a, b in ((psi, dp), (psi, w), (dp, w)):
        assert abs(h1_inner(a, b)) <= 1e-10 * norm(a) * norm(b)
