import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad
from scipy.special import beta as beta_fn

from cknlab.bubbles import (BubbleSpec, bubble_sum, d2psi_values, dpsi_values,
                            euclidean_W, kernel_profile, kernel_values,
                            psi_profile, psi_values)
from cknlab.cylinder import make_grid, make_params


def sech_power_integral(prm, q):
    """int_R Psi^q dt via int sech^n = B(n/2, 1/2)."""
    c = ((prm.p + 1) * prm.lambda_fs / 2) ** (1 / (prm.p - 1))
    kappa = prm.sqrt_lambda * (prm.p - 1) / 2
    n = 2 * q / (prm.p - 1)
    return c ** q * beta_fn(n / 2, 0.5) / kappa


def test_peak_value(p32):
    assert_allclose(psi_values(p32, 0.0), 2.4, rtol=1e-15)


def test_psi_cube_integral_oracle(p32):
    assert_allclose(sech_power_integral(p32, 3), 23.3148, atol=1e-4)
    val, _ = quad(lambda t: psi_values(p32, t) ** 3, -60, 60, epsabs=1e-13, limit=200)
    assert_allclose(val, sech_power_integral(p32, 3), rtol=1e-10)


@pytest.mark.parametrize("d,p", [(3, 2.0), (2, 3.0), (3, 1.5), (5, 1.2)])
def test_profile_equation(d, p):
    prm = make_params(d, p)
    t = np.linspace(-8, 8, 41)
    psi = psi_values(prm, t)
    assert_allclose(d2psi_values(prm, t), prm.lambda_fs * psi - psi ** p, rtol=1e-12, atol=1e-14)
    # derivative against a centered difference
    eps = 1e-5
    fd = (psi_values(prm, t + eps) - psi_values(prm, t - eps)) / (2 * eps)
    assert_allclose(dpsi_values(prm, t), fd, rtol=1e-7, atol=1e-10)
    # first integral: Psi'^2 = Lambda Psi^2 - 2 Psi^{p+1}/(p+1)
    assert_allclose(dpsi_values(prm, t) ** 2,
                    prm.lambda_fs * psi ** 2 - 2 * psi ** (p + 1) / (p + 1),
                    rtol=1e-9, atol=1e-12 * prm.lambda_fs * np.max(psi) ** 2)


def test_no_overflow_far_out():
    prm = make_params(3, 1.01)
    vals = psi_values(prm, np.array([-1e4, 0.0, 1e4]))
    assert np.all(np.isfinite(vals)) and vals[0] == 0.0
    assert_allclose(psi_values(prm, 0.0), (2.01 * prm.lambda_fs / 2) ** 100, rtol=1e-10)


def test_even_and_odd(p32, grid32):
    psi = psi_profile(p32, 0.0, grid32).profile(0)
    dpsi = dpsi_values(p32, grid32.t)
    assert_allclose(psi, psi[::-1], rtol=1e-12)
    assert_allclose(dpsi, -dpsi[::-1], atol=1e-14)


def test_kernel_is_power(p32):
    t = np.linspace(-5, 5, 11)
    assert_allclose(kernel_values(p32, t), psi_values(p32, t) ** 1.5, rtol=1e-13)


def test_kernel_index(p32, grid32):
    with pytest.raises(ValueError):
        kernel_profile(p32, 0.0, grid32, l=1)
    assert_allclose(kernel_profile(p32, 0.0, grid32, l=3).modes,
                    kernel_profile(p32, 0.0, grid32).modes)


def test_unresolved_warns(p32, grid32):
    with pytest.warns(UserWarning):
        psi_profile(p32, grid32.t_max - 1.0, grid32)


def test_params_mismatch(grid32):
    with pytest.raises(ValueError):
        psi_profile(make_params(3, 1.5), 0.0, grid32)


def test_bubble_sum(p32):
    g = make_grid(p32, [0.0, 10.0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        one = bubble_sum([BubbleSpec(1.0, 0.0)], g)
    assert_allclose(one.modes, psi_profile(p32, 0.0, g).modes)
    two = bubble_sum([BubbleSpec(2.0, 0.0), BubbleSpec(0.5, 10.0)], g)
    assert_allclose(two.modes, 2 * psi_profile(p32, 0, g).modes + 0.5 * psi_profile(p32, 10, g).modes)
    with pytest.raises(ValueError):
        BubbleSpec(0.0, 1.0)


@pytest.mark.parametrize("d,p", [(3, 2.0), (3, 1.5), (2, 3.0)])
def test_euclidean_link(d, p):
    # the cylinder transform: W(r) = r^{-(a_c - a)} Psi(-ln r)
    prm = make_params(d, p)
    r = np.geomspace(1e-3, 1e3, 25)
    assert_allclose(euclidean_W(prm, r), r ** (-prm.sqrt_lambda) * psi_values(prm, -np.log(r)),
                    rtol=1e-12)
    with pytest.raises(ValueError):
        euclidean_W(prm, 0.0)
