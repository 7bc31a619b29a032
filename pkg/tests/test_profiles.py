from __future__ import annotations

import numpy as np
import pytest

from elreduce.core.exceptions import ConfigError
from elreduce.core.model import critical_exponent
from elreduce.core.profiles import (
    BubbleParams,
    bubble,
    bubble_laplacian_radial,
    bubble_radial,
    bubble_residual,
    kernel_domination_constant,
    kernel_radial,
    kernel_V,
    kernel_Z,
    standard_bubble_U,
    theta,
)


def radial_laplacian(fn, r: np.ndarray, n: int, h: float) -> np.ndarray:
    """Nonnegative radial Laplacian -u'' - (n-1)/r u' by central differences."""
    second = (fn(r + h) - 2.0 * fn(r) + fn(r - h)) / h**2
    first = (fn(r + h) - fn(r - h)) / (2.0 * h)
    return -second - (n - 1) * first / r


def on_axis(r: np.ndarray, n: int) -> np.ndarray:
    y = np.zeros((np.size(r), n))
    y[:, 0] = r
    return y


@pytest.fixture
def params7(model7) -> BubbleParams:
    return BubbleParams.from_model(model7, 1.3, np.array([0.4] + [0.0] * 6))


@pytest.mark.parametrize("n", [6, 7, 9])
def test_standard_bubble_solves_critical_equation(n):
    f = 1.7
    p = critical_exponent(n)
    r = np.linspace(0.3, 4.0, 12)

    def u(radius):
        return standard_bubble_U(f, n, on_axis(radius, n))

    lhs = radial_laplacian(u, r, n, 1e-4)
    np.testing.assert_allclose(lhs, f * u(r) ** (p - 1), rtol=1e-6)


@pytest.mark.parametrize("n", [6, 8])
def test_kernel_elements_are_scaling_and_translation_derivatives(n):
    f = 0.9
    y = np.array([[0.7, -0.2] + [0.1] * (n - 2), [1.5] + [0.0] * (n - 1)])
    h = 1e-6

    def scaled(lam):
        return lam ** ((n - 2) / 2.0) * standard_bubble_U(f, n, lam * y)

    d_scale = (scaled(1.0 + h) - scaled(1.0 - h)) / (2.0 * h)
    np.testing.assert_allclose(kernel_V(0, f, n, y), -2.0 / (n - 2) * d_scale, rtol=1e-7, atol=1e-12)

    shift = np.zeros(n)
    shift[0] = h
    d_shift = (standard_bubble_U(f, n, y + shift) - standard_bubble_U(f, n, y - shift)) / (2.0 * h)
    np.testing.assert_allclose(kernel_V(1, f, n, y), -n * d_shift, rtol=1e-7, atol=1e-12)


def test_kernel_V_solves_linearized_equation():
    n, f = 7, 1.0
    p = critical_exponent(n)
    r = np.linspace(0.5, 3.0, 9)

    def v0(radius):
        return kernel_V(0, f, n, on_axis(radius, n))

    lhs = radial_laplacian(v0, r, n, 1e-4)
    rhs = (p - 1) * f * standard_bubble_U(f, n, on_axis(r, n)) ** (p - 2) * v0(r)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-9)


def test_kernel_V_rejects_index():
    with pytest.raises(ConfigError):
        kernel_V(8, 1.0, 7, np.zeros((1, 7)))


def test_kernel_Z_is_rescaled_V_on_plateau(params7):
    n, delta = params7.n, params7.delta
    rng = np.random.default_rng(3)
    x = params7.center + 2.0 * delta * rng.normal(size=(20, n))
    y = (x - params7.center) / delta
    for i in range(n + 1):
        expected = delta ** (1.0 - n / 2.0) * kernel_V(i, params7.f_center, n, y)
        np.testing.assert_allclose(kernel_Z(i, params7, x), expected, rtol=1e-10, atol=1e-10 * delta ** (1.0 - n / 2.0))


def test_kernel_radial_matches_pointwise(params7):
    d = np.array([0.1, 1.0, 7.0]) * params7.delta
    x = params7.center + on_axis(d, params7.n)
    np.testing.assert_allclose(kernel_Z(0, params7, x), kernel_radial(0, params7, d), rtol=1e-12)
    np.testing.assert_allclose(kernel_Z(1, params7, x), kernel_radial(1, params7, d), rtol=1e-12)
    np.testing.assert_allclose(bubble(params7, x), bubble_radial(params7, d), rtol=1e-12)


def test_kernel_domination(params7):
    rng = np.random.default_rng(11)
    x = params7.center + params7.delta * rng.standard_cauchy(size=(200, params7.n))
    c = kernel_domination_constant(params7)
    w = bubble(params7, x)
    for i in range(params7.n + 1):
        assert np.all(np.abs(kernel_Z(i, params7, x)) <= c * w * (1.0 + 1e-12) + 1e-300)


def test_bubble_laplacian_matches_finite_differences(params7):
    # Includes the cutoff annulus r_cut < d < 2 r_cut
    R = params7.r_cut
    d = np.array([0.3, 0.9, 1.2, 1.5, 1.8]) * R
    lhs = radial_laplacian(lambda s: bubble_radial(params7, s), d, params7.n, 1e-5 * R)
    np.testing.assert_allclose(bubble_laplacian_radial(params7, d), lhs, rtol=1e-5)


def test_bubble_residual_vanishes_on_plateau(model7, params7):
    n = params7.n
    d_in = np.array([0.1, 1.0, 10.0]) * params7.delta
    inside = bubble_residual(params7, model7, params7.center + on_axis(d_in, n))
    w = bubble(params7, params7.center + on_axis(d_in, n))
    assert np.all(np.abs(inside) <= 1e-12 * params7.f_center * w ** (critical_exponent(n) - 1))

    annulus = bubble_residual(params7, model7, params7.center + on_axis(np.array([1.5 * params7.r_cut]), n))
    assert np.abs(annulus[0]) > 0


def test_theta(params7):
    x = params7.center + on_axis(np.array([2.0]), params7.n)
    assert theta(params7, x)[0] == pytest.approx(params7.delta + 2.0)


def test_bubble_params_validation(model7):
    with pytest.raises(ConfigError, match="r_cut"):
        BubbleParams(t=1.0, mu=0.5, center=np.zeros(7), f_center=1.0, r_cut=0.1, n=7)
    with pytest.raises(ConfigError):
        BubbleParams(t=-1.0, mu=0.01, center=np.zeros(7), f_center=1.0, r_cut=0.5, n=7)
    with pytest.raises(ConfigError):
        BubbleParams(t=1.0, mu=0.01, center=np.zeros(3), f_center=1.0, r_cut=0.5, n=7)
    params = BubbleParams.from_model(model7, 2.0)
    assert params.delta == pytest.approx(2.0 * model7.mu)
    assert params.a == pytest.approx(model7.f0 / 35.0)
