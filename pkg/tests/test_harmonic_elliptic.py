from __future__ import annotations

import numpy as np
import pytest

from elreduce.core.exceptions import CoercivityError, ConfigError, SingularSystemError
from elreduce.core.harmonic_elliptic import (
    BandedOperator,
    HarmonicField,
    HInnerProduct,
    ModeOperators,
    RadialGrid,
    apply_Lu,
    assemble_operator,
    background_margins,
    coercivity_margin,
    coercivity_margins,
    green_bounds,
    green_function,
    inner_weight,
    linearized_potential,
    solve_scalar,
)
from elreduce.core.model import stability_margin


@pytest.fixture
def grid() -> RadialGrid:
    return RadialGrid.graded(7, delta=0.01, r_max=1.0, ratio=1.05)


def _backward_residual(op: BandedOperator, x: np.ndarray, b: np.ndarray) -> float:
    """|A x - b| relative to |A| |x| + |b|."""
    scale = np.linalg.norm(np.abs(op.to_dense()) @ np.abs(x)) + np.linalg.norm(b)
    return float(np.linalg.norm(op.matvec(x) - b) / scale)


@pytest.mark.parametrize("n", [6, 7, 10])
def test_pure_laplacian_green_function_is_exact_at_nodes(n):
    grid = RadialGrid.graded(n, delta=0.02, r_max=2.0)
    green = green_function(assemble_operator(grid, 0.0, 0))
    r = grid.nodes[1:]
    exact = (r ** (2 - n) - grid.r_max ** (2 - n)) / ((n - 2) * grid.omega)
    np.testing.assert_allclose(green[1:], exact, rtol=1e-9, atol=1e-12 * exact[0])


def test_green_bounds_near_one(grid):
    green = green_function(assemble_operator(grid, 0.0, 0))
    c1, c2 = green_bounds(grid, green, 0.01, 0.1)
    assert 0.99 < c1 <= c2 <= 1.0 + 1e-9
    with pytest.raises(ConfigError):
        green_bounds(grid, green, 5.0, 6.0)


def test_positive_potential_lowers_green_function(grid):
    free = green_function(assemble_operator(grid, 0.0, 0))
    damped = green_function(assemble_operator(grid, 4.0, 0))
    assert np.all(damped[:-1] > 0)
    assert np.all(damped[:-1] <= free[:-1])


def test_coercivity_margins(grid):
    margins = coercivity_margins(grid, 1.0)
    assert margins[0] > 0
    assert margins[1] > margins[0]
    assert coercivity_margin(assemble_operator(grid, -1e6, 0)) < 0


def test_solve_scalar_inverts_strong_application(grid):
    op = assemble_operator(grid, 1.0, 0)
    rhs = np.exp(-((grid.nodes / 0.1) ** 2))
    u = solve_scalar(op, rhs)
    assert u[-1] == 0.0
    np.testing.assert_allclose(op.apply_strong(u)[:-1], rhs[:-1], rtol=1e-9, atol=1e-12)


def test_solve_scalar_detects_lost_coercivity(grid):
    op = assemble_operator(grid, -1e6, 0)
    with pytest.raises(CoercivityError):
        solve_scalar(op, np.ones(grid.size))


@pytest.mark.parametrize("potential", [0.0, 1e4])
def test_solve_scalar_residual_on_wide_graded_grid(potential):
    # node spacing spans several decades, as on the reduction grids
    grid = RadialGrid.graded(7, delta=1e-4, r_max=6.0, ratio=1.03)
    op = assemble_operator(grid, potential, 0)
    rhs = np.exp(-((grid.nodes / 1e-3) ** 2)) + 1e-3
    u = solve_scalar(op, rhs)
    b = op.mass * op.restrict(rhs)
    assert _backward_residual(op, op.restrict(u), b) <= 1e-13


def test_green_function_solves_point_source(grid):
    op = assemble_operator(grid, 2.0, 0)
    green = green_function(op)
    b = np.zeros(op.size)
    b[0] = 1.0 / grid.omega
    assert _backward_residual(op, op.restrict(green), b) <= 1e-13


def test_banded_lu_handles_indefinite_operator(grid):
    # lowest l = 0 eigenvalue on the unit ball is about 33, so V = -50 is indefinite but invertible
    op = assemble_operator(grid, -50.0, 0)
    assert coercivity_margin(op) < 0
    b = op.mass * op.restrict(np.ones(grid.size))
    assert _backward_residual(op, op.solve(b), b) <= 1e-12
    with pytest.raises(CoercivityError):
        solve_scalar(op, np.ones(grid.size))


def test_banded_lu_rejects_singular_operator(grid):
    op = assemble_operator(grid, 0.0, 0)
    singular = BandedOperator(
        grid=grid, l=0, index=op.index, diag=np.zeros(op.size), off=np.zeros(op.size - 1), mass=op.mass
    )
    with pytest.raises(SingularSystemError):
        singular.solve(np.ones(op.size))


def test_background_margins_follow_solved_state(model7, ground7):
    grid = RadialGrid.graded(model7.n, delta=model7.mu, r_max=5.0)
    margins = background_margins(model7, grid, ground7.u0)
    # the Laplacian only adds to the constant potential
    assert margins[0] >= ground7.stability_margin * (1.0 - 1e-9)
    assert margins[1] > margins[0]


def test_background_margins_detect_unstable_state(model7, ground7):
    u = ground7.u0
    while stability_margin(model7, u) > -10.0:
        u *= 2.0
    grid = RadialGrid.graded(model7.n, delta=model7.mu, r_max=5.0)
    # first Dirichlet eigenvalue of the radius 5 ball is below 2 for n = 7
    assert background_margins(model7, grid, u)[0] < 0


def test_assemble_rejects(grid):
    with pytest.raises(ConfigError):
        assemble_operator(grid, 0.0, 2)
    potential = np.zeros(grid.size)
    potential[3] = np.nan
    with pytest.raises(ConfigError):
        assemble_operator(grid, potential, 0)


def test_grid_validation():
    with pytest.raises(ConfigError):
        RadialGrid(7, np.array([0.1, 0.2, 0.3]))
    with pytest.raises(ConfigError):
        RadialGrid(7, np.array([0.0, 0.2, 0.2, 0.3]))
    with pytest.raises(ConfigError, match="fewer than"):
        RadialGrid.graded(7, delta=0.01, r_max=1.0, ratio=3.0)


def test_harmonic_product_rules(grid):
    rng = np.random.default_rng(5)
    n = grid.n
    a = HarmonicField(grid, rng.normal(size=grid.size), rng.normal(size=(n, grid.size)))
    b = HarmonicField(grid, rng.normal(size=grid.size), rng.normal(size=(n, grid.size)))
    ab, ba = a.product(b), b.product(a)
    np.testing.assert_allclose(ab.mode0, ba.mode0)
    np.testing.assert_allclose(ab.mode1, ba.mode1)
    np.testing.assert_allclose(ab.mode0, a.mode0 * b.mode0 + np.sum(a.mode1 * b.mode1, axis=0) / n)

    ones = HarmonicField.radial(grid, np.ones(grid.size))
    np.testing.assert_allclose(a.product(ones).mode1, a.mode1)
    assert np.all(a.mode1[:, 0] == 0.0)


def test_harmonic_field_bounds(grid):
    e1 = np.eye(grid.n)[0]
    profile = np.linspace(0.0, 1.0, grid.size)
    field_ = HarmonicField.radial(grid, np.full(grid.size, 2.0)) + HarmonicField.directional(grid, profile, e1)
    np.testing.assert_allclose(field_.pointwise_bound(), 2.0 + profile)
    np.testing.assert_allclose(field_.pointwise_min(), 2.0 - profile)
    assert field_.sup_norm() == pytest.approx(3.0)
    assert field_.at(grid.size - 1, e1) == pytest.approx(3.0)
    assert field_.at(grid.size - 1, -e1) == pytest.approx(1.0)


def test_field_shape_mismatch(grid):
    with pytest.raises(ConfigError):
        HarmonicField(grid, np.zeros(3), np.zeros((grid.n, grid.size)))


def test_directional_l2_carries_sphere_average(grid):
    product = HInnerProduct(grid, 1.0)
    profile = np.exp(-grid.nodes / 0.1) * grid.nodes
    radial = HarmonicField.radial(grid, profile)
    directional = HarmonicField.directional(grid, profile, np.eye(grid.n)[2])
    assert product.l2(directional, directional) == pytest.approx(product.l2(radial, radial) / grid.n, rel=1e-12)


def test_inner_product_is_symmetric_and_positive(grid):
    rng = np.random.default_rng(8)
    product = HInnerProduct(grid, 1.0)
    a = HarmonicField(grid, rng.normal(size=grid.size), rng.normal(size=(grid.n, grid.size)))
    b = HarmonicField(grid, rng.normal(size=grid.size), rng.normal(size=(grid.n, grid.size)))
    assert product(a, b) == pytest.approx(product(b, a), rel=1e-10)
    assert product.norm(a) > 0


def test_inner_weight():
    np.testing.assert_array_equal(inner_weight(np.array([1.0, 2.0])), [1.0, 2.0])
    np.testing.assert_array_equal(inner_weight(np.array([-1.0, 2.0])), [1.0, 3.0])


def test_linearized_potential_at_constant_background(model7, ground7):
    grid = RadialGrid.graded(model7.n, delta=model7.mu, r_max=1.0)
    u = HarmonicField.radial(grid, np.full(grid.size, ground7.u0))
    h = HarmonicField.radial(grid, np.full(grid.size, model7.h0))
    potential = linearized_potential(model7, u, model7.rho0, h)
    np.testing.assert_allclose(potential.mode0, stability_margin(model7, ground7.u0), rtol=1e-12)


def test_apply_Lu_combines_laplacian_and_potential(model7, ground7):
    grid = RadialGrid.graded(model7.n, delta=model7.mu, r_max=1.0)
    u = HarmonicField.radial(grid, np.full(grid.size, ground7.u0))
    v = HarmonicField.radial(grid, np.exp(-((grid.nodes / 0.05) ** 2)))
    result = apply_Lu(model7, u, model7.rho0, v)
    expected = ModeOperators(grid).apply(v).mode0 + stability_margin(model7, ground7.u0) * v.mode0
    np.testing.assert_allclose(result.mode0[:-1], expected[:-1], rtol=1e-10, atol=1e-14)
    assert result.mode0[-1] == 0.0


def test_linearized_potential_needs_positive_background(model7, grid):
    u = HarmonicField.radial(grid, np.full(grid.size, -1.0))
    with pytest.raises(ConfigError):
        linearized_potential(model7, u, 0.0, HarmonicField.zeros(grid))
