from __future__ import annotations

import numpy as np
import pytest

from elreduce.config import DEFAULT_CONFIG, numerics
from elreduce.core.exceptions import AdmissibilityError, ConfigError, ContractionError, RegimeError
from elreduce.core.expansion import normalized_lambdas
from elreduce.core.harmonic_elliptic import HarmonicField, RadialGrid
from elreduce.core.model import make_model, solve_ground_state
from elreduce.core.reduction import (
    CUTOFF_TAIL_MAX,
    RESIDUAL_TERMS,
    ReductionEngine,
    extract_lambdas,
    power_difference,
    project_axisymmetric,
    project_offkernel,
)
from elreduce.core.vector_green import convolve_LgT


def test_power_difference_matches_direct_evaluation():
    base = np.array([0.5, 2.0, 3.0])
    shifted = np.array([4.0, 2.5, 0.1])
    np.testing.assert_allclose(power_difference(base, shifted, 2.8), shifted**2.8 - base**2.8, rtol=1e-12)


def test_power_difference_keeps_small_increments():
    base = np.array([1.0, 7.0])
    shifted = base * (1.0 + 1e-12)
    # shifted - base is exact, so this is the increment the inputs actually carry
    increment = shifted - base
    expected = 2.8 * base**1.8 * increment
    np.testing.assert_allclose(power_difference(base, shifted, 2.8), expected, rtol=1e-9)


def test_power_difference_zero_base():
    np.testing.assert_allclose(power_difference(np.array([0.0]), np.array([2.0]), 1.8), [2.0**1.8])


def test_project_axisymmetric_exact_on_linear_cosines():
    grid = RadialGrid.graded(7, delta=0.01, r_max=1.0)
    axis = np.eye(7)[3]
    field_ = project_axisymmetric(grid, lambda r, c: 1.0 + 2.0 * c + 0.0 * r, axis)
    np.testing.assert_allclose(field_.mode0, 1.0, rtol=1e-12)
    np.testing.assert_allclose(field_.mode1[3, 1:], 2.0, rtol=1e-12)
    np.testing.assert_allclose(np.delete(field_.mode1, 3, axis=0), 0.0, atol=1e-15)


def test_engine_rejects_unsupported_models(config):
    bumped = make_model({**config, "s_bump": 0.3})
    with pytest.raises(ConfigError):
        ReductionEngine(bumped, None)
    with pytest.raises(RegimeError):
        ReductionEngine(make_model({**config, "lcf_flag": False}), None)


def test_parameter_box(model7, ground7):
    engine = ReductionEngine(model7, ground7)
    with pytest.raises(ConfigError):
        engine.check_parameters(100.0, None)
    with pytest.raises(ConfigError):
        engine.check_parameters(1.0, np.ones(7))
    with pytest.raises(ConfigError):
        engine.check_parameters(1.0, np.zeros(3))
    t, p = engine.check_parameters(2.0, None)
    assert t == 2.0
    np.testing.assert_array_equal(p, np.zeros(7))


@pytest.fixture(scope="module")
def context7(engine7):
    return engine7.context(1.0)


def test_kernel_basis_is_block_diagonal(context7):
    basis = context7.basis
    assert basis.condition < 1e6
    assert basis.max_offdiagonal == 0.0
    np.testing.assert_allclose(np.diag(basis.gram)[1:], basis.gram[1, 1], rtol=1e-12)


def test_offkernel_projection(context7):
    grid = context7.grid
    rng = np.random.default_rng(2)
    f = HarmonicField(grid, rng.normal(size=grid.size), rng.normal(size=(grid.n, grid.size)))
    projected = project_offkernel(f, context7.basis)
    coeffs = context7.basis.coefficients(projected)
    norms = np.array([context7.inner.norm(z) for z in context7.basis.elements])
    assert np.max(np.abs(coeffs) / norms) <= 1e-9 * context7.inner.norm(f)


def test_extract_lambdas_recovers_kernel_combination(context7):
    basis = context7.basis
    weights = np.linspace(1.0, 2.0, len(basis.elements))
    combo = HarmonicField.zeros(context7.grid)
    for w, z in zip(weights, basis.elements):
        combo = combo + z * float(w)
    # <(Delta + h) combo, Z>_L2 = <combo, Z>_h
    strong = context7.inner.operators.apply(combo)
    np.testing.assert_allclose(extract_lambdas(strong, basis), weights, rtol=1e-6)


def test_bordered_solve_is_orthogonal(engine7, context7):
    rhs = HarmonicField.radial(context7.grid, np.exp(-context7.grid.nodes / context7.delta))
    solve = engine7.invert_linearized(context7, rhs)
    coeffs = context7.basis.coefficients(solve.phi)
    norms = np.array([context7.inner.norm(z) for z in context7.basis.elements])
    phi_norm = context7.inner.norm(solve.phi)
    assert np.max(np.abs(coeffs) / (norms * phi_norm)) < 1e-8
    assert solve.ratio > 0


@pytest.mark.slow
def test_converged_state_identities(engine7, state7):
    ctx = state7.context
    total = HarmonicField.zeros(ctx.grid)
    for name in RESIDUAL_TERMS:
        total = total + state7.terms[name]
    np.testing.assert_allclose(total.mode0, state7.residual.mode0, rtol=1e-12, atol=1e-12 * np.abs(total.mode0).max())
    np.testing.assert_allclose(extract_lambdas(state7.residual, ctx.basis), state7.lambdas, rtol=1e-12)
    assert state7.eps_k == pytest.approx(4.0 * state7.c0 * state7.delta)
    assert state7.diagnostics.orthogonality < 1e-8
    assert max(state7.diagnostics.inner_contraction) < 0.5
    assert state7.diagnostics.outer_contraction < 0.5
    assert state7.c0 == DEFAULT_CONFIG["admissibility_constant"]
    assert state7.diagnostics.pilot_ratio <= 0.5 * state7.eps_k
    assert np.min(state7.u_k.pointwise_min()) >= ctx.truncation


@pytest.mark.slow
def test_state_stays_in_admissible_set(state7):
    ratio = state7.v.weighted_sup(state7.context.background.mode0)
    assert ratio <= state7.eps_k * (1 + 1e-12)
    summary = state7.summary()
    assert summary["t"] == 1.0
    assert len(summary["lambdas"]) == 8


@pytest.mark.slow
def test_pointwise_monitors(engine7, state7):
    report = engine7.pointwise_monitors(state7)
    assert report.truncation_inactive
    assert report.min_u > 0
    assert report.sup_ratio == pytest.approx(report.sup_ratio_over_delta * state7.delta)
    out = report.as_dict()
    assert "lt_constant" in out
    assert isinstance(out["flags"], list)


def test_cutoff_tail_is_small_at_default_scales(context7):
    assert 0.0 < context7.cutoff_tail < CUTOFF_TAIL_MAX


def test_cutoff_tail_is_measured_for_short_cutoffs(config):
    cfg = {**config, "beta_exponent": 0.75, "rcut_exponent": 4, "length_scale": 1.0, "grid_ratio": 1.06}
    model = make_model(cfg)
    ctx = ReductionEngine(model, solve_ground_state(model), numerics(cfg)).context(1.0)
    # r_cut = mu^(1/5) leaves a bubble tail of several u0 at the cutoff
    assert ctx.cutoff_tail > CUTOFF_TAIL_MAX


def test_inner_iteration_fails_on_first_growing_increment(engine7, context7, monkeypatch):
    calls = []

    def growing_residual(ctx, phi, v, damping):
        calls.append(1)
        return ctx.bubble * 3.0 ** len(calls)

    monkeypatch.setattr(engine7, "residual", growing_residual)
    with pytest.raises(ContractionError, match="iteration 2: factors 3.000"):
        engine7.picard_inner(context7)


@pytest.mark.slow
def test_pilot_outside_window_is_rejected(engine7):
    settings = {**engine7.settings, "admissibility_constant": 1e-3}
    engine = ReductionEngine(engine7.model, engine7.ground, settings)
    with pytest.raises(AdmissibilityError, match="perturbative regime"):
        engine.pingpong_outer(1.0)


@pytest.mark.slow
def test_uncoupled_reduction_needs_one_outer_iteration(config):
    cfg = {**config, "alpha": 0.0, "grid_ratio": 1.06}
    model = make_model(cfg)
    state = ReductionEngine(model, solve_ground_state(model), numerics(cfg)).pingpong_outer(1.0)
    # without coupling phi does not depend on v, so the first outer step is already the fixed point
    assert len(state.diagnostics.outer_increments) == 1
    assert state.diagnostics.outer_increments[0] < cfg["outer_tol"]
    assert state.diagnostics.outer_factors == []


@pytest.mark.slow
def test_reduction_is_continuous_in_t(engine7, state7):
    def gap(h: float) -> float:
        nearby = engine7.pingpong_outer(1.0 + h)
        return float(np.max(np.abs(normalized_lambdas(nearby) - normalized_lambdas(state7))))

    # the grid follows delta = mu t, so only the trend in h is compared
    assert gap(1e-3) < 0.3 * gap(1e-2)


@pytest.mark.slow
def test_monitored_response_adds_background_to_coupling(engine7, state7):
    ctx = state7.context
    zeta = np.asarray(ctx.model.zdir)
    base = engine7.background_response(ctx)
    assert np.max(base.pointwise_norm) > 0
    total = engine7.coupling_response(ctx, HarmonicField.zeros(ctx.grid)) + base
    source = HarmonicField.radial(ctx.grid, ctx.background.mode0**ctx.model.two_star * ctx.x_field.mode0)
    direct = convolve_LgT(source, np.ones(ctx.grid.size), zeta)
    scale = np.max(direct.pointwise_norm)
    assert np.max((total - direct).pointwise_norm) <= 1e-12 * scale
