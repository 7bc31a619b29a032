from __future__ import annotations

import math

import numpy as np
import pytest

from elreduce.config import DEFAULT_CONFIG, numerics
from elreduce.core.exceptions import ConfigError, ConvergenceError, KappaSignError, RegimeError
from elreduce.core.expansion import (
    HIGH_DIMENSION_TERMS,
    ExpansionParams,
    ExpansionRecord,
    ExpansionReport,
    blowup_certificate,
    convergence_study,
    expansion_report,
    find_zero,
    fit_order,
    interaction_coefficient,
    lambda_identity,
    leading_terms,
    monotone_failures,
    normalized_lambdas,
    numeric_I,
    quadrature_I,
    reduced_map_F,
    solve_t0,
    t0_closed_form,
    zero_scale,
)
from elreduce.core.model import bump_amplitude, make_model, solve_ground_state
from elreduce.core.profiles import BubbleParams
from elreduce.core.quadrature import sobolev_constant
from elreduce.core.reduction import ReductionEngine


def params_for(n: int, **overrides) -> ExpansionParams:
    base = dict(
        n=n,
        t=1.0,
        p=(0.0,) * n,
        mu=0.01,
        tau=0.1,
        beta=0.01**0.75,
        f=1.0,
        u=0.55,
        H=1.0,
        grad_H=(0.0,) * n,
    )
    base.update(overrides)
    return ExpansionParams(**base)


def test_leading_dilation_term_seven():
    params = params_for(7)
    expected = 48.0 / 15.0 * sobolev_constant(7) ** -7 * 0.1 * 0.01**2
    assert leading_terms("I1", 0, params) == pytest.approx(expected, rel=1e-12)


def test_leading_translation_terms_vanish_at_center():
    params = params_for(8)
    for i in range(1, 9):
        assert leading_terms("I1", i, params) == 0.0
        assert leading_terms("I3", i, params) == 0.0


def test_leading_translation_term_follows_bump_gradient():
    grad = (-0.5,) + (0.0,) * 6
    params = params_for(7, grad_H=grad)
    first = leading_terms("I1", 1, params)
    assert first < 0
    assert leading_terms("I1", 2, params) == 0.0
    assert leading_terms("I1", 1, params_for(7, grad_H=(-1.0,) + (0.0,) * 6)) == pytest.approx(2.0 * first)


def test_interaction_coefficient_kinds():
    n = 8
    assert interaction_coefficient(n, "published") / interaction_coefficient(n, "flux") == pytest.approx((n - 2) / 2)
    with pytest.raises(ConfigError):
        interaction_coefficient(n, "other")


@pytest.mark.parametrize(
    ("name", "n"),
    [("I1", 6), ("J1", 7), ("I9", 7), ("J5", 6)],
)
def test_leading_terms_rejects(name, n):
    with pytest.raises(ConfigError):
        leading_terms(name, 0, params_for(n))


def test_leading_terms_index_range():
    with pytest.raises(ConfigError):
        leading_terms("I1", 9, params_for(7))


@pytest.mark.parametrize(
    "params",
    [
        params_for(7),
        params_for(8, H=0.6),
        params_for(9, f=1.5),
        params_for(10, weyl_sq=0.3),
        params_for(11, lcf=False, weyl_sq=0.7),
        params_for(6, kappa=2.5),
    ],
    ids=["n7", "n8", "n9", "n10-weyl", "n11-weyl", "n6"],
)
@pytest.mark.parametrize("kind", ["published", "flux"])
def test_reduced_map_vanishes_at_t0(params, kind):
    t0 = t0_closed_form(params, kind)
    balance = reduced_map_F(params.with_t(t0), kind)[0]
    scale = abs(reduced_map_F(params.with_t(t0), kind)[0] - reduced_map_F(params.with_t(2.0 * t0), kind)[0])
    assert abs(balance) <= 1e-10 * scale
    assert solve_t0(params, kind) == pytest.approx(t0, rel=1e-10)


def test_six_dimensional_t0_matches_bisection():
    params = params_for(6, kappa=0.8, H=0.9, f=0.2)
    assert solve_t0(params) == pytest.approx(t0_closed_form(params), rel=1e-12)


def test_doubling_background_quarters_t0_in_seven_dimensions():
    base = t0_closed_form(params_for(7, u=0.4))
    assert t0_closed_form(params_for(7, u=0.8)) == pytest.approx(base / 4.0, rel=1e-12)


def test_kappa_sign_error():
    with pytest.raises(KappaSignError):
        t0_closed_form(params_for(6, kappa=-1.0))
    with pytest.raises(KappaSignError):
        solve_t0(params_for(6, kappa=0.0))


def test_no_balance_outside_bump_support():
    with pytest.raises(RegimeError):
        t0_closed_form(params_for(7, H=0.0))
    with pytest.raises(RegimeError):
        t0_closed_form(params_for(11, lcf=False))


def test_six_dimensional_map_needs_kappa():
    with pytest.raises(ConfigError):
        reduced_map_F(params_for(6))


def test_from_model_evaluates_bump(model7, ground7):
    p = np.array([0.5] + [0.0] * 6)
    params = ExpansionParams.from_model(model7, ground7, 1.2, p)
    assert params.H == pytest.approx(0.75**4)
    assert params.grad_H[0] == pytest.approx(-8.0 * 0.75**3 * 0.5)
    assert params.delta == pytest.approx(1.2 * model7.mu)
    assert params.with_t(2.0).t == 2.0


@pytest.fixture(scope="module")
def tiny_scale():
    # delta / beta = mu^(3/4) = 1e-3 keeps the bump corrections below 1e-2
    model = make_model({**DEFAULT_CONFIG, "tau": 1e-2, "length_scale": 1.0})
    ground = solve_ground_state(model)
    return model, ground, BubbleParams.from_model(model, 1.0)


def test_bump_integral_quadrature_matches_leading_term(tiny_scale):
    model, ground, bubble = tiny_scale
    params = ExpansionParams.from_model(model, ground, 1.0)
    quad = quadrature_I("I1", 0, model, ground, bubble)
    assert quad == pytest.approx(leading_terms("I1", 0, params), rel=1e-2)
    assert abs(quadrature_I("I1", 1, model, ground, bubble)) <= 1e-10 * abs(quad)


def test_interaction_quadrature_matches_flux_coefficient(tiny_scale):
    model, ground, bubble = tiny_scale
    params = ExpansionParams.from_model(model, ground, 1.0)
    quad = quadrature_I("I3", 0, model, ground, bubble)
    assert quad < 0
    assert quad == pytest.approx(leading_terms("I3", 0, params, i30_coefficient="flux"), rel=5e-3)


def test_quadrature_has_no_path_for_remainders(tiny_scale):
    model, ground, bubble = tiny_scale
    assert quadrature_I("I6", 0, model, ground, bubble) is None
    assert quadrature_I("I3", 1, model, ground, bubble) is None


def test_bump_integral_discrepancy_shrinks_over_dyadic_scales():
    errors = []
    for mu in (1e-2, 5e-3, 2.5e-3, 1.25e-3):
        model = make_model({**DEFAULT_CONFIG, "tau": bump_amplitude(7, mu)})
        ground = solve_ground_state(model)
        quad = quadrature_I("I1", 0, model, ground, BubbleParams.from_model(model, 1.0))
        lead = leading_terms("I1", 0, ExpansionParams.from_model(model, ground, 1.0))
        assert quad > 0
        assert lead > 0
        errors.append(abs(quad / lead - 1.0))
    assert all(later < earlier for earlier, later in zip(errors, errors[1:]))
    assert errors[-1] < 0.05


def test_find_zero_on_synthetic_map():
    target = np.array([0.1, 0.0, -0.05])

    def lam(t, p):
        return np.concatenate(([t**2 - 4.0 + 0.1 * np.dot(p, p)], p - target * t / 2.0))

    result = find_zero(lam, 1.5, np.zeros(3), 10.0)
    assert result.method == "newton"
    assert result.residual < 1e-3 * result.seed_residual
    assert result.t == pytest.approx(2.0, rel=1e-3)
    np.testing.assert_allclose(result.p, target, atol=1e-3)


def test_find_zero_falls_back_to_bisection():
    def lam(t, p):
        return np.concatenate(([t - 3.0], np.zeros_like(p)))

    result = find_zero(lam, 1.0, np.zeros(2), 10.0)
    assert result.method == "bisection"
    assert result.t == pytest.approx(3.0, rel=1e-9)


def test_find_zero_without_sign_change():
    def lam(t, p):
        return np.concatenate(([t + 1.0], np.zeros_like(p)))

    with pytest.raises(RegimeError):
        find_zero(lam, 1.0, np.zeros(2), 10.0)


def test_find_zero_budget_exhausted():
    def lam(t, p):
        return np.concatenate(([t**2 - 4.0], p))

    with pytest.raises(ConvergenceError):
        find_zero(lam, 9.0, np.zeros(2), 10.0, max_iter=1)


def test_find_zero_at_exact_seed():
    result = find_zero(lambda t, p: np.concatenate(([t - 1.0], p)), 1.0, np.zeros(2), 10.0)
    assert result.method == "seed"
    assert result.iterations == 0


def test_fit_order():
    mus = [0.01, 0.005, 0.0025]
    assert fit_order(mus, [3.0 * m**2 for m in mus]) == pytest.approx(2.0)
    assert fit_order(mus, [None, 0.0, 1.0]) is None


def report_at(mu: float, errors: dict[str, float]) -> ExpansionReport:
    records = [
        ExpansionRecord(name=name, n=7, mu=mu, closed_form=1.0, quadrature=None, pipeline=1.0 + err, scale=1.0)
        for name, err in errors.items()
    ]
    return ExpansionReport(n=7, mu=mu, t=1.0, p=[0.0] * 7, records=records)


def test_convergence_study_fits_orders():
    reports = [report_at(mu, {"I10": mu, "I30": math.sqrt(mu)}) for mu in (0.01, 0.005, 0.0025)]
    orders = convergence_study(reports)
    assert orders["I10"] == pytest.approx(1.0)
    assert orders["I30"] == pytest.approx(0.5)
    assert reports[0].record("I10").order == pytest.approx(1.0)
    assert monotone_failures(reports) == []


def test_convergence_study_needs_three_scales():
    with pytest.raises(ConvergenceError):
        convergence_study([report_at(0.01, {"I10": 0.1}), report_at(0.005, {"I10": 0.05})])


def test_monotone_failures():
    reports = [report_at(0.01, {"I10": 0.1, "I30": 0.1}), report_at(0.005, {"I10": 0.05, "I30": 0.2})]
    assert monotone_failures(reports) == ["I30"]


def test_record_relative_error_against_zero_closed_form():
    record = ExpansionRecord(name="I20", n=7, mu=0.01, closed_form=0.0, quadrature=None, pipeline=3e-4, scale=1e-2)
    assert record.rel_err == pytest.approx(3e-2)
    missing = ExpansionRecord(name="I50", n=7, mu=0.01, closed_form=None, quadrature=None, pipeline=1.0, scale=1.0)
    assert missing.rel_err is None
    with pytest.raises(KeyError):
        report_at(0.01, {"I10": 0.1}).record("I99")


def test_numeric_I_needs_state():
    with pytest.raises(ConfigError):
        numeric_I("I1", 0, None)


@pytest.mark.slow
def test_numeric_integrals_partition_the_residual(state7):
    ctx = state7.context
    for i in (0, 1):
        z = ctx.basis.elements[i]
        total = sum(numeric_I(name, i, state7) for name in HIGH_DIMENSION_TERMS)
        pieces = sum(abs(numeric_I(name, i, state7)) for name in HIGH_DIMENSION_TERMS)
        assert total == pytest.approx(ctx.inner.l2(state7.residual, z), abs=1e-12 * pieces)
    with pytest.raises(ConfigError):
        numeric_I("J1", 0, state7)


@pytest.mark.slow
def test_state_lambda_checks(state7):
    assert lambda_identity(state7) < 1e-12
    assert blowup_certificate(state7)
    normalized = normalized_lambdas(state7)
    model = state7.context.model
    gram = np.diag(state7.context.basis.gram)
    assert normalized[0] == pytest.approx(state7.lambdas[0] * gram[0] / (model.tau * model.mu**2))


@pytest.mark.slow
def test_expansion_report_records(state7):
    model, ground = state7.context.model, state7.context.ground
    report = expansion_report(model, ground, state7)
    names = [record.name for record in report.records]
    assert names[:4] == ["I10", "I1i", "I30", "I3i"]
    assert names[-2:] == ["lambda0", "lambda_i_normalized"]
    assert report.record("I20").closed_form == 0.0
    assert report.record("I10").quadrature is not None
    assert "quadrature" in report.record("I50").absent
    assert report.record("lambda_i_normalized").closed_form == 0.0
    assert report.t0 is not None and report.t0 > 0
    assert report.as_dict()["records"][0]["name"] == "I10"


@pytest.mark.slow
def test_dyadic_sweep_rows_decrease(dyadic_reports):
    assert monotone_failures(dyadic_reports) == []
    orders = convergence_study(dyadic_reports)
    assert orders["lambda0"] is not None and orders["lambda0"] > 0


@pytest.mark.slow
def test_dyadic_sweep_contraction_shrinks(dyadic_reports):
    inner = [max(report.summary["inner_contraction"]) for report in dyadic_reports]
    outer = [report.summary["outer_contraction"] for report in dyadic_reports]
    assert max(inner) < 0.5
    assert max(outer) < 0.5
    assert all(later < earlier for earlier, later in zip(inner, inner[1:]))
    assert outer[-1] < outer[0]


@pytest.mark.slow
def test_dyadic_sweep_sup_ratio_is_linear_in_delta(dyadic_reports):
    constants = [report.monitors["sup_ratio_over_delta"] for report in dyadic_reports[:3]]
    assert max(constants) < 1.3 * min(constants)
    for report in dyadic_reports:
        assert report.monitors["truncation_inactive"]
        assert "cutoff_tail" not in report.monitors["flags"]
        assert report.summary["orthogonality"] < 1e-8


@pytest.mark.slow
def test_uncoupled_zero_changes_sign_and_blows_up(config):
    cfg = {**config, "alpha": 0.0, "grid_ratio": 1.06}
    result, t0 = zero_scale(cfg)
    assert result.certificate
    assert result.residual < 1e-3 * result.seed_residual
    assert 0.5 * t0 < result.t < 2.0 * t0
    model = make_model(cfg)
    engine = ReductionEngine(model, solve_ground_state(model), numerics(cfg))
    below = normalized_lambdas(engine.pingpong_outer(0.8 * result.t, result.p))[0]
    above = normalized_lambdas(engine.pingpong_outer(1.25 * result.t, result.p))[0]
    assert below * above < 0
