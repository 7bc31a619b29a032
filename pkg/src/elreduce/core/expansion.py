"""Leading terms of the kernel coefficients, the reduced map and its zeros.

Every integral <E, Z_i> of the residual is available three ways: the closed
leading term, an independent radial quadrature of its defining integral on the
exact profiles, and the grid value on a converged reduction. The reduced map F
collects the leading terms after dividing by the scale of each row.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import roots_jacobi

from elreduce.config import numerics
from elreduce.core.exceptions import (
    ConfigError,
    ConvergenceError,
    KappaSignError,
    RegimeError,
)
from elreduce.core.model import (
    GroundState,
    ModelConfig,
    bump,
    bump_radial_derivative,
    conformal_offset,
    critical_exponent,
    make_model,
    solve_ground_state,
)
from elreduce.core.profiles import BubbleParams, bubble_radial, kernel_radial
from elreduce.core.quadrature import (
    KappaParams,
    QuadratureSpec,
    gram_V,
    i3_constant,
    kappa,
    radial_integral,
    sobolev_constant,
    sphere_area,
)
from elreduce.core.reduction import (
    JACOBI_NODES,
    ReductionEngine,
    ReductionState,
    extract_lambdas,
    power_difference,
)

logger = logging.getLogger(__name__)

HIGH_DIMENSION_TERMS = {
    "I1": ("bump_potential",),
    "I2": ("bubble_error",),
    "I3": ("interaction",),
    "I4": ("negative_power",),
    "I5": ("coupling",),
    "I6": ("remainder",),
    "I8": ("background_potential",),
}
SIX_DIMENSION_TERMS = {
    "J1": ("bump_potential",),
    "J2": ("bubble_error",),
    "J3": ("interaction",),
    "J4": ("remainder",),
    "J5": ("negative_power", "coupling"),
    "J8": ("background_potential",),
}


def _c_bump(n: int) -> float:
    return 8.0 * (n - 1) / ((n - 2) * (n - 4))


def _c_bump_grad(n: int) -> float:
    return 2.0 * n * (n - 1) / (n - 4)


def _c_weyl(n: int) -> float:
    return n * (n - 2) / (3.0 * (n - 4) * (n - 6))


def _c_weyl_grad(n: int) -> float:
    return n**2 * (n - 2) ** 2 / (24.0 * (n - 4) * (n - 6))


def interaction_coefficient(n: int, kind: str = "published") -> float:
    """
    Coefficient c3 of I_{3,0} = -c3 f^(1-n/2) u delta^((n-2)/2).

    "published" is 1/2 (n-2)^2 (n(n-2))^((n-2)/2) omega_(n-1); "flux" is the
    value of the defining integral, (n-2) (n(n-2))^((n-2)/2) omega_(n-1).
    """
    base = (n * (n - 2)) ** ((n - 2) / 2.0) * sphere_area(n - 1)
    if kind == "published":
        return 0.5 * (n - 2) ** 2 * base
    if kind == "flux":
        return (n - 2) * base
    raise ConfigError(f"Unknown interaction coefficient kind {kind!r}")


@dataclass(frozen=True)
class ExpansionParams:
    """Inputs of the closed-form evaluators at one (t, p)."""

    n: int
    t: float
    p: tuple[float, ...]
    mu: float
    tau: float
    beta: float
    f: float
    u: float
    H: float
    grad_H: tuple[float, ...]
    weyl_sq: float = 0.0
    weyl_grad: tuple[float, ...] = ()
    grad_u: tuple[float, ...] = ()
    kappa: float | None = None
    lcf: bool = True

    @classmethod
    def from_model(
        cls,
        model: ModelConfig,
        ground: GroundState,
        t: float,
        p: np.ndarray | None = None,
        kappa_value: float | None = None,
        weyl_grad: np.ndarray | None = None,
    ) -> ExpansionParams:
        p_vec = np.zeros(model.n) if p is None else np.asarray(p, dtype=float)
        p_sq = float(np.dot(p_vec, p_vec))
        grad_H = float(bump_radial_derivative(p_sq)) * p_vec
        return cls(
            n=model.n,
            t=float(t),
            p=tuple(p_vec.tolist()),
            mu=model.mu,
            tau=model.tau,
            beta=model.beta,
            f=model.f0,
            u=ground.u0,
            H=float(bump(p_sq)),
            grad_H=tuple(grad_H.tolist()),
            weyl_sq=model.weyl_sq,
            weyl_grad=tuple((np.zeros(model.n) if weyl_grad is None else np.asarray(weyl_grad, dtype=float)).tolist()),
            grad_u=tuple(np.zeros(model.n).tolist()),
            kappa=kappa_value,
            lcf=model.lcf_flag,
        )

    @property
    def delta(self) -> float:
        return self.mu * self.t

    def with_t(self, t: float) -> ExpansionParams:
        return replace(self, t=float(t))

    def _component(self, values: tuple[float, ...], i: int) -> float:
        return float(values[i - 1]) if values else 0.0


def model_kappa(model: ModelConfig, ground: GroundState, spec: QuadratureSpec | None = None) -> float:
    """kappa of a six-dimensional model, through the single quadrature code path."""
    return kappa(KappaParams(model.f0, ground.u0, model.rho0, model.alpha), spec)


def leading_terms(name: str, i: int, params: ExpansionParams, i30_coefficient: str = "published") -> float:
    """
    Leading term of one expansion integral.

    Args:
        name: "I1" or "I3" for n >= 7, "J1" or "J5" for n = 6.
        i: Kernel index, 0 for the dilation row, 1..n for translations.
        params: Evaluation point and model constants.
        i30_coefficient: Coefficient of I_{3,0}, "published" or "flux".

    Returns:
        The leading value.

    Raises:
        ConfigError: For an unsupported (n, name) pair or missing kappa.
    """
    n = params.n
    if not 0 <= i <= n:
        raise ConfigError(f"Kernel index {i} outside 0..{n}")
    kn = sobolev_constant(n) ** (-n)
    f, t, mu, tau, beta = params.f, params.t, params.mu, params.tau, params.beta
    delta = params.delta

    if name.startswith("I") and n < 7:
        raise ConfigError(f"{name} is defined for n >= 7, got n = {n}")
    if name.startswith("J") and n != 6:
        raise ConfigError(f"{name} is defined for n = 6 only, got n = {n}")

    if name == "I1":
        if i == 0:
            return _c_bump(n) * kn * f ** (-n / 2) * tau * mu**2 * params.H * t**2 - _c_weyl(
                n
            ) * f ** (-1 - n / 2) * kn * params.weyl_sq * mu**4 * t**4
        return _c_bump_grad(n) * kn * f ** (-n / 2) * (tau / beta) * mu**3 * params._component(
            params.grad_H, i
        ) * t**3 - f ** (-1 - n / 2) * kn * _c_weyl_grad(n) * params._component(params.weyl_grad, i) * mu**5 * t**5
    if name == "I3":
        if i == 0:
            return -interaction_coefficient(n, i30_coefficient) * f ** (1 - n / 2) * params.u * delta ** ((n - 2) / 2)
        return -i3_constant(n) * f ** (-n / 2) * params._component(params.grad_u, i) * delta ** (n / 2)
    if name == "J1":
        if i == 0:
            return -_c_bump(6) * kn * f**-3 * params.H * tau * delta**2
        return -_c_bump_grad(6) * kn * f**-3 * params._component(params.grad_H, i) * (tau / beta) * delta**3
    if name == "J5":
        if params.kappa is None:
            raise ConfigError("J5 needs kappa")
        # translations are O(delta^(7/2)) with no explicit leading term
        return params.kappa * delta**3 if i == 0 else 0.0
    raise ConfigError(f"No leading term for {name} at n = {n}")


def _branch(params: ExpansionParams) -> str:
    if params.n == 6:
        return "six"
    if params.lcf or params.n <= 10:
        return "lcf"
    if params.n >= 11:
        return "weyl"
    raise ConfigError(f"Unsupported branch n = {params.n}, lcf = {params.lcf}")


def reduced_map_F(params: ExpansionParams, i30_coefficient: str = "published") -> np.ndarray:
    """
    The limiting reduced map at (t, p): the t-balance then the n translation rows.

    Raises:
        ConfigError: On an unsupported branch or missing kappa at n = 6.
    """
    n, f, t = params.n, params.f, params.t
    kn = sobolev_constant(n) ** (-n)
    grad = np.array(params.grad_H) if params.grad_H else np.zeros(n)
    branch = _branch(params)
    out = np.zeros(n + 1)
    if branch == "six":
        if params.kappa is None:
            raise ConfigError("The six-dimensional reduced map needs kappa")
        out[0] = -_c_bump(6) * kn * f**-3 * params.H * t**2 + params.kappa * t**3
        out[1:] = -_c_bump_grad(6) * kn * f**-3 * grad * t**3
        return out
    out[0] = _c_bump(n) * kn * f ** (-n / 2) * params.H * t**2
    if branch == "lcf":
        out[0] -= interaction_coefficient(n, i30_coefficient) * f ** (1 - n / 2) * params.u * t ** ((n - 2) / 2)
        if n == 10:
            out[0] -= _c_weyl(n) * f ** (-1 - n / 2) * kn * params.weyl_sq * t**4
    else:
        out[0] -= _c_weyl(n) * f ** (-1 - n / 2) * kn * params.weyl_sq * t**4
    out[1:] = _c_bump_grad(n) * kn * f ** (-n / 2) * grad * t**3
    return out


def t0_closed_form(params: ExpansionParams, i30_coefficient: str = "published") -> float:
    """
    Closed-form root of the t-balance at the current p.

    Raises:
        KappaSignError: If kappa <= 0 at n = 6.
        RegimeError: If the balance has no positive root.
    """
    n, f, H = params.n, params.f, params.H
    kn = sobolev_constant(n) ** (-n)
    if H <= 0:
        raise RegimeError(f"The t-balance needs H(p) > 0, got {H:g}")
    branch = _branch(params)
    if branch == "six":
        if params.kappa is None or params.kappa <= 0:
            raise KappaSignError(f"kappa sign: kappa = {params.kappa} <= 0, no admissible t0 (alpha too large)")
        return _c_bump(6) * kn * f**-3 * H / params.kappa
    if branch == "weyl":
        if params.weyl_sq <= 0:
            raise RegimeError("The non locally conformally flat balance needs weyl_sq > 0")
        return math.sqrt(_c_bump(n) * f * H / (_c_weyl(n) * params.weyl_sq))
    c3 = interaction_coefficient(n, i30_coefficient)
    if n == 10:
        a = _c_bump(n) * kn * f ** (-n / 2) * H
        b = c3 * f ** (1 - n / 2) * params.u + _c_weyl(n) * f ** (-1 - n / 2) * kn * params.weyl_sq
        return math.sqrt(a / b)
    return (_c_bump(n) * kn * H / (c3 * f * params.u)) ** (2.0 / (n - 6))


def solve_t0(params: ExpansionParams, i30_coefficient: str = "published") -> float:
    """
    Unique positive root of F_0(t) at the current p by bracketing bisection.

    Raises:
        KappaSignError: If kappa <= 0 at n = 6.
        RegimeError: If no bracketing interval is found.
    """
    guess = t0_closed_form(params, i30_coefficient)

    def balance(t: float) -> float:
        return float(reduced_map_F(params.with_t(t), i30_coefficient)[0]) / t**2

    lo, hi = guess / 2.0, guess * 2.0
    for _ in range(60):
        if balance(lo) * balance(hi) < 0:
            break
        lo, hi = lo / 2.0, hi * 2.0
    else:
        raise RegimeError("No bracket for the t-balance: F_0 has no sign change")
    root = float(brentq(balance, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500))
    logger.debug("t0 = %.15g (closed form %.15g)", root, guess)
    return root


def numeric_I(name: str, i: int, state: ReductionState | None) -> float:
    """
    Grid value of one expansion integral on a converged reduction.

    Raises:
        ConfigError: If the state is missing or the name does not exist in its dimension.
    """
    if state is None:
        raise ConfigError("numeric_I needs a converged reduction state")
    n = state.context.grid.n
    table = SIX_DIMENSION_TERMS if n == 6 else HIGH_DIMENSION_TERMS
    if name not in table:
        raise ConfigError(f"Integral {name} is not defined for n = {n}")
    if not 0 <= i <= n:
        raise ConfigError(f"Kernel index {i} outside 0..{n}")
    z = state.context.basis.elements[i]
    inner = state.context.inner
    return float(sum(inner.l2(state.terms[term], z) for term in table[name]))


def _axis_moments(fn_of_dist_sq: Callable[[np.ndarray], np.ndarray], r: np.ndarray, offset: float, n: int):
    c, w = roots_jacobi(JACOBI_NODES, (n - 3) / 2.0, (n - 3) / 2.0)
    w = w / np.sum(w)
    r = np.asarray(r, dtype=float)[..., None]
    base = offset**2 + r**2
    plus = fn_of_dist_sq(base + 2.0 * offset * r * c)
    minus = fn_of_dist_sq(base - 2.0 * offset * r * c)
    # odd part in c carries the l = 1 moment; it vanishes exactly at zero offset
    return 0.5 * ((plus + minus) @ w), 0.5 * n * ((plus - minus) @ (w * c))


def quadrature_I(
    name: str,
    i: int,
    model: ModelConfig,
    ground: GroundState,
    params: BubbleParams,
    spec: QuadratureSpec | None = None,
) -> float | None:
    """
    Independent radial quadrature of a defining integral on the exact profiles.

    Returns None when the integral has no quadrature path (it needs the
    computed remainder or the vector response).
    """
    spec = spec or QuadratureSpec()
    n = model.n
    offset = float(np.linalg.norm(params.center))
    axis = params.center / offset if offset > 0 else np.eye(n)[0]
    moment_spec = QuadratureSpec(spec.rel_tol, spec.r_split, 2)

    if name in ("I1", "J1"):
        def bump_part(d_sq: np.ndarray) -> np.ndarray:
            return model.bump_sign * model.tau * bump(d_sq / model.beta**2)

        if i == 0:
            return radial_integral(
                lambda r: _axis_moments(bump_part, r, offset, n)[0] * bubble_radial(params, r) * kernel_radial(0, params, r),
                n,
                spec,
            )
        return radial_integral(
            lambda r: _axis_moments(bump_part, r, offset, n)[1] * axis[i - 1] * bubble_radial(params, r) * kernel_radial(i, params, r),
            n,
            moment_spec,
        )
    if name in ("I3", "J3") and i == 0:
        q = critical_exponent(n)
        u0 = ground.u0
        shift = model.h0 - conformal_offset(model, ground)

        def integrand(r: np.ndarray) -> np.ndarray:
            w = bubble_radial(params, r)
            term = shift * w - model.f0 * (power_difference(w, w + u0, q - 1) - u0 ** (q - 1))
            return term * kernel_radial(0, params, r)

        return radial_integral(integrand, n, spec)
    return None


def normalized_lambdas(state: ReductionState) -> np.ndarray:
    """
    lambda_i G_ii divided by the scale of its row, comparable with reduced_map_F.

    The dilation row scales like tau mu^2 (mu^((n-2)/2) for n >= 7, mu^3 for
    n = 6) and the translation rows like tau mu^3 / beta (mu^(n/2) / beta for n >= 7).
    """
    model = state.context.model
    gram = np.diag(state.context.basis.gram)
    out = state.lambdas * gram
    out[0] /= model.tau * model.mu**2
    out[1:] *= model.beta / (model.tau * model.mu**3)
    return out


@dataclass
class ExpansionRecord:
    """One integral at one scale. A missing source carries its reason in `absent`."""

    name: str
    n: int
    mu: float
    closed_form: float | None
    quadrature: float | None
    pipeline: float | None
    scale: float
    rel_err: float | None = None
    order: float | None = None
    absent: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.rel_err is None:
            self.rel_err = self.relative_error()

    def relative_error(self) -> float | None:
        reference = self.pipeline if self.pipeline is not None else self.quadrature
        if reference is None or self.closed_form is None:
            return None
        if self.closed_form != 0.0:
            return abs(reference - self.closed_form) / abs(self.closed_form)
        return abs(reference) / self.scale

    def row(self) -> list[Any]:
        return [self.name, self.n, self.mu, self.closed_form, self.quadrature, self.pipeline, self.rel_err, self.order]


@dataclass
class ZeroResult:
    t: float
    p: np.ndarray
    residual: float
    seed_residual: float
    iterations: int
    method: str
    certificate: bool | None = None

    def as_dict(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "p": self.p.tolist(),
            "residual": self.residual,
            "seed_residual": self.seed_residual,
            "iterations": self.iterations,
            "method": self.method,
            "certificate": self.certificate,
        }


@dataclass
class ExpansionReport:
    """Closed form, quadrature and pipeline values of every expansion integral at one scale."""

    n: int
    mu: float
    t: float
    p: list[float]
    records: list[ExpansionRecord]
    reduced_map: list[float] = field(default_factory=list)
    t0: float | None = None
    zero: ZeroResult | None = None
    summary: dict[str, Any] = field(default_factory=dict)
    monitors: dict[str, Any] = field(default_factory=dict)

    def record(self, name: str) -> ExpansionRecord:
        for rec in self.records:
            if rec.name == name:
                return rec
        raise KeyError(name)

    def as_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "mu": self.mu,
            "t": self.t,
            "p": self.p,
            "t0": self.t0,
            "reduced_map": self.reduced_map,
            "zero": self.zero.as_dict() if self.zero else None,
            "summary": self.summary,
            "monitors": self.monitors,
            "records": [
                {
                    "name": r.name,
                    "closed_form": r.closed_form,
                    "quadrature": r.quadrature,
                    "pipeline": r.pipeline,
                    "rel_err": r.rel_err,
                    "order": r.order,
                    "absent": r.absent,
                }
                for r in self.records
            ],
        }


def _translation_index(p: np.ndarray) -> int:
    return int(np.argmax(np.abs(p))) + 1 if np.any(p != 0) else 1


def expansion_report(
    model: ModelConfig,
    ground: GroundState,
    state: ReductionState,
    spec: QuadratureSpec | None = None,
) -> ExpansionReport:
    """
    Build every record of one scale from a converged state.

    The I_{3,0} comparisons use the flux coefficient; the o(.) remainders are
    recorded against a zero closed form with their natural scale.
    """
    spec = spec or QuadratureSpec()
    n, t, p = model.n, state.t, state.p
    kappa_value = model_kappa(model, ground, spec) if n == 6 else None
    params = ExpansionParams.from_model(model, ground, t, p, kappa_value)
    bubble = state.context.params
    delta = bubble.delta
    scale0, scale1 = delta ** ((n - 2) / 2), delta ** (n / 2)
    i = _translation_index(p)
    gram_exact = np.diag(gram_V(n, model.f0, spec))
    no_quad = {"quadrature": "needs the computed remainder or the vector response"}

    def rec(name: str, idx: int, closed: float | None, scale: float, quad: bool = True) -> ExpansionRecord:
        quad_value = quadrature_I(name, idx, model, ground, bubble, spec) if quad else None
        return ExpansionRecord(
            name=f"{name}{idx if idx == 0 else 'i'}",
            n=n,
            mu=model.mu,
            closed_form=closed,
            quadrature=quad_value,
            pipeline=numeric_I(name, idx, state),
            scale=scale,
            absent={} if quad_value is not None else dict(no_quad),
        )

    if n == 6:
        j10 = leading_terms("J1", 0, params)
        j50 = leading_terms("J5", 0, params)
        records = [
            rec("J1", 0, j10, scale0),
            rec("J1", i, leading_terms("J1", i, params), scale1),
            rec("J3", 0, 0.0, scale0),
            rec("J5", 0, j50, scale0, quad=False),
            rec("J2", 0, 0.0, scale0, quad=False),
            rec("J4", 0, 0.0, scale0, quad=False),
        ]
        lambda0_closed = (j10 + j50) / gram_exact[0]
    else:
        i10 = leading_terms("I1", 0, params)
        i30 = leading_terms("I3", 0, params, i30_coefficient="flux")
        records = [
            rec("I1", 0, i10, scale0),
            rec("I1", i, leading_terms("I1", i, params), scale1),
            rec("I3", 0, i30, scale0),
            rec("I3", i, leading_terms("I3", i, params), scale1, quad=False),
            rec("I2", 0, 0.0, scale0, quad=False),
            rec("I4", 0, 0.0, scale0, quad=False),
            rec("I5", 0, 0.0, scale0, quad=False),
            rec("I6", 0, 0.0, scale0, quad=False),
            rec("I6", i, 0.0, scale1, quad=False),
            rec("I8", 0, 0.0, scale0, quad=False),
        ]
        lambda0_closed = (i10 + i30) / gram_exact[0]

    F = reduced_map_F(params, i30_coefficient="flux")
    normalized = normalized_lambdas(state)
    records.append(
        ExpansionRecord(
            name="lambda0",
            n=n,
            mu=model.mu,
            closed_form=lambda0_closed,
            quadrature=None,
            pipeline=float(state.lambdas[0]),
            scale=scale0 / gram_exact[0],
            absent={"quadrature": "lambda is a pipeline quantity"},
        )
    )
    records.append(
        ExpansionRecord(
            name="lambda_i_normalized",
            n=n,
            mu=model.mu,
            closed_form=float(F[i]),
            quadrature=None,
            pipeline=float(normalized[i]),
            scale=1.0,
            absent={"quadrature": "lambda is a pipeline quantity"},
        )
    )
    try:
        t0 = solve_t0(params, i30_coefficient="flux")
    except RegimeError as e:
        logger.warning("No t0 at this scale: %s", e)
        t0 = None
    return ExpansionReport(
        n=n,
        mu=model.mu,
        t=t,
        p=p.tolist(),
        records=records,
        reduced_map=F.tolist(),
        t0=t0,
    )


def fit_order(mus: list[float], values: list[float]) -> float | None:
    """Log-log slope of |values| against mu; None when fewer than two positive values."""
    pairs = [(m, abs(v)) for m, v in zip(mus, values) if v is not None and abs(v) > 0]
    if len(pairs) < 2:
        return None
    x = np.log([m for m, _ in pairs])
    y = np.log([v for _, v in pairs])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def convergence_study(reports: list[ExpansionReport]) -> dict[str, float | None]:
    """
    Fit the order of every relative error across scales and store it on the records.

    Raises:
        ConvergenceError: With fewer than three converged scales.
    """
    if len(reports) < 3:
        raise ConvergenceError(f"Convergence study needs at least 3 converged scales, got {len(reports)}")
    reports = sorted(reports, key=lambda r: -r.mu)
    mus = [r.mu for r in reports]
    orders: dict[str, float | None] = {}
    for rec in reports[0].records:
        values = [r.record(rec.name).rel_err for r in reports]
        order = fit_order(mus, values)
        orders[rec.name] = order
        for r in reports:
            r.record(rec.name).order = order
        if order is not None and order <= 0:
            logger.warning("Non-positive fitted order %.3g for %s", order, rec.name)
    return orders


def monotone_failures(reports: list[ExpansionReport], slack: float = 1e-12) -> list[str]:
    """Names whose relative error fails to decrease as mu decreases."""
    reports = sorted(reports, key=lambda r: -r.mu)
    failures = []
    for rec in reports[0].records:
        values = [r.record(rec.name).rel_err for r in reports]
        if any(v is None for v in values):
            continue
        if any(later > earlier * (1 + slack) + slack for earlier, later in zip(values, values[1:])):
            failures.append(rec.name)
    return failures


def find_zero(
    lam: Callable[[float, np.ndarray], np.ndarray],
    seed_t: float,
    seed_p: np.ndarray,
    t_bound: float,
    max_iter: int = 20,
    reduction: float = 1e-3,
    cond_max: float = 1e10,
) -> ZeroResult:
    """
    Damped Newton on lam(t, p) with a finite-difference Jacobian.

    Falls back to bisection in t at p = 0 when the Jacobian is ill-conditioned.

    Raises:
        RegimeError: If the fallback finds no sign change in [1/D, D].
        ConvergenceError: If Newton stops decreasing the residual.
    """
    seed_p = np.asarray(seed_p, dtype=float)
    n = seed_p.size
    lo_t, hi_t = 1.0 / t_bound, t_bound

    def inside(t: float, p: np.ndarray) -> bool:
        return lo_t < t < hi_t and float(np.linalg.norm(p)) < 1.0

    t, p = float(seed_t), seed_p.copy()
    F = lam(t, p)
    seed_norm = float(np.linalg.norm(F))
    norm = seed_norm
    if seed_norm == 0.0:
        return ZeroResult(t, p, 0.0, 0.0, 0, "seed")

    for iteration in range(1, max_iter + 1):
        J = np.empty((n + 1, n + 1))
        h_t = 1e-4 * t
        J[:, 0] = (lam(t + h_t, p) - F) / h_t
        for k in range(n):
            h_p = 1e-3 if p[k] <= 0 else -1e-3
            shifted = p.copy()
            shifted[k] += h_p
            J[:, k + 1] = (lam(t, shifted) - F) / h_p
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > cond_max:
            logger.info("Ill-conditioned Jacobian, falling back to bisection in t at p = 0")
            return _bisect_t(lam, seed_t, n, lo_t, hi_t, seed_norm)
        step = -np.linalg.solve(J, F)
        damping = 1.0
        for _ in range(12):
            t_new, p_new = t + damping * step[0], p + damping * step[1:]
            if inside(t_new, p_new):
                F_new = lam(t_new, p_new)
                if np.linalg.norm(F_new) < norm:
                    break
            damping /= 2.0
        else:
            raise ConvergenceError("Newton divergence: no damped step decreases |lambda|")
        t, p, F = t_new, p_new, F_new
        norm = float(np.linalg.norm(F))
        logger.debug("Newton %d: t=%.10g |p|=%.3g |lambda|=%.3e", iteration, t, np.linalg.norm(p), norm)
        if norm < reduction * seed_norm:
            return ZeroResult(t, p, norm, seed_norm, iteration, "newton")
    raise ConvergenceError(f"Newton did not reach |lambda| < {reduction:g} |lambda(seed)| in {max_iter} iterations")


def _bisect_t(
    lam: Callable[[float, np.ndarray], np.ndarray], seed_t: float, n: int, lo_t: float, hi_t: float, seed_norm: float
) -> ZeroResult:
    p = np.zeros(n)

    def g(t: float) -> float:
        return float(lam(t, p)[0])

    lo, hi = max(seed_t / 2.0, lo_t), min(seed_t * 2.0, hi_t)
    while g(lo) * g(hi) > 0:
        if lo <= lo_t and hi >= hi_t:
            raise RegimeError("No sign change of lambda_0 in the box [1/D, D]")
        lo, hi = max(lo / 2.0, lo_t), min(hi * 2.0, hi_t)
    t = float(brentq(g, lo, hi, xtol=1e-10 * lo, rtol=1e-12))
    return ZeroResult(t, p, float(np.linalg.norm(lam(t, p))), seed_norm, 0, "bisection")


def blowup_certificate(state: ReductionState) -> bool:
    """max u_k >= delta^(-(n-2)/2) / 2."""
    n = state.context.grid.n
    return state.max_u >= 0.5 * state.delta ** (-(n - 2) / 2)


def lambda_identity(state: ReductionState) -> float:
    """Relative gap between the state lambdas and a fresh Gram extraction of the stored residual."""
    fresh = extract_lambdas(state.residual, state.context.basis)
    scale = float(np.max(np.abs(fresh))) or 1.0
    return float(np.max(np.abs(fresh - state.lambdas))) / scale


def _engine(config: dict) -> tuple[ModelConfig, GroundState, ReductionEngine]:
    model = make_model(config)
    ground = solve_ground_state(model)
    return model, ground, ReductionEngine(model, ground, numerics(config))


def scale_report(config: dict, t: float, p: list[float] | None = None) -> ExpansionReport:
    """
    Run the reduction at one scale and build its expansion report.

    Top-level and driven by a plain config mapping so sweeps can ship it to
    worker processes.
    """
    model, ground, engine = _engine(config)
    state = engine.pingpong_outer(t, None if p is None else np.asarray(p, dtype=float))
    spec = QuadratureSpec(rel_tol=float(config.get("quad_rel_tol", 1e-9)))
    report = expansion_report(model, ground, state, spec)
    report.summary = state.summary()
    report.monitors = engine.pointwise_monitors(state).as_dict()
    return report


def zero_scale(config: dict, p: list[float] | None = None, max_iter: int = 20) -> tuple[ZeroResult, float]:
    """
    Locate a zero of the pipeline lambda map at one scale, seeded at (t0, p).

    Returns:
        The located zero with its blow-up certificate, and the t0 used as seed.

    Raises:
        KappaSignError: If kappa <= 0 at n = 6.
        RegimeError: If no sign change is found in the box.
        ConvergenceError: If Newton diverges.
    """
    model, ground, engine = _engine(config)
    spec = QuadratureSpec(rel_tol=float(config.get("quad_rel_tol", 1e-9)))
    seed_p = np.zeros(model.n) if p is None else np.asarray(p, dtype=float)
    kappa_value = model_kappa(model, ground, spec) if model.n == 6 else None
    t0 = solve_t0(ExpansionParams.from_model(model, ground, 1.0, seed_p, kappa_value), i30_coefficient="flux")
    t_bound = float(engine.settings["t_bound"])
    if not 1.0 / t_bound < t0 < t_bound:
        raise RegimeError(f"t0 = {t0:.6g} outside the admissible box [1/D, D] = [{1.0 / t_bound:g}, {t_bound:g}]")

    states: dict[tuple[float, ...], ReductionState] = {}

    def lam(t: float, p_vec: np.ndarray) -> np.ndarray:
        state = engine.pingpong_outer(t, p_vec)
        states[(t, *p_vec.tolist())] = state
        return normalized_lambdas(state)

    result = find_zero(lam, t0, seed_p, t_bound, max_iter=max_iter)
    key = (result.t, *result.p.tolist())
    state = states.get(key) or engine.pingpong_outer(result.t, result.p)
    result.certificate = blowup_certificate(state)
    if not result.certificate:
        logger.warning("Blow-up certificate fails at the zero: max u = %.4g", state.max_u)
    logger.info("Zero t* = %.10g (t0 = %.10g), |p*| = %.3g, method %s", result.t, t0, np.linalg.norm(result.p), result.method)
    return result, t0
