"""Finite-dimensional reduction around one bubble.

The engine solves, for fixed (t, p), the projected equation

    E(u0 + W + phi) = sum_j lambda_j (Delta + h) Z_j,    <phi, Z_j>_h = 0

with an inner chord Picard iteration for phi at frozen coupling v and an outer
ping-pong iteration on v in the weighted sup-norm |v / (u0 + W)|. The
coupling enters through the response L Theta of the momentum constraint,
whose squared norm damps the negative power term.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import roots_jacobi

from elreduce.config import NUMERICS_DEFAULTS, numerics
from elreduce.core.exceptions import (
    AdmissibilityError,
    CoercivityError,
    ConfigError,
    ContractionError,
    ConvergenceError,
    RegimeError,
    SingularSystemError,
    TruncationActiveError,
)
from elreduce.core.harmonic_elliptic import (
    BandedOperator,
    HarmonicField,
    HInnerProduct,
    ModeOperators,
    RadialGrid,
    inner_weight,
    linearized_potential,
    solve_scalar,
)
from elreduce.core.model import GroundState, ModelConfig, bump, conformal_offset
from elreduce.core.profiles import BubbleParams, bubble_core, bubble_radial, bubble_residual, kernel_radial
from elreduce.core.vector_green import LTBoundReport, TensorField, convolve_LgT, verify_LT_bounds

logger = logging.getLogger(__name__)

JACOBI_NODES = 32
GRAM_COND_MAX = 1e6
# W(r_cut) / u0 above this puts the cutoff annulus inside the bubble-dominated region
CUTOFF_TAIL_MAX = 0.05
FAR_FIELD_R = 4.0
MACHINE_EPS = float(np.finfo(float).eps)

RESIDUAL_TERMS = (
    "bubble_error",
    "bump_potential",
    "interaction",
    "negative_power",
    "coupling",
    "background_potential",
    "remainder",
)


def project_axisymmetric(grid: RadialGrid, fn, axis: np.ndarray) -> HarmonicField:
    """
    l = 0 and l = 1 parts of a field symmetric about an axis through the grid center.

    fn(r, c) is evaluated at radius r and cosine c of the angle to the axis;
    the sphere measure (1 - c^2)^((n-3)/2) dc is integrated by Gauss-Jacobi.
    """
    n = grid.n
    c, w = roots_jacobi(JACOBI_NODES, (n - 3) / 2.0, (n - 3) / 2.0)
    w = w / np.sum(w)
    values = fn(grid.nodes[:, None], c[None, :])
    mode0 = values @ w
    mode1 = n * (values @ (w * c))
    return HarmonicField(grid, mode0, np.outer(np.asarray(axis, dtype=float), mode1))


def power_difference(base: np.ndarray, shifted: np.ndarray, q: float) -> np.ndarray:
    """shifted^q - base^q without cancellation when shifted is close to base."""
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        out = shifted**q - np.where(base > 0, np.where(base > 0, base, 1.0) ** q, 0.0)
        close = (base > 0) & (np.abs(shifted - base) < 0.5 * base)
        safe = np.where(close, base, 1.0)
        stable = safe**q * np.expm1(q * np.log1p((shifted - safe) / safe))
    return np.where(close, stable, out)


def _shifted_power(base: np.ndarray, shift: HarmonicField, q: float, floor: float | None = None) -> HarmonicField:
    """(base + shift)^q - base^q for a radial base, truncated below at floor."""
    grid = shift.grid
    x = base + shift.mode0
    active = np.zeros(grid.size, dtype=bool) if floor is None else x < floor
    xt = np.where(active, floor if floor is not None else 0.0, x)
    mode0 = power_difference(base, xt, q)
    d1 = np.where(active, 0.0, q * xt ** (q - 1))
    d2 = np.where(active, 0.0, q * (q - 1) * xt ** (q - 2))
    mode0 = mode0 + d2 * np.sum(shift.mode1**2, axis=0) / (2.0 * grid.n)
    return HarmonicField(grid, mode0, d1 * shift.mode1)


def _dirichlet(field: HarmonicField) -> HarmonicField:
    mode0 = field.mode0.copy()
    mode1 = field.mode1.copy()
    mode0[-1] = 0.0
    mode1[:, -1] = 0.0
    return HarmonicField(field.grid, mode0, mode1)


@dataclass(frozen=True, eq=False)
class KernelBasis:
    """Z_0 (l = 0) and Z_1..Z_n (l = 1) with their Gram matrix in <.,.>_h."""

    elements: tuple[HarmonicField, ...]
    gram: np.ndarray
    inner: HInnerProduct

    @property
    def condition(self) -> float:
        return float(np.linalg.cond(self.gram))

    @property
    def max_offdiagonal(self) -> float:
        off = self.gram - np.diag(np.diag(self.gram))
        return float(np.max(np.abs(off)))

    def coefficients(self, f: HarmonicField) -> np.ndarray:
        return np.array([self.inner(f, z) for z in self.elements])

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        try:
            return np.linalg.solve(self.gram, rhs)
        except np.linalg.LinAlgError as e:
            raise SingularSystemError(f"Kernel Gram matrix is singular: {e}") from e


def build_kernel_basis(params: BubbleParams, grid: RadialGrid, inner: HInnerProduct) -> KernelBasis:
    """
    Sample Z_0..Z_n on the grid and form their Gram matrix.

    Raises:
        SingularSystemError: If the Gram condition number exceeds 1e6, i.e.
            delta is too large for the asymptotic regime.
    """
    d = grid.nodes
    elements = [HarmonicField.radial(grid, kernel_radial(0, params, d))]
    profile = kernel_radial(1, params, d)
    for i in range(grid.n):
        elements.append(HarmonicField.directional(grid, profile, np.eye(grid.n)[i]))
    gram = np.array([[inner(a, b) for b in elements] for a in elements])
    basis = KernelBasis(tuple(elements), gram, inner)
    cond = basis.condition
    if not math.isfinite(cond) or cond > GRAM_COND_MAX:
        raise SingularSystemError(
            f"Kernel Gram condition number {cond:.3e} exceeds {GRAM_COND_MAX:.0e} "
            f"(delta = {params.delta:g} too large for the asymptotic regime)"
        )
    return basis


def project_offkernel(f: HarmonicField, basis: KernelBasis) -> HarmonicField:
    """f minus its <.,.>_h projection onto span{Z_i}."""
    coeffs = basis.solve(basis.coefficients(f))
    out = f
    for c, z in zip(coeffs, basis.elements):
        out = out - z * float(c)
    return out


def extract_lambdas(residual: HarmonicField, basis: KernelBasis) -> np.ndarray:
    """Solve Gram lambda = (int residual Z_j)_j."""
    rhs = np.array([basis.inner.l2(residual, z) for z in basis.elements])
    return basis.solve(rhs)


@dataclass(frozen=True, eq=False)
class ReductionContext:
    """Everything fixed by (t, p): grid, coefficient fields, bubble, kernel basis and operators."""

    model: ModelConfig
    ground: GroundState
    params: BubbleParams
    grid: RadialGrid
    axis: np.ndarray
    h: HarmonicField
    x_field: HarmonicField
    bubble: HarmonicField
    bubble_error: np.ndarray
    background: HarmonicField
    inner: HInnerProduct
    basis: KernelBasis
    chord: ModeOperators
    constraint0: np.ndarray
    constraint1: np.ndarray
    offset: float
    truncation: float
    bubble_norm: float
    margins: dict[int, float]
    cutoff_tail: float = 0.0

    @property
    def delta(self) -> float:
        return self.params.delta


@dataclass(frozen=True, eq=False)
class InnerResult:
    """Outcome of one inner Picard run at frozen v."""

    phi: HarmonicField
    lambdas: np.ndarray
    multipliers: np.ndarray
    residual: HarmonicField
    lt: TensorField
    damping: np.ndarray
    increments: list[float]
    factors: list[float]

    @property
    def iterations(self) -> int:
        return len(self.increments)

    @property
    def contraction(self) -> float:
        return max(self.factors) if self.factors else 0.0


@dataclass(frozen=True, eq=False)
class LinearSolve:
    phi: HarmonicField
    multipliers: np.ndarray
    ratio: float


@dataclass
class ReductionDiagnostics:
    """Convergence history and measured constants of one reduction."""

    inner_iterations: list[int] = field(default_factory=list)
    inner_contraction: list[float] = field(default_factory=list)
    outer_increments: list[float] = field(default_factory=list)
    outer_factors: list[float] = field(default_factory=list)
    orthogonality: float = 0.0
    inversion_constant: float = 0.0
    pilot_ratio: float = 0.0
    pilot_constant: float = 0.0

    @property
    def outer_contraction(self) -> float:
        return max(self.outer_factors) if self.outer_factors else 0.0

    def as_dict(self) -> dict[str, Any]:
        return {
            "inner_iterations": self.inner_iterations,
            "inner_contraction": self.inner_contraction,
            "outer_increments": self.outer_increments,
            "outer_factors": self.outer_factors,
            "outer_contraction": self.outer_contraction,
            "orthogonality": self.orthogonality,
            "inversion_constant": self.inversion_constant,
            "pilot_ratio": self.pilot_ratio,
            "pilot_constant": self.pilot_constant,
        }


@dataclass(frozen=True, eq=False)
class ReductionState:
    """A converged reduction at (t, p)."""

    t: float
    p: np.ndarray
    context: ReductionContext
    v: HarmonicField
    phi: HarmonicField
    lambdas: np.ndarray
    eps_k: float
    c0: float
    lt: TensorField
    damping: np.ndarray
    residual: HarmonicField
    diagnostics: ReductionDiagnostics
    terms: dict[str, HarmonicField] = field(default_factory=dict)

    @property
    def delta(self) -> float:
        return self.context.delta

    @property
    def u_k(self) -> HarmonicField:
        return self.context.background + self.phi

    @property
    def max_u(self) -> float:
        return float(np.max(self.u_k.pointwise_bound()))

    def summary(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "p": self.p.tolist(),
            "delta": self.delta,
            "eps_k": self.eps_k,
            "C0": self.c0,
            "lambdas": self.lambdas.tolist(),
            "max_u": self.max_u,
            "gram_diagonal": np.diag(self.context.basis.gram).tolist(),
            "coercivity_margins": self.context.margins,
            "cutoff_tail": self.context.cutoff_tail,
            **self.diagnostics.as_dict(),
        }


@dataclass(frozen=True)
class MonitorReport:
    """Pointwise diagnostics of a converged state. Breaches are flagged, never raised."""

    sup_ratio: float
    sup_ratio_over_delta: float
    far_field_sup: float
    far_field_bound: float
    far_field_constant: float
    gradient_constant: float
    min_u: float
    eps0: float
    truncation_inactive: bool
    lt_bounds: LTBoundReport | None
    cutoff_tail: float = 0.0
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict[str, Any]:
        out = {
            "sup_ratio": self.sup_ratio,
            "sup_ratio_over_delta": self.sup_ratio_over_delta,
            "far_field_sup": self.far_field_sup,
            "far_field_bound": self.far_field_bound,
            "far_field_constant": self.far_field_constant,
            "gradient_constant": self.gradient_constant,
            "min_u": self.min_u,
            "eps0": self.eps0,
            "truncation_inactive": self.truncation_inactive,
            "cutoff_tail": self.cutoff_tail,
            "flags": list(self.flags),
        }
        if self.lt_bounds is not None:
            out["lt_constant"] = self.lt_bounds.constant
            out["lt_refined_constant"] = self.lt_bounds.refined_constant
            out["lt_far_field_ratio"] = self.lt_bounds.far_field_ratio
        return out


def _schur(op: BandedOperator, c: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve [[A, c], [c^T, 0]] [x; lam] = [B; 0] for each column of B."""
    sol = op.solve(np.column_stack([B, c]))
    x2 = sol[:, -1]
    X1 = sol[:, :-1]
    denom = float(c @ x2)
    if not math.isfinite(denom) or abs(denom) <= 1e-14 * np.linalg.norm(c) * np.linalg.norm(x2):
        raise SingularSystemError(f"Saddle-point system (l={op.l}) is singular")
    lam = (c @ X1) / denom
    return X1 - np.outer(x2, lam), lam


class ReductionEngine:
    """
    Inner Picard and outer ping-pong fixed points for one concentration scale.

    The engine runs the flat locally conformally flat model with constant f0.
    """

    def __init__(self, model: ModelConfig, ground: GroundState, settings: dict | None = None):
        """
        Args:
            model: Validated model configuration.
            ground: Background solution of the model.
            settings: Numerical knobs; defaults fill missing keys.

        Raises:
            ConfigError: If s_bump is nonzero or the knobs are invalid.
            RegimeError: If the model is not locally conformally flat.
        """
        if model.s_bump != 0.0:
            raise ConfigError("The reduction pipeline needs s_bump = 0 (constant f0 background)")
        if not model.lcf_flag:
            raise RegimeError("The reduction pipeline implements the flat locally conformally flat model only")
        self.model = model
        self.ground = ground
        self.settings = numerics({**NUMERICS_DEFAULTS, **(settings or {})})
        self.offset = conformal_offset(model, ground)
        self.truncation = ground.truncation_level

    def check_parameters(self, t: float, p: np.ndarray | None) -> tuple[float, np.ndarray]:
        D = float(self.settings["t_bound"])
        t = float(t)
        if not 1.0 / D <= t <= D:
            raise ConfigError(f"t = {t:g} outside [1/D, D] = [{1.0 / D:g}, {D:g}]")
        p_vec = np.zeros(self.model.n) if p is None else np.asarray(p, dtype=float)
        if p_vec.shape != (self.model.n,):
            raise ConfigError(f"p must have {self.model.n} components")
        if np.linalg.norm(p_vec) > 1.0:
            raise ConfigError(f"|p| = {np.linalg.norm(p_vec):g} exceeds 1")
        return t, p_vec

    def context(self, t: float, p: np.ndarray | None = None) -> ReductionContext:
        """
        Assemble everything fixed by (t, p).

        Raises:
            ConfigError: On parameters outside the admissible box.
            CoercivityError: If Delta + h is not coercive on the grid.
            SingularSystemError: If the kernel Gram matrix is ill-conditioned.
        """
        model = self.model
        t, p_vec = self.check_parameters(t, p)
        params = BubbleParams.from_model(model, t, p_vec)
        delta = params.delta
        r_max = max(self.settings["rmax_factor"] * math.sqrt(delta), 2.5 * model.r_cut)
        grid = RadialGrid.graded(model.n, delta, r_max, ratio=float(self.settings["grid_ratio"]))

        offset_norm = float(np.linalg.norm(params.center))
        axis = p_vec / np.linalg.norm(p_vec) if offset_norm > 0 else np.eye(model.n)[0]

        def dist_sq(r: np.ndarray, c: np.ndarray) -> np.ndarray:
            return offset_norm**2 + r**2 + 2.0 * offset_norm * r * c

        h = project_axisymmetric(
            grid, lambda r, c: model.h0 + model.bump_sign * model.tau * bump(dist_sq(r, c) / model.beta**2), axis
        )
        amplitude = model.alpha * model.mu ** ((model.n - 1) / 2.0)
        x_field = project_axisymmetric(grid, lambda r, c: amplitude * bump(dist_sq(r, c) / model.r_cut**2), axis)

        d = grid.nodes
        w = bubble_radial(params, d)
        bubble = HarmonicField.radial(grid, w)
        error = bubble_residual(params, model, params.center + np.outer(d, axis))
        error[-1] = 0.0
        background = HarmonicField.radial(grid, self.ground.u0 + w)
        cutoff_tail = float(bubble_core(params, model.r_cut)) / self.ground.u0
        if cutoff_tail > CUTOFF_TAIL_MAX:
            logger.warning(
                "Bubble tail W(r_cut) = %.3g u0 at t=%.6g: the cutoff annulus sits where the bubble dominates",
                cutoff_tail,
                t,
            )

        inner = HInnerProduct(grid, inner_weight(h.mode0))
        margins = inner.operators.margins()
        if min(margins.values()) <= 0:
            raise CoercivityError(f"Coercivity of Delta + h lost on the grid: margins {margins}")
        basis = build_kernel_basis(params, grid, inner)
        potential = linearized_potential(model, background, model.rho0, h)
        chord = ModeOperators(grid, potential.mode0)

        ctx = ReductionContext(
            model=model,
            ground=self.ground,
            params=params,
            grid=grid,
            axis=axis,
            h=h,
            x_field=x_field,
            bubble=bubble,
            bubble_error=error,
            background=background,
            inner=inner,
            basis=basis,
            chord=chord,
            constraint0=inner.operators.op0.apply(basis.elements[0].mode0),
            constraint1=inner.operators.op1.apply(basis.elements[1].mode1[0]),
            offset=self.offset,
            truncation=self.truncation,
            bubble_norm=inner.norm(bubble),
            margins=margins,
            cutoff_tail=cutoff_tail,
        )
        logger.debug("Context t=%.6g |p|=%.3g: delta=%.6g, %d nodes, r_max=%.4g", t, np.linalg.norm(p_vec), delta, grid.size, r_max)
        return ctx

    def build_kernel_basis(self, t: float, p: np.ndarray | None = None) -> KernelBasis:
        return self.context(t, p).basis

    def coupling_response(self, ctx: ReductionContext, v: HarmonicField) -> TensorField:
        """L Theta driven by [(u0 + W + v)^(2*) - u0^(2*)] X."""
        q = self.model.two_star
        u0 = self.ground.u0
        weight = _shifted_power(ctx.background.mode0, v, q) + HarmonicField.radial(
            ctx.grid, ctx.background.mode0**q - u0**q
        )
        source = weight.product(ctx.x_field)
        return convolve_LgT(HarmonicField.radial(ctx.grid, source.mode0), np.ones(ctx.grid.size), np.asarray(self.model.zdir))

    def background_response(self, ctx: ReductionContext) -> TensorField:
        """L T driven by u0^(2*) X alone."""
        source = self.ground.u0**self.model.two_star * ctx.x_field.mode0
        return convolve_LgT(HarmonicField.radial(ctx.grid, source), np.ones(ctx.grid.size), np.asarray(self.model.zdir))

    def residual_terms(
        self, ctx: ReductionContext, phi: HarmonicField, v: HarmonicField, damping: np.ndarray
    ) -> dict[str, HarmonicField]:
        """The residual of u0 + W + phi split into its named contributions."""
        model = self.model
        grid = ctx.grid
        q = model.two_star
        u0 = self.ground.u0
        f = model.f0
        w = ctx.bubble.mode0
        base = ctx.background.mode0
        bump_part = HarmonicField(grid, ctx.h.mode0 - model.h0, ctx.h.mode1)

        def radial(values: np.ndarray) -> HarmonicField:
            return HarmonicField.radial(grid, values)

        interaction = (model.h0 - ctx.offset) * w - f * (
            power_difference(w, w + u0, q - 1) - u0 ** (q - 1)
        )
        negative = -model.rho0 * (np.maximum(base, ctx.truncation) ** (-q - 1) - u0 ** (-q - 1))
        damped = _shifted_power(base, v, -q - 1, floor=ctx.truncation) + radial(
            np.maximum(base, ctx.truncation) ** (-q - 1)
        )

        laplacian = ModeOperators(grid).apply(phi)
        remainder = (
            laplacian
            + ctx.h.product(phi)
            - _shifted_power(base, phi, q - 1) * f
            - _shifted_power(base, phi, -q - 1, floor=ctx.truncation) * model.rho0
        )
        terms = {
            "bubble_error": radial(ctx.bubble_error),
            "bump_potential": bump_part.scale_radial(w),
            "interaction": radial(interaction),
            "negative_power": radial(negative),
            "coupling": -damped.scale_radial(damping),
            "background_potential": bump_part * u0,
            "remainder": remainder,
        }
        return {name: _dirichlet(term) for name, term in terms.items()}

    def residual(
        self, ctx: ReductionContext, phi: HarmonicField, v: HarmonicField, damping: np.ndarray
    ) -> HarmonicField:
        total = HarmonicField.zeros(ctx.grid)
        for term in self.residual_terms(ctx, phi, v, damping).values():
            total = total + term
        return total

    def _bordered_solve(self, ctx: ReductionContext, rhs: HarmonicField) -> tuple[HarmonicField, np.ndarray]:
        op0, op1 = ctx.chord.op0, ctx.chord.op1
        b0 = (op0.mass * op0.restrict(rhs.mode0))[:, None]
        x0, lam0 = _schur(op0, ctx.constraint0, b0)
        B1 = op1.mass[:, None] * rhs.mode1[:, op1.index].T
        X1, lam1 = _schur(op1, ctx.constraint1, B1)
        mode1 = np.array([op1.extend(X1[:, i]) for i in range(ctx.grid.n)])
        return HarmonicField(ctx.grid, op0.extend(x0[:, 0]), mode1), np.concatenate([lam0, lam1])

    def _riesz(self, ctx: ReductionContext, rhs: HarmonicField) -> HarmonicField:
        ops = ctx.inner.operators
        mode1 = np.array([solve_scalar(ops.op1, row) for row in rhs.mode1])
        return HarmonicField(ctx.grid, solve_scalar(ops.op0, rhs.mode0), mode1)

    def invert_linearized(self, ctx: ReductionContext, rhs: HarmonicField) -> LinearSolve:
        """
        Solve L phi = rhs + sum_j mu_j (Delta + h) Z_j with <phi, Z_j>_h = 0.

        Returns:
            LinearSolve with phi, the multipliers mu and the measured ratio
            |phi|_h / |(Delta + h)^-1 rhs|_h.

        Raises:
            SingularSystemError: If the saddle system is singular.
            CoercivityError: If the measured ratio exceeds inversion_cmax.
        """
        phi, multipliers = self._bordered_solve(ctx, rhs)
        dual = ctx.inner.norm(self._riesz(ctx, rhs))
        ratio = ctx.inner.norm(phi) / dual if dual > 0 else 0.0
        cmax = float(self.settings["inversion_cmax"])
        if ratio > cmax:
            raise CoercivityError(
                f"Inversion constant {ratio:.3e} exceeds {cmax:.1e}: coercivity of the linearized operator on K-perp lost"
            )
        return LinearSolve(phi=phi, multipliers=multipliers, ratio=ratio)

    def picard_inner(
        self, ctx: ReductionContext, v: HarmonicField | None = None, eps_k: float | None = None
    ) -> InnerResult:
        """
        Chord Picard iteration phi <- phi - L0^-1 E(phi) on K-perp at frozen v.

        Args:
            ctx: Assembled context.
            v: Outer iterate; zero for the pilot run.
            eps_k: Admissibility radius setting the stopping scale (delta if omitted).

        Returns:
            InnerResult with phi, the kernel coefficients and the contraction history.

        Raises:
            ContractionError: If any increment above roundoff fails to contract.
            ConvergenceError: If max_inner iterations are exhausted.
        """
        grid = ctx.grid
        v = HarmonicField.zeros(grid) if v is None else v
        lt = self.coupling_response(ctx, v)
        damping = lt.norm_sq_l0
        tol = float(self.settings["inner_tol"]) * (eps_k or ctx.delta) * ctx.bubble_norm
        stall = math.sqrt(MACHINE_EPS) * ctx.bubble_norm

        phi = HarmonicField.zeros(grid)
        increments: list[float] = []
        factors: list[float] = []
        multipliers = np.zeros(grid.n + 1)
        for iteration in range(1, int(self.settings["max_inner"]) + 1):
            residual = self.residual(ctx, phi, v, damping)
            psi, multipliers = self._bordered_solve(ctx, residual)
            phi = phi - psi
            increment = ctx.inner.norm(psi)
            increments.append(increment)
            if len(increments) > 1 and increments[-2] > 0:
                factors.append(increment / increments[-2])
            logger.debug("inner %d: increment %.3e factor %s", iteration, increment, f"{factors[-1]:.3f}" if factors else "-")
            floor = 64 * MACHINE_EPS * (ctx.bubble_norm + ctx.inner.norm(phi))
            if increment <= max(tol, floor):
                break
            if factors and factors[-1] >= 1.0:
                if increment <= stall:
                    logger.debug("inner iteration stalled at roundoff level %.3e", increment)
                    break
                raise ContractionError(
                    f"Contraction lost in the inner fixed point at iteration {iteration}: factors "
                    + ", ".join(f"{f:.3f}" for f in factors)
                )
        else:
            raise ConvergenceError(f"Inner Picard iteration did not converge in {self.settings['max_inner']} iterations")

        residual = self.residual(ctx, phi, v, damping)
        lambdas = extract_lambdas(residual, ctx.basis)
        return InnerResult(
            phi=phi,
            lambdas=lambdas,
            multipliers=multipliers,
            residual=residual,
            lt=lt,
            damping=damping,
            increments=increments,
            factors=factors,
        )

    def pingpong_outer(self, t: float, p: np.ndarray | None = None) -> ReductionState:
        """
        Outer fixed point v <- phi(v) in the weighted sup-norm.

        The window is eps_k = 4 C0 delta with the fixed admissibility_constant
        C0. A pilot inner run at v = 0 must land inside eps_k / 2, and every
        outer iterate must stay in F_k.

        Raises:
            AdmissibilityError: If the pilot correction or an iterate leaves F_k.
            ContractionError: If the outer map stops contracting.
            TruncationActiveError: If min u_k falls below the truncation level.
            ConvergenceError: If max_outer iterations are exhausted.
        """
        ctx = self.context(t, p)
        weight = ctx.background.mode0
        diagnostics = ReductionDiagnostics()

        pilot = self.picard_inner(ctx)
        diagnostics.inner_iterations.append(pilot.iterations)
        diagnostics.inner_contraction.append(pilot.contraction)
        pilot_ratio = pilot.phi.weighted_sup(weight)
        diagnostics.pilot_ratio = pilot_ratio
        diagnostics.pilot_constant = pilot_ratio / ctx.delta
        c0 = float(self.settings["admissibility_constant"])
        eps_k = 4.0 * c0 * ctx.delta
        logger.info(
            "C0 = %.6g, eps_k = %.6g (eps_k / mu^1.5 = %.4g), pilot |phi / (u + W)| = %.4g delta",
            c0,
            eps_k,
            eps_k / self.model.mu**1.5,
            diagnostics.pilot_constant,
        )
        if pilot_ratio > 0.5 * eps_k:
            raise AdmissibilityError(
                f"Pilot correction |phi / (u + W)| = {pilot_ratio:.4g} = {diagnostics.pilot_constant:.4g} delta "
                f"exceeds eps_k / 2 = {0.5 * eps_k:.4g}: the scale is outside the perturbative regime"
            )

        zero = HarmonicField.zeros(ctx.grid)
        first = self.invert_linearized(ctx, self.residual(ctx, zero, zero, pilot.damping))
        diagnostics.inversion_constant = first.ratio

        outer_tol = float(self.settings["outer_tol"])
        v = pilot.phi
        result = pilot
        for iteration in range(1, int(self.settings["max_outer"]) + 1):
            ratio = v.weighted_sup(weight)
            if ratio > eps_k * (1 + 1e-12):
                raise AdmissibilityError(
                    f"F_k escape: |v / (u + W)| = {ratio:.4g} exceeds eps_k = {eps_k:.4g} "
                    "(eta or alpha too large for the reduction)"
                )
            v_used = v
            result = self.picard_inner(ctx, v_used, eps_k)
            diagnostics.inner_iterations.append(result.iterations)
            diagnostics.inner_contraction.append(result.contraction)
            increment = (result.phi - v_used).weighted_sup(weight)
            diagnostics.outer_increments.append(increment)
            if len(diagnostics.outer_increments) > 1 and diagnostics.outer_increments[-2] > 0:
                diagnostics.outer_factors.append(increment / diagnostics.outer_increments[-2])
            logger.debug("outer %d: increment %.3e", iteration, increment)
            v = result.phi
            if increment < outer_tol:
                break
            factors = diagnostics.outer_factors
            if factors and factors[-1] >= 1.0:
                raise ContractionError(
                    "Contraction lost in the outer fixed point: factors " + ", ".join(f"{f:.3f}" for f in factors)
                )
        else:
            raise ConvergenceError(f"Outer ping-pong did not converge in {self.settings['max_outer']} iterations")

        phi = result.phi
        u_min = float(np.min((ctx.background + phi).pointwise_min()))
        if u_min < ctx.truncation:
            raise TruncationActiveError(
                f"Truncation active at the fixed point: min u_k = {u_min:.4g} < eps = {ctx.truncation:.4g}"
            )
        norms = np.array([ctx.inner.norm(z) for z in ctx.basis.elements])
        phi_norm = ctx.inner.norm(phi)
        coeffs = np.abs(ctx.basis.coefficients(phi))
        diagnostics.orthogonality = float(np.max(coeffs / (norms * phi_norm))) if phi_norm > 0 else 0.0
        if diagnostics.orthogonality > 1e-8:
            logger.warning("Orthogonality residual %.3e exceeds 1e-8", diagnostics.orthogonality)

        logger.info(
            "Reduction t=%.6g: %d outer iterations, lambda_0 = %.6e, inner contraction %.3g, outer %.3g",
            ctx.params.t,
            len(diagnostics.outer_increments),
            result.lambdas[0],
            max(diagnostics.inner_contraction),
            diagnostics.outer_contraction,
        )
        return ReductionState(
            t=ctx.params.t,
            p=np.asarray(p if p is not None else np.zeros(self.model.n), dtype=float),
            context=ctx,
            v=v_used,
            phi=phi,
            lambdas=result.lambdas,
            eps_k=eps_k,
            c0=c0,
            lt=result.lt,
            damping=result.damping,
            residual=result.residual,
            terms=self.residual_terms(ctx, phi, v_used, result.damping),
            diagnostics=diagnostics,
        )

    def pointwise_monitors(self, state: ReductionState, R: float = FAR_FIELD_R) -> MonitorReport:
        """Sup ratio, far-field decay, gradient and positivity monitors of a converged state."""
        ctx = state.context
        grid = ctx.grid
        n, delta = grid.n, ctx.delta
        r = grid.nodes
        phi = state.phi
        bound = phi.pointwise_bound()

        sup_ratio = phi.weighted_sup(ctx.background.mode0)
        far = r >= R * math.sqrt(delta)
        far_sup = float(np.max(bound[far])) if np.any(far) else 0.0
        far_bound = delta / R**2 + R**2 * delta**2 + delta ** ((n - 2) / 2) * ctx.model.r_cut ** (-n)

        grad = np.abs(grid.gradient(phi.mode0))
        grad = grad + np.linalg.norm(np.array([grid.gradient(row) for row in phi.mode1]), axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = grad + np.where(r > 0, np.linalg.norm(phi.mode1, axis=0) / np.where(r > 0, r, 1.0), 0.0)
        theta = delta + r
        gradient_constant = float(np.max(grad / (1.0 + delta ** ((n - 2) / 2) * theta ** (1 - n))))

        min_u = float(np.min(state.u_k.pointwise_min()))
        eps0 = self.ground.eps0
        x_grad = np.abs(grid.gradient(ctx.x_field.mode0)) + np.linalg.norm(ctx.x_field.mode1, axis=0) / np.maximum(r, r[1])
        v_far = float(np.max(state.v.pointwise_bound()[far])) if np.any(far) else 0.0
        lt_base = self.background_response(ctx)
        lt_bounds = verify_LT_bounds(
            state.lt + lt_base,
            lt_base,
            ctx.params,
            x_center_norm=float(ctx.x_field.mode0[0]),
            grad_x_norm=float(np.max(x_grad)),
            x_sup=float(np.max(ctx.x_field.pointwise_bound())),
            eps_k=state.eps_k,
            v_far_sup=v_far,
            R=R,
        )

        flags = []
        if sup_ratio >= 0.5:
            flags.append("sup_ratio")
        if min_u < eps0:
            flags.append("min_u_below_eps0")
        if ctx.cutoff_tail > CUTOFF_TAIL_MAX:
            flags.append("cutoff_tail")
        for flag in flags:
            logger.warning("Monitor threshold breached: %s", flag)
        return MonitorReport(
            sup_ratio=sup_ratio,
            sup_ratio_over_delta=sup_ratio / delta,
            far_field_sup=far_sup,
            far_field_bound=far_bound,
            far_field_constant=far_sup / far_bound,
            gradient_constant=gradient_constant,
            min_u=min_u,
            eps0=eps0,
            truncation_inactive=min_u >= ctx.truncation,
            lt_bounds=lt_bounds,
            cutoff_tail=ctx.cutoff_tail,
            flags=tuple(flags),
        )
