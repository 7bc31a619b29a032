"""Radial elliptic solver on a ball for the spherical-harmonic modes l = 0 and l = 1.

Fields are stored as nodal radial profiles on a graded grid: a scalar field is
a0(r) + a1(r) . y/|y| with a0 the l = 0 profile and a1 the n directional l = 1
profiles. The discretization is a conservative finite volume scheme with
lumped masses M_j = int phi_j r^(n-1) dr. Face weights are 1 / int r^(1-n) dr,
which makes the Newtonian kernel r^(2-n) discretely harmonic at the nodes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded, eigh_tridiagonal, solve_banded
from scipy.special import roots_legendre

from elreduce.core.exceptions import CoercivityError, ConfigError, ConvergenceError, SingularSystemError
from elreduce.core.model import ModelConfig, critical_exponent
from elreduce.core.quadrature import sphere_area

logger = logging.getLogger(__name__)

ELEMENT_GAUSS_ORDER = 8
MIN_NODES_BELOW_DELTA = 8


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Graded radial nodes on [0, r_max]; node 0 is the center."""

    n: int
    nodes: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ConfigError("A radial grid needs at least three nodes")
        if nodes[0] != 0.0 or np.any(np.diff(nodes) <= 0):
            raise ConfigError("Radial nodes must start at 0 and increase strictly")

    @classmethod
    def graded(
        cls,
        n: int,
        delta: float,
        r_max: float,
        ratio: float = 1.04,
        inner_fraction: float = 1.0 / 64.0,
    ) -> RadialGrid:
        """Node 0 plus geometric nodes from inner_fraction * delta up to r_max."""
        r_min = inner_fraction * delta
        if not 0 < r_min < r_max:
            raise ConfigError(f"Grid needs 0 < {r_min:g} < r_max = {r_max:g}")
        count = int(math.ceil(math.log(r_max / r_min) / math.log(ratio))) + 1
        grid = cls(n=n, nodes=np.concatenate(([0.0], np.geomspace(r_min, r_max, count))))
        if grid.nodes_below(delta) < MIN_NODES_BELOW_DELTA:
            raise ConfigError(f"Grid resolves delta = {delta:g} with fewer than {MIN_NODES_BELOW_DELTA} nodes")
        return grid

    @property
    def r_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    @property
    def omega(self) -> float:
        return sphere_area(self.n - 1)

    def nodes_below(self, delta: float) -> int:
        return int(np.count_nonzero((self.nodes > 0) & (self.nodes < delta)))

    def _element_moments(self, power: int) -> tuple[np.ndarray, np.ndarray]:
        """Per element, int phi_left s^power and int phi_right s^power."""
        x, w = roots_legendre(ELEMENT_GAUSS_ORDER)
        a, b = self.nodes[:-1, None], self.nodes[1:, None]
        h = b - a
        s = a + 0.5 * h * (x + 1.0)
        weight = 0.5 * h * w * s**power
        left = np.sum(weight * (b - s) / h, axis=1)
        right = np.sum(weight * (s - a) / h, axis=1)
        return left, right

    def _nodal_moment(self, power: int) -> np.ndarray:
        left, right = self._element_moments(power)
        out = np.zeros(self.size)
        out[:-1] += left
        out[1:] += right
        return out

    @cached_property
    def mass(self) -> np.ndarray:
        """Lumped masses int phi_j r^(n-1) dr."""
        return self._nodal_moment(self.n - 1)

    @cached_property
    def centrifugal(self) -> np.ndarray:
        """(n - 1) int phi_j r^(n-3) dr, the lumped l = 1 angular term."""
        return (self.n - 1) * self._nodal_moment(self.n - 3)

    @cached_property
    def face_weights(self) -> np.ndarray:
        r = self.nodes
        n = self.n
        weights = np.empty(self.size - 1)
        weights[0] = r[1] ** (n - 2) / n
        weights[1:] = (n - 2) / (r[1:-1] ** (2 - n) - r[2:] ** (2 - n))
        return weights

    def cumulative(self, values: np.ndarray, power: int) -> np.ndarray:
        """int_0^(r_j) v(s) s^power ds with v piecewise linear between nodes."""
        left, right = self._element_moments(power)
        values = np.asarray(values, dtype=float)
        pieces = left * values[:-1] + right * values[1:]
        return np.concatenate(([0.0], np.cumsum(pieces)))

    def gradient(self, values: np.ndarray) -> np.ndarray:
        return np.gradient(np.asarray(values, dtype=float), self.nodes)


@dataclass(frozen=True, eq=False)
class BandedOperator:
    """Symmetric tridiagonal weak form of -u'' - (n-1)/r u' + l(l+n-2)/r^2 u + V u."""

    grid: RadialGrid
    l: int
    index: np.ndarray
    diag: np.ndarray
    off: np.ndarray
    mass: np.ndarray

    @property
    def size(self) -> int:
        return int(self.index.size)

    def restrict(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float)[self.index]

    def extend(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.size)
        out[self.index] = values
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """A x on the unknowns."""
        y = self.diag * x
        y[:-1] += self.off * x[1:]
        y[1:] += self.off * x[:-1]
        return y

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Weak application to a full nodal profile."""
        return self.matvec(self.restrict(values))

    def apply_strong(self, values: np.ndarray) -> np.ndarray:
        """Nodal values of the operator, zero on the Dirichlet nodes."""
        return self.extend(self.apply(values) / self.mass)

    def banded(self) -> np.ndarray:
        ab = np.zeros((3, self.size))
        ab[0, 1:] = self.off
        ab[1] = self.diag
        ab[2, :-1] = self.off
        return ab

    def upper_banded(self) -> np.ndarray:
        ab = np.zeros((2, self.size))
        ab[0, 1:] = self.off
        ab[1] = self.diag
        return ab

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def solve(self, rhs_weak: np.ndarray) -> np.ndarray:
        """General banded LU solve of A x = b on the unknowns (b may have several columns)."""
        try:
            x = solve_banded((1, 1), self.banded(), rhs_weak)
        except (LinAlgError, ValueError) as e:
            raise SingularSystemError(f"Banded operator (l={self.l}) is singular: {e}") from e
        if not np.all(np.isfinite(x)):
            raise SingularSystemError(f"Banded operator (l={self.l}) is singular")
        return x


def assemble_operator(grid: RadialGrid, potential: np.ndarray | float, l: int) -> BandedOperator:
    """
    Assemble the weak operator of Delta + V for mode l.

    Dirichlet conditions hold at r_max, and at r = 0 for l = 1; l = 0 has the
    natural (Neumann) condition at the center.
    """
    if l not in (0, 1):
        raise ConfigError(f"Only harmonic modes l = 0, 1 are supported, got {l}")
    V = np.broadcast_to(np.asarray(potential, dtype=float), (grid.size,))
    if not np.all(np.isfinite(V)):
        raise ConfigError("Potential must be finite on the grid")
    w = grid.face_weights
    full_diag = np.zeros(grid.size)
    full_diag[:-1] += w
    full_diag[1:] += w
    full_diag += grid.mass * V
    if l == 1:
        full_diag += grid.centrifugal
    index = np.arange(l, grid.size - 1)
    return BandedOperator(
        grid=grid,
        l=l,
        index=index,
        diag=full_diag[index],
        off=-w[index[:-1]],
        mass=grid.mass[index],
    )


def solve_scalar(op: BandedOperator, rhs: np.ndarray) -> np.ndarray:
    """
    Solve (Delta + V) u = rhs for a coercive operator.

    Banded Cholesky followed by one refinement step against the banded
    residual, which keeps the nodal residual at the rounding level of A x.

    Args:
        op: Assembled operator.
        rhs: Nodal right-hand side on the full grid.

    Returns:
        Nodal solution on the full grid, zero on the Dirichlet nodes.

    Raises:
        CoercivityError: If the operator is not positive definite.
        ConvergenceError: If the backward residual exceeds 1e-10.
    """
    b = op.mass * op.restrict(rhs)
    x = _spd_solve(op, b, f"Coercivity of Delta + h lost (l={op.l}): operator is not positive definite")
    return op.extend(x)


def _spd_solve(op: BandedOperator, b: np.ndarray, message: str) -> np.ndarray:
    try:
        factor = cholesky_banded(op.upper_banded())
    except LinAlgError as e:
        raise CoercivityError(message) from e
    x = cho_solve_banded((factor, False), b)
    x = x + cho_solve_banded((factor, False), b - op.matvec(x))
    _check_residual(op, x, b)
    return x


def _check_residual(op: BandedOperator, x: np.ndarray, b: np.ndarray) -> None:
    residual = np.linalg.norm(op.matvec(x) - b)
    scale = np.linalg.norm(np.abs(op.diag * x)) + 2 * np.linalg.norm(np.abs(op.off) * np.abs(x[1:])) + np.linalg.norm(b)
    if scale > 0 and residual > 1e-10 * scale:
        raise ConvergenceError(f"Banded solve residual {residual:.3e} exceeds tolerance")


def green_function(op: BandedOperator, r_source: float = 0.0) -> np.ndarray:
    """
    Radial Green function with a point (or shell) source at r_source.

    The source is the nodal delta at the nearest unknown node, normalized by
    omega_(n-1) so the total flux through any sphere enclosing it is one.

    Raises:
        CoercivityError: If the operator is not positive definite.
    """
    j = int(np.argmin(np.abs(op.grid.nodes[op.index] - r_source)))
    b = np.zeros(op.size)
    b[j] = 1.0 / op.grid.omega
    x = _spd_solve(op, b, "Coercivity lost: Green function requires a positive definite operator")
    return op.extend(x)


def green_bounds(grid: RadialGrid, green: np.ndarray, d_min: float, d_max: float) -> tuple[float, float]:
    """Measured (c1, c2) with c1 d^(2-n) <= (n-2) omega G <= c2 d^(2-n) on [d_min, d_max]."""
    r = grid.nodes
    mask = (r >= d_min) & (r <= d_max)
    if not np.any(mask):
        raise ConfigError(f"No grid nodes in [{d_min:g}, {d_max:g}]")
    ratio = green[mask] * (grid.n - 2) * grid.omega * r[mask] ** (grid.n - 2)
    return float(ratio.min()), float(ratio.max())


def coercivity_margin(op: BandedOperator) -> float:
    """
    Smallest eigenvalue of the mass-normalized discrete quadratic form.

    Raises:
        ConvergenceError: If the tridiagonal eigensolver fails.
    """
    scale = 1.0 / np.sqrt(op.mass)
    d = op.diag * scale**2
    e = op.off * scale[:-1] * scale[1:]
    try:
        values = eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, 0))
    except LinAlgError as e:
        raise ConvergenceError(f"Eigenvalue iteration for the coercivity margin failed: {e}") from e
    return float(values[0])


def coercivity_margins(grid: RadialGrid, potential: np.ndarray | float) -> dict[int, float]:
    return {l: coercivity_margin(assemble_operator(grid, potential, l)) for l in (0, 1)}


@dataclass(frozen=True, eq=False)
class HarmonicField:
    """Scalar field a0(r) + a1(r) . y/|y| on a radial grid."""

    grid: RadialGrid
    mode0: np.ndarray
    mode1: np.ndarray

    def __post_init__(self) -> None:
        mode0 = np.array(self.mode0, dtype=float)
        mode1 = np.array(self.mode1, dtype=float)
        if mode0.shape != (self.grid.size,) or mode1.shape != (self.grid.n, self.grid.size):
            raise ConfigError("Harmonic field arrays do not match the grid")
        mode1[:, 0] = 0.0
        object.__setattr__(self, "mode0", mode0)
        object.__setattr__(self, "mode1", mode1)

    @classmethod
    def zeros(cls, grid: RadialGrid) -> HarmonicField:
        return cls(grid, np.zeros(grid.size), np.zeros((grid.n, grid.size)))

    @classmethod
    def radial(cls, grid: RadialGrid, values: np.ndarray) -> HarmonicField:
        return cls(grid, values, np.zeros((grid.n, grid.size)))

    @classmethod
    def directional(cls, grid: RadialGrid, profile: np.ndarray, direction: np.ndarray) -> HarmonicField:
        """Pure l = 1 field profile(r) * (direction . y/|y|)."""
        return cls(grid, np.zeros(grid.size), np.outer(np.asarray(direction, dtype=float), profile))

    def __add__(self, other: HarmonicField) -> HarmonicField:
        return HarmonicField(self.grid, self.mode0 + other.mode0, self.mode1 + other.mode1)

    def __sub__(self, other: HarmonicField) -> HarmonicField:
        return HarmonicField(self.grid, self.mode0 - other.mode0, self.mode1 - other.mode1)

    def __mul__(self, scalar: float) -> HarmonicField:
        return HarmonicField(self.grid, scalar * self.mode0, scalar * self.mode1)

    __rmul__ = __mul__

    def __neg__(self) -> HarmonicField:
        return self * -1.0

    def product(self, other: HarmonicField) -> HarmonicField:
        """Pointwise product truncated to l <= 1."""
        n = self.grid.n
        mode0 = self.mode0 * other.mode0 + np.sum(self.mode1 * other.mode1, axis=0) / n
        mode1 = self.mode0 * other.mode1 + other.mode0 * self.mode1
        return HarmonicField(self.grid, mode0, mode1)

    def scale_radial(self, values: np.ndarray) -> HarmonicField:
        """Product with a purely radial profile."""
        return HarmonicField(self.grid, values * self.mode0, values * self.mode1)

    def compose(
        self,
        g: Callable[[np.ndarray], np.ndarray],
        dg: Callable[[np.ndarray], np.ndarray],
        d2g: Callable[[np.ndarray], np.ndarray] | None = None,
    ) -> HarmonicField:
        """g of the field, expanded to second order in the l = 1 part."""
        a1_sq = np.sum(self.mode1**2, axis=0)
        mode0 = g(self.mode0)
        if d2g is not None:
            mode0 = mode0 + d2g(self.mode0) * a1_sq / (2.0 * self.grid.n)
        return HarmonicField(self.grid, mode0, dg(self.mode0) * self.mode1)

    def pointwise_bound(self) -> np.ndarray:
        """|a0| + |a1|, the supremum over directions of the field at each radius."""
        return np.abs(self.mode0) + np.linalg.norm(self.mode1, axis=0)

    def pointwise_min(self) -> np.ndarray:
        return self.mode0 - np.linalg.norm(self.mode1, axis=0)

    def sup_norm(self) -> float:
        return float(np.max(self.pointwise_bound()))

    def weighted_sup(self, weight: np.ndarray) -> float:
        """sup |field / weight| for a positive radial weight."""
        return float(np.max(self.pointwise_bound() / weight))

    def at(self, r_index: int, direction: np.ndarray) -> float:
        return float(self.mode0[r_index] + np.dot(self.mode1[:, r_index], direction))


class ModeOperators:
    """The pair of operators Delta + V for the modes l = 0 and l = 1."""

    def __init__(self, grid: RadialGrid, potential: np.ndarray | float = 0.0) -> None:
        self.grid = grid
        self.potential = np.broadcast_to(np.asarray(potential, dtype=float), (grid.size,)).copy()
        self.op0 = assemble_operator(grid, self.potential, 0)
        self.op1 = assemble_operator(grid, self.potential, 1)

    def apply(self, field: HarmonicField) -> HarmonicField:
        """Strong nodal application mode by mode."""
        mode1 = np.array([self.op1.apply_strong(row) for row in field.mode1])
        return HarmonicField(self.grid, self.op0.apply_strong(field.mode0), mode1)

    def quadratic(self, a: HarmonicField, b: HarmonicField) -> float:
        """int grad a . grad b + V a b over R^n."""
        total = float(np.dot(self.op0.restrict(a.mode0), self.op0.apply(b.mode0)))
        for row_a, row_b in zip(a.mode1, b.mode1):
            total += float(np.dot(self.op1.restrict(row_a), self.op1.apply(row_b))) / self.grid.n
        return self.grid.omega * total

    def margins(self) -> dict[int, float]:
        return {0: coercivity_margin(self.op0), 1: coercivity_margin(self.op1)}


def inner_weight(h_mode0: np.ndarray) -> np.ndarray:
    """Weight of the h-product: h itself when positive on the grid, else h^+ + 1."""
    h_mode0 = np.asarray(h_mode0, dtype=float)
    if np.min(h_mode0) > 0:
        return h_mode0
    logger.warning("h is not positive on the grid; the inner product uses h^+ + 1")
    return np.maximum(h_mode0, 0.0) + 1.0


class HInnerProduct:
    """Discrete <a, b>_h = int grad a . grad b + h a b and the lumped L^2 product."""

    def __init__(self, grid: RadialGrid, weight: np.ndarray | float) -> None:
        self.grid = grid
        self.operators = ModeOperators(grid, weight)

    def __call__(self, a: HarmonicField, b: HarmonicField) -> float:
        return self.operators.quadratic(a, b)

    def norm(self, a: HarmonicField) -> float:
        return math.sqrt(max(self(a, a), 0.0))

    def l2(self, a: HarmonicField, b: HarmonicField) -> float:
        """Lumped int a b over R^n, Dirichlet nodes excluded."""
        op0, op1 = self.operators.op0, self.operators.op1
        total = float(np.sum(op0.mass * op0.restrict(a.mode0) * op0.restrict(b.mode0)))
        for row_a, row_b in zip(a.mode1, b.mode1):
            total += float(np.sum(op1.mass * op1.restrict(row_a) * op1.restrict(row_b))) / self.grid.n
        return self.grid.omega * total


def linearized_potential(
    model: ModelConfig, u: HarmonicField, lt_term: np.ndarray | float, h: HarmonicField
) -> HarmonicField:
    """h - (2*-1) f u^(2*-2) + (2*+1) (|L T + sigma|^2 + pi^2) u^(-2*-2)."""
    if np.min(u.pointwise_min()) <= 0:
        raise ConfigError("The linearized operator needs u > 0 on the grid")
    p = critical_exponent(model.n)
    focusing = u.compose(
        lambda a: a ** (p - 2),
        lambda a: (p - 2) * a ** (p - 3),
        lambda a: (p - 2) * (p - 3) * a ** (p - 4),
    )
    damping = u.compose(
        lambda a: a ** (-p - 2),
        lambda a: (-p - 2) * a ** (-p - 3),
        lambda a: (p + 2) * (p + 3) * a ** (-p - 4),
    )
    lt = np.broadcast_to(np.asarray(lt_term, dtype=float), (u.grid.size,))
    return h - focusing * ((p - 1) * model.f0) + damping.scale_radial((p + 1) * lt)


def apply_Lu(
    model: ModelConfig,
    u: HarmonicField,
    lt_term: np.ndarray | float,
    v: HarmonicField,
    h: HarmonicField | None = None,
) -> HarmonicField:
    """
    L_u v = Delta v + [h - (2*-1) f u^(2*-2) + (2*+1)(|L T + sigma|^2 + pi^2) u^(-2*-2)] v.

    Args:
        model: Model data (f is the constant f0).
        u: Positive background field.
        lt_term: Radial profile of |L T + sigma|^2 + pi^2.
        v: Field to apply the operator to.
        h: Potential field; defaults to the constant h0.

    Returns:
        The nodal values of L_u v, zero on the Dirichlet nodes.
    """
    if h is None:
        h = HarmonicField.radial(u.grid, np.full(u.grid.size, model.h0))
    laplacian = ModeOperators(u.grid).apply(v)
    result = laplacian + linearized_potential(model, u, lt_term, h).product(v)
    mode0 = result.mode0.copy()
    mode0[-1] = 0.0
    mode1 = result.mode1.copy()
    mode1[:, -1] = 0.0
    return HarmonicField(u.grid, mode0, mode1)


def background_margins(model: ModelConfig, grid: RadialGrid, u0: float) -> dict[int, float]:
    """Coercivity margins of L_u at the constant background u = u0, L T = 0 and sigma^2 + pi^2 = rho0."""
    u = HarmonicField.radial(grid, np.full(grid.size, u0))
    h = HarmonicField.radial(grid, np.full(grid.size, model.h0))
    return coercivity_margins(grid, linearized_potential(model, u, model.rho0, h).mode0)
