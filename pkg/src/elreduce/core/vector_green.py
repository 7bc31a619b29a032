"""Momentum-constraint response on flat space through the Kelvin kernel of the Lame operator.

The Lame operator is -div L, with L the conformal Killing derivative
(L Y)_ij = d_i Y_j + d_j Y_i - (2/n) div Y delta_ij. For a source rho(r) zeta
with a fixed unit vector zeta the response tensor has the closed radial form

    L Theta = a(r) s delta + b(r) (zeta x + x zeta) + c(r) s x x,   s = zeta . x

with x the unit radial vector, so the convolution reduces to three radial
integrals on the grid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from elreduce.core.exceptions import ConfigError
from elreduce.core.harmonic_elliptic import HarmonicField, RadialGrid
from elreduce.core.profiles import BubbleParams
from elreduce.core.quadrature import sphere_area

logger = logging.getLogger(__name__)

TRACE_RTOL = 1e-8


@dataclass(frozen=True)
class KelvinKernel:
    """Coefficient table of the fundamental solution of -div L in R^n."""

    n: int

    def __post_init__(self) -> None:
        if self.n < 3:
            raise ConfigError(f"Kelvin kernel needs n >= 3, got {self.n}")

    @property
    def omega(self) -> float:
        return sphere_area(self.n - 1)

    @property
    def delta_coefficient(self) -> float:
        n = self.n
        return (3 * n - 2) / ((n - 2) * 4 * (n - 1) * self.omega)

    @property
    def dyad_coefficient(self) -> float:
        n = self.n
        return (n - 2) / (4 * (n - 1) * self.omega)

    @property
    def strain_coefficient(self) -> float:
        """Prefactor of the derivative kernel H, also the far-field constant per unit mass."""
        return self.n / (2 * (self.n - 1) * self.omega)


def _unit(y: np.ndarray) -> tuple[np.ndarray, float]:
    y = np.asarray(y, dtype=float)
    r = float(np.linalg.norm(y))
    if r == 0.0:
        raise ConfigError("Kelvin kernel is singular at y = 0")
    return y / r, r


def kelvin_green(n: int, y: np.ndarray, i: int) -> np.ndarray:
    """
    G_i(y)_j = |y|^(2-n) ((3n-2)/(n-2) delta_ij + (n-2) y_i y_j / |y|^2) / (4 (n-1) omega_(n-1)).

    The 1-form G_i solves -div L G_i = delta_0 e_i.

    Args:
        n: Dimension.
        y: Nonzero point of R^n.
        i: Axis of the point force (0-based).

    Returns:
        The n components of G_i(y).

    Raises:
        ConfigError: If y = 0 or the axis is out of range.
    """
    if not 0 <= i < n:
        raise ConfigError(f"Axis {i} outside 0..{n - 1}")
    kernel = KelvinKernel(n)
    unit, r = _unit(y)
    out = kernel.dyad_coefficient * unit[i] * unit
    out[i] += kernel.delta_coefficient
    return out * r ** (2 - n)


def kelvin_strain(n: int, y: np.ndarray, i: int) -> np.ndarray:
    """L G_i at y: a symmetric trace-free n x n tensor decaying like |y|^(1-n)."""
    if not 0 <= i < n:
        raise ConfigError(f"Axis {i} outside 0..{n - 1}")
    kernel = KelvinKernel(n)
    unit, r = _unit(y)
    e = np.zeros(n)
    e[i] = 1.0
    return kernel.strain_coefficient * r ** (1 - n) * _bracket(n, e, unit)


def _bracket(n: int, zeta: np.ndarray, xhat: np.ndarray) -> np.ndarray:
    s = float(np.dot(zeta, xhat))
    return s * np.eye(n) - np.outer(zeta, xhat) - np.outer(xhat, zeta) - (n - 2) * s * np.outer(xhat, xhat)


def kelvin_far_constant(n: int) -> float:
    """K(n) = n^((n+2)/2) (n-2)^(n/2) omega_n / (2^(n+1) (n-1) omega_(n-1))."""
    return n ** ((n + 2) / 2) * (n - 2) ** (n / 2) * sphere_area(n) / (2 ** (n + 1) * (n - 1) * sphere_area(n - 1))


def theta_asymptotic(
    n: int,
    f_center: float,
    x_center_norm: float,
    zeta: np.ndarray,
    xhat: np.ndarray,
    dist: float,
) -> np.ndarray:
    """Leading far field K(n) f^(-n/2) |X| [s delta - zeta x - x zeta - (n-2) s x x] dist^(1-n)."""
    zeta = np.asarray(zeta, dtype=float)
    xhat = np.asarray(xhat, dtype=float)
    return kelvin_far_constant(n) * f_center ** (-n / 2) * x_center_norm * dist ** (1 - n) * _bracket(n, zeta, xhat)


@dataclass(frozen=True, eq=False)
class TensorField:
    """L Theta for a radial source along zeta, as the three profiles a, b, c on a grid."""

    grid: RadialGrid
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    zeta: np.ndarray

    @classmethod
    def zeros(cls, grid: RadialGrid, zeta: np.ndarray) -> TensorField:
        z = np.zeros(grid.size)
        return cls(grid, z, z.copy(), z.copy(), np.asarray(zeta, dtype=float))

    def __add__(self, other: TensorField) -> TensorField:
        if not np.allclose(self.zeta, other.zeta):
            raise ConfigError("Tensor fields with different source directions cannot be added")
        return TensorField(self.grid, self.a + other.a, self.b + other.b, self.c + other.c, self.zeta)

    def __sub__(self, other: TensorField) -> TensorField:
        if not np.allclose(self.zeta, other.zeta):
            raise ConfigError("Tensor fields with different source directions cannot be subtracted")
        return TensorField(self.grid, self.a - other.a, self.b - other.b, self.c - other.c, self.zeta)

    def at(self, r_index: int, xhat: np.ndarray) -> np.ndarray:
        """The full tensor at radius nodes[r_index] in direction xhat."""
        xhat = np.asarray(xhat, dtype=float)
        n = self.grid.n
        s = float(np.dot(self.zeta, xhat))
        a, b, c = self.a[r_index], self.b[r_index], self.c[r_index]
        return a * s * np.eye(n) + b * (np.outer(self.zeta, xhat) + np.outer(xhat, self.zeta)) + c * s * np.outer(xhat, xhat)

    @cached_property
    def trace_profile(self) -> np.ndarray:
        """Trace divided by s; identically zero for a conformal Killing derivative."""
        return self.grid.n * self.a + 2.0 * self.b + self.c

    @cached_property
    def _angular_coefficient(self) -> np.ndarray:
        n = self.grid.n
        a, b, c = self.a, self.b, self.c
        return n * a**2 + 2 * b**2 + c**2 + 4 * a * b + 2 * a * c + 4 * b * c

    @cached_property
    def norm_sq_l0(self) -> np.ndarray:
        """Sphere average of |L Theta|^2 at each radius."""
        return 2.0 * self.b**2 + self._angular_coefficient / self.grid.n

    @cached_property
    def pointwise_norm(self) -> np.ndarray:
        """Maximum over directions of |L Theta| at each radius."""
        return np.sqrt(2.0 * self.b**2 + np.maximum(self._angular_coefficient, 0.0))

    def max_trace_ratio(self) -> float:
        scale = float(np.max(self.pointwise_norm))
        if scale == 0.0:
            return 0.0
        return float(np.max(np.abs(self.trace_profile))) / scale


def convolve_LgT(source: HarmonicField, coupling: np.ndarray, zeta: np.ndarray) -> TensorField:
    """
    L Theta for -div L Theta = source * coupling * zeta on the grid of the source.

    Only the l = 0 part of source * coupling drives the response; the l = 1
    part contributes at the truncated order l = 2 of |L Theta|^2.

    Args:
        source: Scalar field, typically the conformal weight u^(2*) minus its background.
        coupling: Radial l = 0 profile of |X| on the same grid.
        zeta: Unit direction of X.

    Returns:
        The response profiles a, b, c with trace n a + 2 b + c = 0.

    Raises:
        ConfigError: On mismatched shapes or a zero direction.
    """
    grid = source.grid
    coupling = np.asarray(coupling, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    if coupling.shape != (grid.size,) or zeta.shape != (grid.n,):
        raise ConfigError("Coupling profile and direction must match the grid")
    norm = float(np.linalg.norm(zeta))
    if norm == 0.0:
        raise ConfigError("Source direction zeta must be nonzero")
    rho = source.mode0 * coupling
    return radial_response(grid, rho, zeta / norm)


def radial_response(grid: RadialGrid, rho: np.ndarray, zeta: np.ndarray) -> TensorField:
    """Closed-form radial solve of -div L Theta = rho(r) zeta."""
    n = grid.n
    r = grid.nodes
    mass = grid.cumulative(rho, n - 1)
    # beta3 = r^(-1-n) int_0^r s m(s) ds avoids the cancellation of -P0/r - n Q'/r^2 near 0
    moment = grid.cumulative(mass, 1)
    p0_prime = np.zeros(grid.size)
    beta3 = np.zeros(grid.size)
    p0_prime[1:] = -mass[1:] * r[1:] ** (1 - n)
    beta3[1:] = moment[1:] * r[1:] ** (-1 - n)
    kappa = (n - 2) / (2.0 * (n - 1))
    a = 2 * kappa * beta3 - (2.0 / n) * (1 - kappa) * p0_prime
    b = p0_prime + 2 * kappa * beta3
    c = 2 * kappa * (-p0_prime - (n + 2) * beta3)
    field = TensorField(grid, a, b, c, np.asarray(zeta, dtype=float))
    ratio = field.max_trace_ratio()
    if ratio > TRACE_RTOL:
        logger.warning("L Theta trace ratio %.3e exceeds %.0e", ratio, TRACE_RTOL)
    return field


def decay_exponent(field: TensorField, r_min: float, r_max: float) -> float:
    """Log-log slope of max-direction |L Theta| on [r_min, r_max]."""
    r = field.grid.nodes
    mask = (r >= r_min) & (r <= r_max) & (field.pointwise_norm > 0)
    if np.count_nonzero(mask) < 2:
        raise ConfigError(f"Too few grid nodes in [{r_min:g}, {r_max:g}] to fit a decay rate")
    slope, _ = np.polyfit(np.log(r[mask]), np.log(field.pointwise_norm[mask]), 1)
    return float(slope)


@dataclass(frozen=True)
class LTBoundReport:
    """Measured constants of the pointwise bounds on L Theta_k - L Theta."""

    constant: float
    refined_constant: float
    far_field_ratio: float
    argmax_radius: float


def verify_LT_bounds(
    lt_k: TensorField,
    lt_base: TensorField | None,
    params: BubbleParams,
    x_center_norm: float,
    grad_x_norm: float,
    x_sup: float,
    eps_k: float,
    v_far_sup: float = 0.0,
    R: float = 4.0,
) -> LTBoundReport:
    """
    Best constants C with |L Theta_k - L Theta| <= C A theta^(1-n) and its refined majorant.

    Here A = |X(xi)| + delta |grad X|, theta = delta + |x - xi|, and the measured
    constant is sup |diff| min(1, theta^(n-1) / A). The refined majorant adds
    delta^(n/2) theta^(1-n) + |X| eps_k delta R^2 + |X| sup_far |v|.

    Returns:
        LTBoundReport with the constants and the far-field ratio
        |diff| / (|X| eps_k) beyond R sqrt(delta).
    """
    logger.info("Projection of L T onto local conformal Killing fields is omitted on flat space")
    grid = lt_k.grid
    diff = lt_k if lt_base is None else lt_k - lt_base
    size = diff.pointwise_norm
    if not np.any(size > 0):
        return LTBoundReport(0.0, 0.0, 0.0, 0.0)

    n, delta = grid.n, params.delta
    theta = delta + grid.nodes
    A = x_center_norm + delta * grad_x_norm
    with np.errstate(divide="ignore", over="ignore"):
        weight = np.minimum(1.0, theta ** (n - 1) / A) if A > 0 else np.ones_like(theta)
    weighted = size * weight
    k = int(np.argmax(weighted))

    majorant = A * theta ** (1 - n) + delta ** (n / 2) * theta ** (1 - n) + x_sup * eps_k * delta * R**2 + x_sup * v_far_sup
    refined = float(np.max(size / majorant))

    far = grid.nodes >= R * math.sqrt(delta)
    scale = x_sup * eps_k
    far_ratio = float(np.max(size[far]) / scale) if scale > 0 and np.any(far) else 0.0
    return LTBoundReport(
        constant=float(weighted[k]),
        refined_constant=refined,
        far_field_ratio=far_ratio,
        argmax_radius=float(grid.nodes[k]),
    )


def flag_constant_growth(constants: list[float], tolerance: float = 0.2) -> bool:
    """True when a measured constant grows by more than tolerance across successive mu halvings."""
    growing = any(later > (1 + tolerance) * earlier for earlier, later in zip(constants, constants[1:]))
    if growing:
        logger.warning("L Theta bound constant grows across mu halvings: %s", ", ".join(f"{c:.4g}" for c in constants))
    return growing
