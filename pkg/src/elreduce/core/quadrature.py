"""Adaptive radial quadrature for improper integrals over R^n and the constants built on it."""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import gamma, roots_legendre

from elreduce.core.exceptions import ConfigError, KappaSignError, QuadratureError
from elreduce.core.model import critical_exponent

logger = logging.getLogger(__name__)

RadialFunction = Callable[[np.ndarray], np.ndarray]

GAUSS_ORDER = 20
MAX_PANELS = 20000
MIN_WIDTH = 1e-15
# Summed panel errors below this multiple of the |f| mass are roundoff.
ROUNDOFF_FLOOR = 64 * np.finfo(float).eps
REFRESH_EVERY = 256
# C(6) of the six-dimensional coupling term.
C6 = 2.0**32 * 3.0**9 * 5.0**-4


def _default_splits() -> tuple[float, ...]:
    return tuple(2.0**k for k in range(-24, 25))


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerance and panel layout of a radial integral."""

    rel_tol: float = 1e-9
    r_split: tuple[float, ...] = field(default_factory=_default_splits)
    angular_moment: int = 0

    def __post_init__(self) -> None:
        if self.rel_tol <= 0:
            raise ConfigError("rel_tol must be positive")
        if self.angular_moment not in (0, 2):
            raise ConfigError("angular_moment must be 0 or 2")


def sphere_area(m: int) -> float:
    """Area omega_m of the unit m-sphere in R^(m+1)."""
    return 2.0 * math.pi ** ((m + 1) / 2.0) / gamma((m + 1) / 2.0)


def sobolev_constant(n: int) -> float:
    """K_n = sqrt(4 / (n (n-2) omega_n^(2/n)))."""
    return math.sqrt(4.0 / (n * (n - 2) * sphere_area(n) ** (2.0 / n)))


@lru_cache(maxsize=None)
def _gauss(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = roots_legendre(order)
    return nodes, weights


def _panel(g: Callable[[np.ndarray], np.ndarray], a: float, b: float) -> tuple[float, float]:
    """Gauss-Legendre value of one panel and the matching value of |g|."""
    nodes, weights = _gauss(GAUSS_ORDER)
    half = 0.5 * (b - a)
    values = g(a + half * (nodes + 1.0))
    return float(half * np.dot(weights, values)), float(half * np.dot(weights, np.abs(values)))


def _split(g: Callable[[np.ndarray], np.ndarray], a: float, b: float) -> tuple[float, float, float, float, float]:
    """Panel [a, b] as (-error, a, b, value, |g| mass), the error taken against its two halves."""
    whole, _ = _panel(g, a, b)
    mid = 0.5 * (a + b)
    left, left_abs = _panel(g, a, mid)
    right, right_abs = _panel(g, mid, b)
    value = left + right
    error = 0.0 if b - a < MIN_WIDTH else abs(value - whole)
    return -error, a, b, value, left_abs + right_abs


def radial_integral(fn: RadialFunction, n: int, spec: QuadratureSpec | None = None) -> float:
    """
    Integrate a radial integrand over R^n.

    Computes omega_(n-1) * <angular> * int_0^inf fn(r) r^(n-1) dr, where the
    angular factor is 1 or the sphere average 1/n of |<zeta, y/|y|>|^2. The half
    line is mapped to (0, 1) by r = s / (1 - s) and integrated with globally
    adaptive Gauss-Legendre panels: the panel with the largest error estimate
    is bisected until the summed estimate drops below rel_tol times the
    integral of |fn|. An integrand that cancels to zero is resolved to that
    absolute accuracy.

    Args:
        fn: Vectorized radial integrand.
        n: Dimension.
        spec: Tolerance and panel layout.

    Returns:
        The integral over R^n.

    Raises:
        QuadratureError: If the panel budget is exhausted or the integrand is
            not finite.
    """
    spec = spec or QuadratureSpec()

    def integrand(s: np.ndarray) -> np.ndarray:
        one_minus = 1.0 - s
        r = s / one_minus
        with np.errstate(over="ignore", under="ignore"):
            return fn(r) * r ** (n - 1) / one_minus**2

    splits = sorted(r / (1.0 + r) for r in spec.r_split if r > 0)
    edges = [0.0, *splits, 1.0]
    heap = [_split(integrand, a, b) for a, b in zip(edges[:-1], edges[1:])]
    heapq.heapify(heap)
    rel_tol = max(spec.rel_tol, ROUNDOFF_FLOOR)

    def totals() -> tuple[float, float, float]:
        total = math.fsum(item[3] for item in heap)
        error = math.fsum(-item[0] for item in heap)
        mass = math.fsum(item[4] for item in heap)
        if not (math.isfinite(total) and math.isfinite(error) and math.isfinite(mass)):
            raise QuadratureError("Radial integrand is not finite on the quadrature nodes")
        return total, error, mass

    total, error, mass = totals()
    panels = len(heap)
    while error > rel_tol * mass:
        if panels > MAX_PANELS:
            raise QuadratureError(
                f"Radial quadrature did not converge within {MAX_PANELS} panels "
                f"(error {error:.3g} against |f| mass {mass:.3g}; integrand decay precondition violated?)"
            )
        neg_error, a, b, value, panel_mass = heapq.heappop(heap)
        mid = 0.5 * (a + b)
        children = (_split(integrand, a, mid), _split(integrand, mid, b))
        for child in children:
            heapq.heappush(heap, child)
        panels += 1
        if panels % REFRESH_EVERY == 0:
            total, error, mass = totals()
        else:
            total += sum(c[3] for c in children) - value
            error += -sum(c[0] for c in children) + neg_error
            mass += sum(c[4] for c in children) - panel_mass
            if not math.isfinite(total):
                raise QuadratureError("Radial integrand is not finite on the quadrature nodes")
    total, _, _ = totals()

    angular = 1.0 if spec.angular_moment == 0 else 1.0 / n
    return sphere_area(n - 1) * angular * total


def bubble_energy(n: int, f_val: float, spec: QuadratureSpec | None = None) -> tuple[float, float]:
    """
    Dirichlet energy and weighted critical mass of the standard bubble U_f.

    Returns:
        (int |grad U_f|^2, int f U_f^(2*)), both equal to f^(1-n/2) K_n^(-n).
    """
    if f_val <= 0:
        raise ConfigError("f_val must be positive")
    a = f_val / (n * (n - 2))

    def grad_sq(r: np.ndarray) -> np.ndarray:
        return ((n - 2) * a * r * (1.0 + a * r**2) ** (-n / 2.0)) ** 2

    def mass(r: np.ndarray) -> np.ndarray:
        return f_val * (1.0 + a * r**2) ** (-float(n))

    return radial_integral(grad_sq, n, spec), radial_integral(mass, n, spec)


def dirichlet_closed_form(n: int, f_val: float) -> float:
    """f^(1-n/2) K_n^(-n)."""
    return f_val ** (1.0 - n / 2.0) * sobolev_constant(n) ** (-n)


def gram_V(n: int, f_val: float, spec: QuadratureSpec | None = None) -> np.ndarray:
    """
    Gram matrix of the kernel elements V_0..V_n in the Dirichlet product.

    Off-diagonal entries are products of distinct harmonic modes, whose angular
    moments vanish, so only the diagonal needs radial quadrature.
    """
    if f_val <= 0:
        raise ConfigError("f_val must be positive")
    a = f_val / (n * (n - 2))

    def dv0_sq(r: np.ndarray) -> np.ndarray:
        s = a * r**2
        return (2.0 * a * r * (1.0 + s) ** (-n / 2.0 - 1.0) * ((1.0 + s) - 0.5 * n * (s - 1.0))) ** 2

    def dvi_sq(r: np.ndarray) -> np.ndarray:
        g = (1.0 + a * r**2) ** (-n / 2.0)
        dg = -n * a * r * (1.0 + a * r**2) ** (-n / 2.0 - 1.0)
        return f_val**2 * (g**2 + (2.0 * r * g * dg + r**2 * dg**2) / n)

    gram = np.zeros((n + 1, n + 1))
    gram[0, 0] = radial_integral(dv0_sq, n, spec)
    gii = radial_integral(dvi_sq, n, spec)
    for i in range(1, n + 1):
        gram[i, i] = gii
    return gram


def i3_constant(n: int, spec: QuadratureSpec | None = None) -> float:
    """C(n) = (2* - 1) int (1 + |z|^2/(n(n-2)))^(-2-n/2) z_1^2 dz."""
    return _i3_constant_cached(n, (spec or QuadratureSpec()).rel_tol)


@lru_cache(maxsize=None)
def _i3_constant_cached(n: int, rel_tol: float) -> float:
    p = critical_exponent(n)
    c = 1.0 / (n * (n - 2))

    def integrand(r: np.ndarray) -> np.ndarray:
        return (1.0 + c * r**2) ** (-2.0 - n / 2.0) * r**2

    value = (p - 1) * radial_integral(integrand, n, QuadratureSpec(rel_tol=rel_tol, angular_moment=2))
    logger.debug("C(%d) = %.12g (engine-derived)", n, value)
    return value


# Six-dimensional balance constant.


@dataclass(frozen=True)
class KappaParams:
    """Inputs of kappa in dimension six."""

    f0: float
    u0: float
    rho_at_center: float
    alpha: float
    k6_inv6: float = field(default_factory=lambda: sobolev_constant(6) ** -6)

    def __post_init__(self) -> None:
        if self.u0 <= 0:
            raise ConfigError("kappa needs u0 > 0")
        if self.f0 <= 0:
            raise ConfigError("kappa needs f0 > 0")

    def with_alpha(self, alpha: float) -> KappaParams:
        return KappaParams(self.f0, self.u0, self.rho_at_center, alpha, self.k6_inv6)


def kappa_integrals(params: KappaParams, spec: QuadratureSpec | None = None) -> tuple[float, float]:
    """
    The two radial integrals of kappa.

    Returns:
        (I_A, I_B) with I_A = int [u^-4 - (u + A|y|^-4)^-4] |y|^-4 dy and
        I_B = int (u + A|y|^-4)^-4 (2 + 28 cos^2) |y|^-14 dy, A = (24/f)^2.
    """
    spec = spec or QuadratureSpec()
    u = params.u0
    A = (24.0 / params.f0) ** 2

    def first(r: np.ndarray) -> np.ndarray:
        # u^-4 - (u + e)^-4 = e (4u^3 + 6u^2 e + 4u e^2 + e^3) / (u^4 (u + e)^4), e = A r^-4
        e = A / r**4
        return e * (4 * u**3 + 6 * u**2 * e + 4 * u * e**2 + e**3) / (u**4 * (u + e) ** 4) / r**4

    def second(r: np.ndarray) -> np.ndarray:
        return r**2 * (u * r**4 + A) ** -4.0

    i_a = radial_integral(first, 6, spec)
    isotropic = radial_integral(second, 6, QuadratureSpec(spec.rel_tol, spec.r_split, 0))
    directional = radial_integral(second, 6, QuadratureSpec(spec.rel_tol, spec.r_split, 2))
    return i_a, 2.0 * isotropic + 28.0 * directional


def kappa(params: KappaParams, spec: QuadratureSpec | None = None) -> float:
    """
    kappa = (24^2 / f) rho I_A - C(6) f^-8 alpha^2 I_B.

    Raises:
        QuadratureError: Propagated from the radial integrals.
    """
    i_a, i_b = kappa_integrals(params, spec)
    return (576.0 / params.f0) * params.rho_at_center * i_a - C6 * params.f0**-8 * params.alpha**2 * i_b


def critical_alpha(params: KappaParams, spec: QuadratureSpec | None = None) -> float:
    """
    The unique alpha* > 0 with kappa(alpha*) = 0.

    Raises:
        KappaSignError: If kappa(0) is not positive.
    """
    i_a, i_b = kappa_integrals(params, spec)
    positive = (576.0 / params.f0) * params.rho_at_center * i_a
    if positive <= 0:
        raise KappaSignError(f"kappa sign: first integral {positive:g} is not positive (invalid background)")
    negative = C6 * params.f0**-8 * i_b

    def k(alpha: float) -> float:
        return positive - negative * alpha**2

    hi = 1.0
    while k(hi) > 0:
        hi *= 2.0
    return float(brentq(k, 0.0, hi, xtol=1e-300, rtol=1e-15))

