"""Closed-form bubbles, kernel functions and their residual identities.

Sign convention: Delta is the nonnegative Laplacian -sum d^2/dx_i^2, so the
standard bubble solves Delta U = f U^(2*-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from elreduce.core.exceptions import ConfigError
from elreduce.core.model import ModelConfig, critical_exponent, cutoff, cutoff_derivatives


@dataclass(frozen=True)
class BubbleParams:
    """Shape and location of one bubble."""

    t: float
    mu: float
    center: np.ndarray
    f_center: float
    r_cut: float
    n: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.delta <= 0:
            raise ConfigError(f"Bubble scale delta = mu * t must be positive, got {self.delta:g}")
        if self.r_cut <= np.sqrt(self.delta):
            raise ConfigError(f"r_cut = {self.r_cut:g} must exceed sqrt(delta) = {np.sqrt(self.delta):g}")
        if self.f_center <= 0:
            raise ConfigError("f at the bubble center must be positive")
        if self.center.shape != (self.n,):
            raise ConfigError(f"Bubble center must have {self.n} components")

    @classmethod
    def from_model(cls, model: ModelConfig, t: float, p: np.ndarray | None = None) -> BubbleParams:
        """Bubble at xi = beta * p with f frozen at its center value."""
        p = np.zeros(model.n) if p is None else np.asarray(p, dtype=float)
        center = model.beta * p
        r = float(np.linalg.norm(center))
        f_center = model.f0 + model.s_bump * float(cutoff(r / model.r_cut))
        return cls(t=t, mu=model.mu, center=center, f_center=f_center, r_cut=model.r_cut, n=model.n)

    @property
    def delta(self) -> float:
        return self.mu * self.t

    @property
    def a(self) -> float:
        """Width coefficient f(xi) / (n (n - 2))."""
        return self.f_center / (self.n * (self.n - 2))


def _distance(params: BubbleParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diff = np.asarray(x, dtype=float) - params.center
    return diff, np.sqrt(np.sum(diff**2, axis=-1))


# Radial profiles, functions of d = |x - xi|.


def bubble_core(params: BubbleParams, d: np.ndarray) -> np.ndarray:
    """Uncut profile B(d) = delta^((n-2)/2) (delta^2 + a d^2)^(1 - n/2)."""
    n, delta = params.n, params.delta
    return delta ** ((n - 2) / 2.0) * (delta**2 + params.a * d**2) ** (1.0 - n / 2.0)


def bubble_core_derivative(params: BubbleParams, d: np.ndarray) -> np.ndarray:
    n, delta = params.n, params.delta
    return -(n - 2) * params.a * d * delta ** ((n - 2) / 2.0) * (delta**2 + params.a * d**2) ** (-n / 2.0)


def bubble_radial(params: BubbleParams, d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    return cutoff(d / params.r_cut) * bubble_core(params, d)


def bubble_laplacian_radial(params: BubbleParams, d: np.ndarray) -> np.ndarray:
    """Analytic Delta W including the cutoff annulus."""
    d = np.asarray(d, dtype=float)
    n, R = params.n, params.r_cut
    chi, dchi, d2chi = cutoff_derivatives(d / R)
    core = bubble_core(params, d)
    dcore = bubble_core_derivative(params, d)
    p = critical_exponent(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        angular = np.where(d > 0, (n - 1) * dchi * core / (np.where(d > 0, d, 1.0) * R), 0.0)
    return chi * params.f_center * core ** (p - 1) - core * d2chi / R**2 - angular - 2.0 * dchi * dcore / R


def kernel_radial(i: int, params: BubbleParams, d: np.ndarray) -> np.ndarray:
    """Radial profile of Z_0, or the factor z(d) with Z_i = z(d) * (x - xi)_i / d."""
    d = np.asarray(d, dtype=float)
    n, delta, a = params.n, params.delta, params.a
    chi = cutoff(d / params.r_cut)
    denom = (delta**2 + a * d**2) ** (-n / 2.0)
    if i == 0:
        return chi * delta ** ((n - 2) / 2.0) * (a * d**2 - delta**2) * denom
    return chi * params.f_center * delta ** (n / 2.0) * d * denom


# Pointwise evaluators at x of shape (..., n).


def bubble(params: BubbleParams, x: np.ndarray) -> np.ndarray:
    """W(x) = chi(d / r_cut) delta^((n-2)/2) (delta^2 + f(xi) d^2 / (n(n-2)))^(1 - n/2)."""
    _, d = _distance(params, x)
    return bubble_radial(params, d)


def standard_bubble_U(f_val: float, n: int, y: np.ndarray) -> np.ndarray:
    """U(y) = (1 + f |y|^2 / (n(n-2)))^(1 - n/2)."""
    r_sq = np.sum(np.asarray(y, dtype=float) ** 2, axis=-1)
    return (1.0 + f_val * r_sq / (n * (n - 2))) ** (1.0 - n / 2.0)


def kernel_V(i: int, f_val: float, n: int, y: np.ndarray) -> np.ndarray:
    """Kernel elements of the linearized critical equation at U."""
    y = np.asarray(y, dtype=float)
    s = f_val * np.sum(y**2, axis=-1) / (n * (n - 2))
    if i == 0:
        return (s - 1.0) * (1.0 + s) ** (-n / 2.0)
    if not 1 <= i <= n:
        raise ConfigError(f"Kernel index {i} outside 0..{n}")
    return f_val * y[..., i - 1] * (1.0 + s) ** (-n / 2.0)


def kernel_Z(i: int, params: BubbleParams, x: np.ndarray) -> np.ndarray:
    """Cutoff-localized rescalings Z_i(x) = chi * delta^(1 - n/2) V_i((x - xi) / delta)."""
    diff, d = _distance(params, x)
    if i == 0:
        return kernel_radial(0, params, d)
    if not 1 <= i <= params.n:
        raise ConfigError(f"Kernel index {i} outside 0..{params.n}")
    chi = cutoff(d / params.r_cut)
    return chi * params.f_center * params.delta ** (params.n / 2.0) * diff[..., i - 1] * (
        params.delta**2 + params.a * d**2
    ) ** (-params.n / 2.0)


def kernel_domination_constant(params: BubbleParams) -> float:
    """Smallest C with |Z_i| <= C W for all i.

    |Z_0| / W <= 1 and |Z_i| / W <= f delta d / (delta^2 + a d^2) <= f / (2 sqrt(a)).
    """
    return max(1.0, params.f_center / (2.0 * np.sqrt(params.a)))


def theta(params: BubbleParams, x: np.ndarray) -> np.ndarray:
    """theta(x) = delta + |x - xi|."""
    _, d = _distance(params, x)
    return params.delta + d


def bubble_residual(params: BubbleParams, model: ModelConfig, x: np.ndarray) -> np.ndarray:
    """
    Residual (Delta + h) W - f(xi) W^(2*-1) - (h - c_n S_g) W of the bubble.

    In the flat chart c_n S_g = 0 and the h terms cancel, leaving
    Delta W - f(xi) W^(2*-1): zero on the plateau, O(delta^((n-2)/2) r_cut^-n)
    on the cutoff annulus.
    """
    if model.n != params.n:
        raise ConfigError(f"Bubble dimension {params.n} does not match model dimension {model.n}")
    _, d = _distance(params, x)
    w = bubble_radial(params, d)
    return bubble_laplacian_radial(params, d) - params.f_center * w ** (critical_exponent(params.n) - 1)
