"""Problem data: dimension, coefficient fields, scale sequences and the background solution."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import brentq

from elreduce.core.exceptions import ConfigError, GroundStateError

logger = logging.getLogger(__name__)

MIN_DIMENSION = 6
MAX_DIMENSION = 11
LAW_RTOL = 1e-9

# (beta_exponent, rcut_exponent, length_scale) by dimension: beta = ell mu^b and
# r_cut = ell mu^(1/(N+1)). n = 6 needs beta^2 < mu; for n >= 7 the bubble tail
# at r_cut must be small against u0 and delta / beta small at mu = 1e-2.
SCALE_DEFAULTS: dict[int, tuple[float, int, float]] = {6: (0.75, 4, 1.0)}
LCF_SCALE_DEFAULTS: tuple[float, int, float] = (0.25, 20, 3.0)


def critical_exponent(n: int) -> float:
    """The critical Sobolev exponent 2* = 2n/(n-2)."""
    return 2.0 * n / (n - 2)


def concentration_scale(n: int, tau: float, lcf: bool = True) -> float:
    """Scale law linking the bump amplitude tau to the concentration scale mu."""
    if n == 6:
        return tau
    if lcf or n <= 10:
        return tau ** (2.0 / (n - 6))
    return math.sqrt(tau)


def bump_amplitude(n: int, mu: float, lcf: bool = True) -> float:
    """Inverse of concentration_scale: the tau producing a given mu."""
    if n == 6:
        return mu
    if lcf or n <= 10:
        return mu ** ((n - 6) / 2.0)
    return mu**2


# Smooth compactly supported profiles. H is the bump, chi the cutoff plateau.


def bump(y_sq: np.ndarray) -> np.ndarray:
    """H(y) = (1 - |y|^2)^4 on the unit ball, 0 outside, as a function of |y|^2."""
    s = 1.0 - np.asarray(y_sq, dtype=float)
    return np.where(s > 0.0, s**4, 0.0)


def bump_radial_derivative(y_sq: np.ndarray) -> np.ndarray:
    """Factor g with grad H(y) = g(|y|^2) * y, i.e. -8 (1 - |y|^2)^3."""
    s = 1.0 - np.asarray(y_sq, dtype=float)
    return np.where(s > 0.0, -8.0 * s**3, 0.0)


def _smoothstep(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.clip(x, 0.0, 1.0)
    value = x**3 * (10.0 - 15.0 * x + 6.0 * x**2)
    first = 30.0 * x**2 * (1.0 - x) ** 2
    second = 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x)
    return value, first, second


def cutoff(s: np.ndarray) -> np.ndarray:
    """Plateau cutoff: 1 on [0, 1], 0 on [2, inf), C^2 in between."""
    value, _, _ = _smoothstep(np.asarray(s, dtype=float) - 1.0)
    return 1.0 - value


def cutoff_derivatives(s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (chi, chi', chi'') at s."""
    value, first, second = _smoothstep(np.asarray(s, dtype=float) - 1.0)
    return 1.0 - value, -first, -second


@dataclass(frozen=True)
class ModelConfig:
    """Validated problem data for one concentration scale."""

    n: int
    tau: float
    mu: float
    beta: float
    r_cut: float
    f0: float
    s_bump: float
    h0: float
    rho0: float
    alpha: float
    zdir: tuple[float, ...]
    lcf_flag: bool = True
    weyl_sq: float = 0.0
    beta_exponent: float = 0.25
    rcut_exponent: int = 20
    length_scale: float = 3.0

    @property
    def two_star(self) -> float:
        return critical_exponent(self.n)

    @property
    def bump_sign(self) -> float:
        """Sign of the tau-bump in h: + for n >= 7, - for n = 6."""
        return -1.0 if self.n == 6 else 1.0

    @property
    def h_max(self) -> float:
        return self.h0 + max(self.bump_sign * self.tau, 0.0)

    def snapshot(self) -> dict[str, Any]:
        """Flat mapping written back into run manifests."""
        return {
            "n": self.n,
            "tau": self.tau,
            "mu": self.mu,
            "beta": self.beta,
            "r_cut": self.r_cut,
            "f0": self.f0,
            "s_bump": self.s_bump,
            "h0": self.h0,
            "rho0": self.rho0,
            "alpha": self.alpha,
            "zdir": list(self.zdir),
            "lcf_flag": self.lcf_flag,
            "weyl_sq": self.weyl_sq,
            "beta_exponent": self.beta_exponent,
            "rcut_exponent": self.rcut_exponent,
            "length_scale": self.length_scale,
        }


@dataclass(frozen=True)
class GroundState:
    """The constant strictly stable background solution."""

    u0: float
    stability_margin: float
    eps0: float
    residual: float = 0.0
    roots: tuple[float, ...] = field(default_factory=tuple)

    @property
    def truncation_level(self) -> float:
        """The level eps of the truncation rho_eps, fixed at eps0 / 4."""
        return self.eps0 / 4.0


@dataclass(frozen=True)
class Coefficients:
    """Pointwise values of the coefficient fields."""

    h: np.ndarray
    f: np.ndarray
    grad_f: np.ndarray
    X: np.ndarray


def _number(raw: dict, key: str) -> float:
    value = raw.get(key)
    try:
        number = float(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Config key {key} must be a number, got {value!r}") from e
    if not math.isfinite(number):
        raise ConfigError(f"Config key {key} must be finite, got {value!r}")
    return number


def _direction(raw_dir: Any, n: int) -> tuple[float, ...]:
    if raw_dir is None:
        return tuple(1.0 if i == 0 else 0.0 for i in range(n))
    try:
        vec = np.asarray(raw_dir, dtype=float)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"zdir must be a list of {n} numbers") from e
    if vec.shape != (n,) or not np.all(np.isfinite(vec)):
        raise ConfigError(f"zdir must be a list of {n} finite numbers")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ConfigError("zdir must be nonzero")
    return tuple(float(v) for v in vec / norm)


def _or_default(raw: dict, key: str, default: Any) -> Any:
    value = raw.get(key)
    return default if value is None else value


def _check_law(name: str, given: Any, expected: float) -> float:
    if given is None:
        return expected
    value = float(given)
    if not math.isclose(value, expected, rel_tol=LAW_RTOL):
        raise ConfigError(f"{name} = {value:g} violates the scale law (expected {expected:g})")
    return value


def make_model(raw: dict) -> ModelConfig:
    """
    Build and validate a ModelConfig from a flat key/value mapping.

    Args:
        raw: Mapping with keys n, tau, f0, s_bump, h0, rho0, alpha, zdir,
            weyl_sq, beta_exponent, rcut_exponent, length_scale and optionally
            mu, beta, r_cut. Unset scale keys take the SCALE_DEFAULTS of the
            dimension.

    Returns:
        The validated configuration with derived scales.

    Raises:
        ConfigError: On unparsable values, dimension out of range, scale law or
            ordering violations, or a non-positive rho0.
    """
    n_value = raw.get("n")
    if isinstance(n_value, bool) or not isinstance(n_value, (int, float)) or int(n_value) != n_value:
        raise ConfigError(f"Dimension n must be an integer, got {n_value!r}")
    n = int(n_value)
    if not MIN_DIMENSION <= n <= MAX_DIMENSION:
        raise ConfigError(f"Dimension n = {n} outside [{MIN_DIMENSION}, {MAX_DIMENSION}]")

    tau = _number(raw, "tau")
    f0 = _number(raw, "f0")
    h0 = _number(raw, "h0")
    rho0 = _number(raw, "rho0")
    alpha = _number(raw, "alpha")
    s_bump = _number({"s_bump": raw.get("s_bump", 0.0)}, "s_bump")
    weyl_sq = _number({"weyl_sq": raw.get("weyl_sq", 0.0)}, "weyl_sq")
    beta_default, rcut_default, length_default = SCALE_DEFAULTS.get(n, LCF_SCALE_DEFAULTS)
    beta_exponent = _number({"beta_exponent": _or_default(raw, "beta_exponent", beta_default)}, "beta_exponent")
    rcut_exponent = _or_default(raw, "rcut_exponent", rcut_default)
    length_scale = _number({"length_scale": _or_default(raw, "length_scale", length_default)}, "length_scale")
    lcf_flag = bool(raw.get("lcf_flag", True))

    if tau <= 0:
        raise ConfigError("tau must be positive")
    if f0 <= 0:
        raise ConfigError("f0 must be positive (focusing case)")
    if rho0 <= 0:
        raise ConfigError("rho0 must be positive for a stable constant background")
    if alpha < 0 or weyl_sq < 0:
        raise ConfigError("alpha and weyl_sq must be non-negative")
    if not isinstance(rcut_exponent, int) or isinstance(rcut_exponent, bool) or rcut_exponent < 1:
        raise ConfigError(f"rcut_exponent must be a positive integer, got {rcut_exponent!r}")
    if beta_exponent <= 0 or length_scale <= 0:
        raise ConfigError("beta_exponent and length_scale must be positive")

    mu = _check_law("mu", raw.get("mu"), concentration_scale(n, tau, lcf_flag))
    beta = float(raw["beta"]) if raw.get("beta") is not None else length_scale * mu**beta_exponent
    r_cut = (
        float(raw["r_cut"]) if raw.get("r_cut") is not None else length_scale * mu ** (1.0 / (rcut_exponent + 1))
    )

    if not mu < beta < r_cut:
        raise ConfigError(
            f"Scale ordering mu < beta < r_cut violated: mu={mu:g}, beta={beta:g}, r_cut={r_cut:g}"
        )
    if n == 6 and beta**2 >= mu:
        raise ConfigError(f"n = 6 needs beta^2 < mu, got beta^2 = {beta**2:g} >= mu = {mu:g}")

    model = ModelConfig(
        n=n,
        tau=tau,
        mu=mu,
        beta=beta,
        r_cut=r_cut,
        f0=f0,
        s_bump=s_bump,
        h0=h0,
        rho0=rho0,
        alpha=alpha,
        zdir=_direction(raw.get("zdir"), n),
        lcf_flag=lcf_flag,
        weyl_sq=weyl_sq,
        beta_exponent=beta_exponent,
        rcut_exponent=rcut_exponent,
        length_scale=length_scale,
    )
    logger.info(
        "Model n=%d: mu=%.6g beta=%.6g r_cut=%.6g (rcut_exponent N=%d, length_scale %.4g)",
        n, mu, beta, r_cut, rcut_exponent, length_scale,
    )
    return model


def background_residual(model: ModelConfig, u: np.ndarray | float) -> np.ndarray | float:
    """g(u) = f0 u^(2*-1) + rho0 u^(-2*-1) - h0 u."""
    p = model.two_star
    return model.f0 * u ** (p - 1) + model.rho0 * u ** (-p - 1) - model.h0 * u


def stability_margin(model: ModelConfig, u: float) -> float:
    """q(u) = h0 - (2*-1) f0 u^(2*-2) + (2*+1) rho0 u^(-2*-2)."""
    p = model.two_star
    return model.h0 - (p - 1) * model.f0 * u ** (p - 2) + (p + 1) * model.rho0 * u ** (-p - 2)


def solve_ground_state(model: ModelConfig, scan_points: int = 4001) -> GroundState:
    """
    Find the smallest positive root of g, the strictly stable background.

    Args:
        model: Validated configuration.
        scan_points: Points of the logarithmic sign-change scan.

    Returns:
        GroundState with the root, its stability margin and the lower bound eps0.

    Raises:
        GroundStateError: If g has no positive root or the minimal root is not
            strictly stable.
    """
    grid = np.logspace(-6.0, 6.0, scan_points)
    with np.errstate(over="ignore"):
        values = background_residual(model, grid)
    sign_changes = np.nonzero(np.diff(np.sign(values)) != 0)[0]
    if sign_changes.size == 0:
        raise GroundStateError(
            "Existence of the ground state fails: g(u) > 0 for all u > 0 "
            f"(h0={model.h0:g}, f0={model.f0:g}, rho0={model.rho0:g})"
        )

    tol = 4 * np.finfo(float).eps
    roots = tuple(
        float(brentq(lambda u: background_residual(model, u), grid[i], grid[i + 1], xtol=1e-15, rtol=tol))
        for i in sign_changes
    )
    u0 = roots[0]
    margin = stability_margin(model, u0)
    if margin <= 0:
        raise GroundStateError(
            f"Strict stability fails: minimal root u0={u0:g} has margin {margin:g} <= 0"
        )

    p = model.two_star
    eps0 = (model.rho0 / (2.0 * model.h_max)) ** (1.0 / (p + 2))
    residual = abs(float(background_residual(model, u0)))
    logger.info("Ground state u0=%.12g, stability margin %.6g, eps0=%.6g", u0, margin, eps0)
    return GroundState(u0=u0, stability_margin=margin, eps0=eps0, residual=residual, roots=roots)


def conformal_offset(model: ModelConfig, ground: GroundState) -> float:
    """The part of h0 the bubble does not see in a flat conformal chart."""
    if model.n == 6:
        return model.h0 - 2.0 * model.f0 * ground.u0
    return model.h0


def eval_coefficients(model: ModelConfig, x: np.ndarray) -> Coefficients:
    """
    Evaluate h, f, grad f and X at points x of shape (..., n).

    h = h0 + sign * tau * H(x / beta), f = f0 + s_bump * chi(|x| / r_cut),
    X = alpha * mu^((n-1)/2) * zdir * H(x / r_cut).
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.n:
        raise ConfigError(f"Points must have {model.n} components, got {x.shape[-1]}")
    r_sq = np.sum(x**2, axis=-1)
    r = np.sqrt(r_sq)

    h = model.h0 + model.bump_sign * model.tau * bump(r_sq / model.beta**2)

    chi, dchi, _ = cutoff_derivatives(r / model.r_cut)
    f = model.f0 + model.s_bump * chi
    with np.errstate(invalid="ignore", divide="ignore"):
        radial = np.where(r > 0, model.s_bump * dchi / (model.r_cut * r), 0.0)
    grad_f = radial[..., None] * x

    amplitude = model.alpha * model.mu ** ((model.n - 1) / 2.0)
    X = (amplitude * bump(r_sq / model.r_cut**2))[..., None] * np.asarray(model.zdir)
    return Coefficients(h=h, f=f, grad_f=grad_f, X=X)


def truncate_rho(eps: float, r: np.ndarray | float) -> np.ndarray | float:
    """rho_eps(r) = eps for r < eps, r otherwise."""
    return np.maximum(r, eps)
