"""Configuration and path management."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

from elreduce.core.exceptions import ConfigError

CONFIG_DIR = Path.home() / ".elreduce"
CONFIG_FILE = CONFIG_DIR / "config.json"
DEFAULT_OUT_DIR = Path("runs")

# Model keys. mu, beta and r_cut are derived from tau unless given explicitly;
# beta_exponent, rcut_exponent and length_scale left at None take the
# per-dimension defaults of core.model.SCALE_DEFAULTS.
MODEL_DEFAULTS: dict[str, Any] = {
    "n": 7,
    "tau": 0.1,
    "f0": 1.0,
    "s_bump": 0.0,
    "h0": 1.0,
    "rho0": 2e-4,
    "alpha": 0.05,
    "zdir": None,
    "lcf_flag": True,
    "weyl_sq": 0.0,
    "beta_exponent": None,
    "rcut_exponent": None,
    "length_scale": None,
    "mu": None,
    "beta": None,
    "r_cut": None,
}

NUMERICS_DEFAULTS: dict[str, Any] = {
    "t_bound": 10.0,
    "grid_ratio": 1.04,
    "rmax_factor": 64.0,
    "inner_tol": 1e-10,
    "outer_tol": 1e-8,
    "max_inner": 60,
    "max_outer": 40,
    "inversion_cmax": 1e6,
    "admissibility_constant": 8.0,
    "quad_rel_tol": 1e-9,
}

DEFAULT_CONFIG: dict[str, Any] = {**MODEL_DEFAULTS, **NUMERICS_DEFAULTS}


def read_json(path: Path) -> dict:
    """Read a JSON object from disk.

    Raises:
        ConfigError: If the file is missing, unreadable or not a JSON object.
    """
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except (json.JSONDecodeError, OSError) as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    return data


def merge_config(raw: dict) -> dict:
    """Merge a raw mapping over the defaults, rejecting unknown keys."""
    unknown = sorted(set(raw) - set(DEFAULT_CONFIG))
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
    return {**DEFAULT_CONFIG, **raw}


def load_config(path: Path | None = None) -> dict:
    """
    Load the run configuration.

    Args:
        path: Explicit config file. When omitted the user default file is used
            if present, else the built-in defaults.

    Returns:
        Flat configuration mapping with every known key populated.

    Raises:
        ConfigError: On unreadable files or unknown keys.
    """
    if path is not None:
        return merge_config(read_json(path))
    if CONFIG_FILE.exists():
        return merge_config(read_json(CONFIG_FILE))
    return dict(DEFAULT_CONFIG)


def numerics(config: dict) -> dict:
    """Extract and validate the numerical knobs of a merged config."""
    knobs = {key: config.get(key, default) for key, default in NUMERICS_DEFAULTS.items()}
    for key, value in knobs.items():
        try:
            number = float(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Numerical setting {key} must be a number, got {value!r}") from e
        if not math.isfinite(number) or number <= 0:
            raise ConfigError(f"Numerical setting {key} must be positive and finite")
    if float(knobs["grid_ratio"]) <= 1.0:
        raise ConfigError("grid_ratio must exceed 1")
    knobs["max_inner"] = int(knobs["max_inner"])
    knobs["max_outer"] = int(knobs["max_outer"])
    return knobs


def _jsonable(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def save_json(path: Path, data: dict) -> Path:
    """Write a mapping as indented JSON, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True))
    return path
