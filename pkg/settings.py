"""
Run configuration for the WEC farm toolkit.

Defaults live in DEFAULT_SETTINGS and can be changed at runtime with
update_settings(), or loaded from a JSON file with load_settings(). Unknown
keys are rejected so a typo in a config file fails fast instead of being
silently ignored.
"""

import copy
import hashlib
import json
import logging
import os
from typing import Any, Dict, Optional

__version__ = "1.0.0"

THREADS_ENV_VAR = "WECFARM_THREADS"

# Desk-scale sizes where the full study is too large for a workstation;
# full-study values noted alongside.
DEFAULT_SETTINGS: Dict[str, Any] = {
    "problem": {
        "n_wec": 5,
        "control_mode": "farm",          # frozen | farm | device
        "free_plant": True,
        "free_layout": True,
        "p_lim_w": None,
        "safety_distance_m": 10.0,
        "evaluator": "surrogate",        # surrogate | oracle
        "radius_m": 2.0,                 # frozen values when a group is not optimized
        "slenderness": 1.0,
        "k_pto": -5.0e3,
        "b_pto": 5.0e5,
        "layout": None,                  # [[x, y], ...] or None for a default grid
    },
    "hydro": {
        "backend": "reference",          # reference | toy
        "modes": 40,                     # interior (fluid below body) series
        "exterior_modes": 40,
        "n_omega": 100,
        "omega_min": 0.3,
        "omega_max": 2.0,
        "depth_m": 50.0,
        "rho": 1025.0,
        "g": 9.81,
    },
    "climate": {
        "path": None,                    # CSV with year,hs_m,tp_s
        "site": "west_coast",            # synthetic site used when path is None
        "years": 2,                      # full study: 30
        "samples_per_year": 500,
        "n_gq": 40,                      # full study: 500
        "hs_box": [0.25, 10.0],
        "tp_box": [3.0, 17.0],
    },
    "surrogate": {
        "bundle_path": None,
        "hidden": [32, 32],
        "activation": "tanh",
        "committee_one_body": 10,
        "committee_two_body": 5,
        "pool_one_body": 10000,          # full study: 50000
        "pool_two_body": 100000,         # full study: 500000
        "batch_one_body": 50,
        "batch_two_body": 200,
        "interior_one_body": 50,
        "interior_two_body": 200,
        "top_fraction": 0.2,
        "k_max": 20,
        "var_tol": 1e-3,
        "mse_tol": 1e-3,
        "distance_range_m": [11.0, 1001.0],  # spans the 25-WEC farm box diagonal
        "epochs": 500,
        "learning_rate": 1e-2,
        "batch_size": 64,
        "patience": 25,
        "subsample_fraction": 0.8,
    },
    "ga": {
        "pop_size": None,                # None: 60 for N=5, else 20*n_vars capped at 400
        "n_gen": None,                   # None: 40 for N=5, else 100
        "crossover_alpha": 0.5,
        "mutation_sigma": 0.1,
    },
    "refine": {
        "max_iter": 100,
        "max_evals": 5000,
        "ftol": 1e-10,
        "xtol": 1e-8,
        "fd_step": 1e-6,
    },
    "power": {
        "eta_pcc": 0.8,
        "eta_oa": 0.95,
        "eta_t": 0.98,
    },
    "seeds": {
        "climate": 1,
        "surrogate": 2,
        "optimizer": 3,
    },
    "validation": {
        "n_grid": 500,
        "mean_mse_max": 1e-2,
        "worst_mse_max": 1e-1,
        "n_objective": 500,
        "n_random_layouts": 500,
        "perturb_radius_m": 15.0,
        "perturb_samples": 200,
    },
}

_settings: Dict[str, Any] = copy.deepcopy(DEFAULT_SETTINGS)


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration."""


def _merge(base: Dict[str, Any], override: Dict[str, Any], path: str = "") -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"Unknown config key: {where}")
        default = base[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"Config key {where} must be a section, got {value!r}")
            merged[key] = _merge(default, value, where)
            continue
        if default is not None and value is not None:
            if isinstance(default, bool) != isinstance(value, bool):
                raise ConfigError(f"Config key {where} has wrong type: {value!r}")
            if isinstance(default, (int, float)) and not isinstance(value, (int, float)):
                raise ConfigError(f"Config key {where} must be numeric, got {value!r}")
            if isinstance(default, str) and not isinstance(value, str):
                raise ConfigError(f"Config key {where} must be a string, got {value!r}")
            if isinstance(default, list) and not isinstance(value, list):
                raise ConfigError(f"Config key {where} must be a list, got {value!r}")
        merged[key] = value
    return merged


def merge_settings(override: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Return the current settings with `override` merged on top."""
    return _merge(_settings, override or {})


def load_settings(path: Optional[str]) -> Dict[str, Any]:
    """Load a JSON config file and merge it over the defaults."""
    if path is None:
        return merge_settings()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"Config {path} must hold a JSON object")
    return merge_settings(raw)


def update_settings(new_settings: Dict[str, Any]):
    """Update the global settings (validated like a config file)."""
    global _settings
    _settings = _merge(_settings, new_settings)


def reset_settings():
    global _settings
    _settings = copy.deepcopy(DEFAULT_SETTINGS)


def get_settings() -> Dict[str, Any]:
    """Get a copy of the current settings"""
    return copy.deepcopy(_settings)


def config_hash(settings: Dict[str, Any]) -> str:
    canonical = json.dumps(settings, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def worker_count() -> int:
    """Number of parallel workers, capped by WECFARM_THREADS when set."""
    available = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None or raw == "":
        return available
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV_VAR} must be a positive integer, got {raw!r}")
    if cap < 1:
        raise ConfigError(f"{THREADS_ENV_VAR} must be a positive integer, got {raw!r}")
    return min(available, cap)


def setup_logging(verbosity: int = 0):
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
