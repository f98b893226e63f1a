"""
Accuracy checks: surrogate output MSE on a held-out grid, and the error the
surrogate introduces in the optimization objective.
"""

import logging
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from case_studies import random_feasible_layout
from farm_model import B_PTO_BOUNDS, K_PTO_BOUNDS
from optimizer import ProblemSpec, evaluate_batch
from surrogate import (ONE_BODY_QOIS, TWO_BODY_QOIS, QbcConfig, QueryOracle, SurrogateBundle,
                       predict, qoi_kind, rejection_sample)
from wec_types import DRAFT_BOUNDS, RADIUS_BOUNDS, SLENDERNESS_BOUNDS

logger = logging.getLogger(__name__)

INPUT_COLUMNS = {"one_body": ["radius", "slenderness"],
                 "two_body": ["radius", "slenderness", "distance", "theta"]}
OBJECTIVE_BINS = 30


def held_out_grid(config: QbcConfig, n: int, seed: int) -> np.ndarray:
    """n admissible inputs drawn uniformly from the training box."""
    low, high = config.box()
    rng = np.random.default_rng(seed)
    return rejection_sample(lambda m: rng.uniform(low, high, (m, len(low))), n, config)


def validate_surrogate(bundle: SurrogateBundle, oracle_source, configs: Dict[str, QbcConfig],
                       n_grid: int, seed: int, mean_mse_max: float = 1e-2,
                       worst_mse_max: float = 1e-1) -> Tuple[Dict, Dict[str, pd.DataFrame]]:
    """
    Per-QoI mean and worst-point MSE against the oracle.

    Returns:
        (report with a top-level 'passed' flag, per-QoI MSE map frames)
    """
    oracles = {kind: QueryOracle(oracle_source, bundle.grid, kind) for kind in configs}
    grids = {kind: held_out_grid(cfg, n_grid, seed + i) for i, (kind, cfg) in enumerate(configs.items())}
    report = {"n_grid": n_grid, "seed": seed, "mean_mse_max": mean_mse_max,
              "worst_mse_max": worst_mse_max, "qois": {}}
    maps = {}
    for qoi in ONE_BODY_QOIS + TWO_BODY_QOIS:
        kind = qoi_kind(qoi)
        x, y = oracles[kind].measure(grids[kind], qoi)
        mean, _ = predict(bundle.committees[qoi], x, warn=False)
        per_point = np.mean((mean - y) ** 2, axis=1)
        entry = {
            "mean_mse": float(per_point.mean()),
            "max_mse": float(per_point.max()),
            "n_points": int(len(per_point)),
        }
        entry["passed"] = entry["mean_mse"] <= mean_mse_max and entry["max_mse"] <= worst_mse_max
        report["qois"][qoi] = entry
        frame = pd.DataFrame(x, columns=INPUT_COLUMNS[kind])
        frame["mse"] = per_point
        maps[qoi] = frame
        logger.info("%s: mean MSE %.3e, worst %.3e", qoi, entry["mean_mse"], entry["max_mse"])
    report["passed"] = all(e["passed"] for e in report["qois"].values())
    return report, maps


def random_designs(problem: ProblemSpec, n: int, seed: int) -> np.ndarray:
    """n random design vectors with admissible draft and spacing-feasible layouts."""
    rng = np.random.default_rng(seed)
    rows = []
    while len(rows) < n:
        radius = rng.uniform(*RADIUS_BOUNDS)
        slenderness = rng.uniform(*SLENDERNESS_BOUNDS)
        if not DRAFT_BOUNDS[0] <= radius / slenderness <= DRAFT_BOUNDS[1]:
            continue
        x = []
        if problem.free_plant:
            x += [radius, slenderness]
        else:
            radius = problem.geometry.radius
        if problem.control_mode == "farm":
            x += [rng.uniform(*K_PTO_BOUNDS), rng.uniform(*B_PTO_BOUNDS)]
        elif problem.control_mode == "device":
            x += list(rng.uniform(*K_PTO_BOUNDS, problem.n_wec))
            x += list(rng.uniform(*B_PTO_BOUNDS, problem.n_wec))
        if problem.free_layout:
            layout = random_feasible_layout(problem.n_wec, radius, problem.safety_distance,
                                            problem.half_width, rng)
            x += list(layout.as_array()[1:].ravel())
        rows.append(x)
    return np.array(rows, dtype=float).reshape(n, problem.n_vars)


def objective_validation(surrogate_source, oracle_source, problem: ProblemSpec, n: int, seed: int,
                         tolerance_fraction: float = 0.05,
                         n_jobs: Optional[int] = None) -> Tuple[Dict, pd.DataFrame, pd.DataFrame]:
    """
    Paired surrogate/oracle evaluation of n random full designs.

    The 99th-percentile absolute p_v error is compared with a fraction of the
    oracle p_v interdecile range.

    Returns:
        (report, histogram frame, scatter frame)
    """
    hist_columns = ["bin_left", "bin_right", "count"]
    scatter_columns = ["oracle_p_v", "surrogate_p_v", "abs_error"]
    if n == 0:
        report = {"n": 0, "seed": seed, "p99_abs_error": None, "interdecile_range": None,
                  "bound": None, "passed": True}
        return report, pd.DataFrame(columns=hist_columns), pd.DataFrame(columns=scatter_columns)

    X = random_designs(problem, n, seed)
    oracle_p_v, _, _ = evaluate_batch(X, problem, oracle_source, n_jobs)
    surrogate_p_v, _, extrapolations = evaluate_batch(X, problem, surrogate_source, n_jobs)
    errors = np.abs(surrogate_p_v - oracle_p_v)
    p99 = float(np.percentile(errors, 99))
    decile_lo, decile_hi = np.percentile(oracle_p_v, [10, 90])
    bound = tolerance_fraction * float(decile_hi - decile_lo)
    counts, edges = np.histogram(errors, bins=OBJECTIVE_BINS)
    report = {
        "n": n,
        "seed": seed,
        "p99_abs_error": p99,
        "mean_abs_error": float(errors.mean()),
        "interdecile_range": float(decile_hi - decile_lo),
        "bound": bound,
        "passed": bool(p99 <= bound),
        "extrapolations": extrapolations,
    }
    logger.info("Objective error: p99 %.4g W/m^3 against bound %.4g", p99, bound)
    hist = pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts})
    scatter = pd.DataFrame({"oracle_p_v": oracle_p_v, "surrogate_p_v": surrogate_p_v,
                            "abs_error": errors})
    return report, hist, scatter
