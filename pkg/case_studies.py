"""
Case studies of increasing design freedom, plus the layout baselines used to
judge their results.

    I    single WEC, plant only, swept over the power limit
    II   five WECs, layout only
    III  five WECs, plant and layout
    IV   five WECs, plant, farm-level control and layout
    V    five WECs, plant, device-level control and layout
    VI   25 WECs, plant, farm-level control and layout
"""

import dataclasses
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from climate import ClimateModel
from farm_model import ControlParams, PowerConfig, evaluate_farm, natural_frequency, q_factor
from mbe import compose_farm
from optimizer import (Design, GaConfig, ProblemSpec, RefineConfig, constraints, evaluate_batch,
                       is_feasible, optimize)
from settings import worker_count
from wec_types import FarmLayout, FrequencyGrid, WecGeometry

logger = logging.getLogger(__name__)

KW = 1.0e3

CASE_PRESETS: Dict[str, Dict] = {
    "I": {"n_wec": 1, "control_mode": "frozen", "free_plant": True, "free_layout": False,
          "k_pto": -0.5e3, "b_pto": 5.0e5,
          "p_lim_sweep_w": [1 * KW, 10 * KW, 1e2 * KW, 1e3 * KW, 1e6 * KW]},
    "II": {"n_wec": 5, "control_mode": "frozen", "free_plant": False, "free_layout": True,
           "radius_m": 2.0, "slenderness": 1.0, "k_pto": -5.0e3, "b_pto": 5.0e5,
           "random_baseline": True},
    "III": {"n_wec": 5, "control_mode": "frozen", "free_plant": True, "free_layout": True,
            "k_pto": -5.0e3, "b_pto": 5.0e5,
            "variant": {"b_pto": 3.0e3, "p_lim_w": 25 * KW}},
    "IV": {"n_wec": 5, "control_mode": "farm", "free_plant": True, "free_layout": True,
           "natural_frequencies": True, "variant": {"p_lim_w": 75 * KW}},
    "V": {"n_wec": 5, "control_mode": "device", "free_plant": True, "free_layout": True,
          "natural_frequencies": True},
    "VI": {"n_wec": 25, "control_mode": "farm", "free_plant": True, "free_layout": True,
           "p_lim_w": 1e5 * KW},
}


def case_problem(case_id: str, settings: Dict, climate: ClimateModel, grid: FrequencyGrid,
                 variant: bool = False, p_lim: Optional[float] = None) -> ProblemSpec:
    """ProblemSpec for a case, with preset values taking priority over the run settings."""
    if case_id not in CASE_PRESETS:
        raise ValueError(f"Unknown case study '{case_id}', expected one of {list(CASE_PRESETS)}")
    preset = dict(CASE_PRESETS[case_id])
    if variant:
        if "variant" not in preset:
            raise ValueError(f"Case study {case_id} has no variant")
        preset.update(preset["variant"])
    p = settings["problem"]
    n_wec = preset["n_wec"]
    k_pto = preset.get("k_pto", p["k_pto"])
    b_pto = preset.get("b_pto", p["b_pto"])
    if preset["control_mode"] == "device":
        control = ControlParams.device([k_pto] * n_wec, [b_pto] * n_wec)
    else:
        control = ControlParams.farm(k_pto, b_pto)
    limit = p_lim if p_lim is not None else preset.get("p_lim_w", p["p_lim_w"])
    power = dataclasses.replace(PowerConfig.from_settings(settings), p_lim=limit)
    return ProblemSpec(
        n_wec=n_wec, climate=climate, grid=grid, power=power,
        control_mode=preset["control_mode"], free_plant=preset["free_plant"],
        free_layout=preset["free_layout"], safety_distance=p["safety_distance_m"],
        evaluator=p["evaluator"],
        geometry=WecGeometry(preset.get("radius_m", p["radius_m"]),
                             preset.get("slenderness", p["slenderness"])),
        control=control)


def isolated_power(design: Design, problem: ProblemSpec, source) -> float:
    """Mean over devices of the power each would absorb alone, W."""
    k, b = design.control.as_arrays(design.layout.n_wec)
    single = FarmLayout(((0.0, 0.0),))
    powers = {}
    for k_i, b_i in zip(k, b):
        if (k_i, b_i) not in powers:
            powers[(k_i, b_i)] = evaluate_farm(design.geometry, ControlParams.farm(k_i, b_i), single,
                                               problem.climate, problem.power, source,
                                               problem.grid).p_a
    return float(np.mean([powers[(k_i, b_i)] for k_i, b_i in zip(k, b)]))


def natural_frequencies(design: Design, problem: ProblemSpec, source) -> List[Optional[float]]:
    hydro = compose_farm(design.geometry, design.layout, source, problem.grid)
    return [natural_frequency(design.geometry, design.control, hydro, device=p,
                              rho=problem.grid.rho, g=problem.grid.g)
            for p in range(design.layout.n_wec)]


def random_feasible_layout(n_wec: int, radius: float, safety_distance: float, half_width: float,
                           rng: np.random.Generator, max_tries: int = 10000) -> FarmLayout:
    """WEC 1 at the origin, the rest placed one by one by rejection sampling."""
    min_spacing = 2.0 * radius + safety_distance
    for _ in range(100):
        xy = [(0.0, 0.0)]
        for _ in range(n_wec - 1):
            for _ in range(max_tries):
                candidate = (rng.uniform(0.0, half_width), rng.uniform(-half_width, half_width))
                if all(np.hypot(candidate[0] - x, candidate[1] - y) >= min_spacing for x, y in xy):
                    xy.append(candidate)
                    break
            else:
                break
        if len(xy) == n_wec:
            return FarmLayout(tuple(xy))
    raise RuntimeError(f"Could not place {n_wec} WECs {min_spacing:.1f} m apart in the farm box")


def random_layout_baseline(problem: ProblemSpec, design: Design, n: int, seed: int, source,
                           n_jobs: Optional[int] = None) -> np.ndarray:
    """p_v of n random feasible layouts at the design's geometry and control."""
    layout_problem = dataclasses.replace(problem, control_mode="frozen", free_plant=False,
                                         free_layout=True, geometry=design.geometry,
                                         control=design.control, layout=None)
    rng = np.random.default_rng(seed)
    layouts = [random_feasible_layout(problem.n_wec, design.geometry.radius,
                                      problem.safety_distance, problem.half_width, rng)
               for _ in range(n)]
    if not layouts:
        return np.empty(0)
    X = np.array([layout.as_array()[1:].ravel() for layout in layouts])
    p_v, _, _ = evaluate_batch(X, layout_problem, source, n_jobs)
    return p_v


def percentile_of(value: float, samples) -> float:
    """Share of samples (in %) at or below value."""
    samples = np.asarray(samples, dtype=float)
    if len(samples) == 0:
        return float("nan")
    return float(100.0 * np.mean(samples <= value))


def _perturbed_value(design: Design, layout: FarmLayout, problem: ProblemSpec, source) -> float:
    return evaluate_farm(design.geometry, design.control, layout, problem.climate, problem.power,
                         source, problem.grid).p_v


def perturb_sensitivity(design: Design, problem: ProblemSpec, wec_index: int, radius: float,
                        n: int, seed: int, source, n_jobs: Optional[int] = None) -> pd.DataFrame:
    """
    Move one WEC (0-based index) to n random points within `radius` of its
    optimized position, all other WECs fixed.

    Perturbations that break the spacing or box constraints are recorded as
    infeasible and not evaluated.
    """
    if not 0 <= wec_index < design.layout.n_wec:
        raise ValueError(f"WEC index {wec_index} outside 0..{design.layout.n_wec - 1}")
    if radius < 0:
        raise ValueError(f"Perturbation radius must be nonnegative, got {radius}")
    rng = np.random.default_rng(seed)
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, n))
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    dx, dy = r * np.cos(phi), r * np.sin(phi)

    base = design.layout.as_array()
    layouts, feasible = [], []
    for ddx, ddy in zip(dx, dy):
        xy = base.copy()
        xy[wec_index] += (ddx, ddy)
        ok = is_feasible(constraints(xy, design.geometry.radius, problem.safety_distance,
                                     problem.half_width))
        feasible.append(ok)
        layouts.append(FarmLayout.from_array(xy) if ok else None)

    todo = [layout for layout in layouts if layout is not None]
    n_jobs = worker_count() if n_jobs is None else n_jobs
    if n_jobs == 1 or len(todo) <= 1:
        values = [_perturbed_value(design, layout, problem, source) for layout in todo]
    else:
        values = Parallel(n_jobs=n_jobs)(
            delayed(_perturbed_value)(design, layout, problem, source) for layout in todo)
    values = iter(values)
    p_v = [next(values) if ok else np.nan for ok in feasible]
    logger.info("Perturbed WEC %d: %d of %d samples feasible", wec_index + 1, sum(feasible), n)
    return pd.DataFrame({"dx": dx, "dy": dy, "p_v": p_v, "feasible": feasible})


def _run_summary(problem: ProblemSpec, result, oracle, want_frequencies: bool) -> Dict:
    design = result.design
    performance = evaluate_farm(design.geometry, design.control, design.layout, problem.climate,
                                problem.power, oracle, problem.grid)
    run = {
        "p_lim_w": problem.power.p_lim,
        "result": result.to_dict(),
        "p_a_w": performance.p_a,
        "p_v": performance.p_v,
        "saturated_fraction": performance.saturated_fraction,
    }
    if problem.n_wec > 1:
        run["q_factor"] = q_factor(performance.p_a, isolated_power(design, problem, oracle),
                                   problem.n_wec)
    if want_frequencies:
        run["natural_frequencies"] = natural_frequencies(design, problem, oracle)
    return run


class CaseStudyRunner:
    """Runs one case study end to end and collects a JSON-ready report."""

    def __init__(self, settings: Dict, climate: ClimateModel, grid: FrequencyGrid,
                 sources: Dict[str, object], n_jobs: Optional[int] = None):
        self.settings = settings
        self.climate = climate
        self.grid = grid
        self.sources = sources
        self.n_jobs = n_jobs
        self.ga_config = GaConfig.from_settings(settings)
        self.refine_config = RefineConfig.from_settings(settings)

    def run(self, case_id: str, seed: int, variant: bool = False) -> Tuple[Dict, FarmLayout]:
        preset = CASE_PRESETS.get(case_id)
        if preset is None:
            raise ValueError(f"Unknown case study '{case_id}', expected one of {list(CASE_PRESETS)}")
        limits = preset.get("p_lim_sweep_w", [None])
        runs, layouts = [], []
        for limit in limits:
            problem = case_problem(case_id, self.settings, self.climate, self.grid, variant,
                                   p_lim=limit)
            logger.info("Case %s%s: %d variables, p_lim=%s W", case_id, " (variant)" if variant else "",
                        problem.n_vars, problem.power.p_lim)
            result = optimize(problem, self.sources, seed, self.ga_config, self.refine_config,
                              self.n_jobs)
            run = _run_summary(problem, result, self.sources["oracle"],
                               preset.get("natural_frequencies", False))
            if preset.get("random_baseline"):
                n_random = self.settings["validation"]["n_random_layouts"]
                baseline = random_layout_baseline(problem, result.design, n_random, seed + 1,
                                                  self.sources["oracle"], self.n_jobs)
                run["random_layout_percentile"] = percentile_of(run["p_v"], baseline)
                run["random_layout_p_v"] = {
                    "min": float(np.min(baseline)) if len(baseline) else None,
                    "median": float(np.median(baseline)) if len(baseline) else None,
                    "max": float(np.max(baseline)) if len(baseline) else None,
                }
            runs.append(run)
            layouts.append(result.design.layout)

        report = {"case": case_id, "variant": variant, "seed": seed,
                  "problem": problem.summary(), "runs": runs}
        if len(runs) > 1:
            report["trend"] = plant_trend(runs)
        return report, layouts[-1]


def plant_trend(runs: List[Dict]) -> Dict:
    """Optimal radius across a power-limit sweep: monotonicity and the final plateau."""
    radii = [r["result"]["design"]["radius_m"] for r in runs]
    change = abs(radii[-1] - radii[-2]) / radii[-2] if len(radii) > 1 and radii[-2] else 0.0
    return {
        "p_lim_w": [r["p_lim_w"] for r in runs],
        "radius_m": radii,
        "slenderness": [r["result"]["design"]["slenderness"] for r in runs],
        "p_v": [r["p_v"] for r in runs],
        "radius_nondecreasing": bool(all(b >= a - 1e-9 for a, b in zip(radii, radii[1:]))),
        "final_plateau_change": change,
    }


def case_study(case_id: str, settings: Dict, climate: ClimateModel, grid: FrequencyGrid,
               sources: Dict[str, object], seed: int, variant: bool = False,
               n_jobs: Optional[int] = None):
    """Run a case study; returns (report, final layout)."""
    return CaseStudyRunner(settings, climate, grid, sources, n_jobs).run(case_id, seed, variant)
