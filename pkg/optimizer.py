"""
Concurrent plant, control and layout optimization of a WEC farm.

The search maximizes power per unit WEC volume p_v subject to a minimum
spacing of 2R + s_d between every pair of WECs and a rectangular farm box.
WEC 1 is pinned to the origin. A surrogate-driven genetic algorithm (pymoo)
finds a starting point that SLSQP then refines against the hydro oracle.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from pymoo.algorithms.soo.nonconvex.ga import GA
from pymoo.core.callback import Callback
from pymoo.core.crossover import Crossover
from pymoo.core.mutation import Mutation
from pymoo.core.problem import Problem
from pymoo.operators.sampling.rnd import FloatRandomSampling
from pymoo.optimize import minimize as pymoo_minimize
from scipy.optimize import minimize

from climate import ClimateModel
from farm_model import B_PTO_BOUNDS, K_PTO_BOUNDS, ControlParams, PowerConfig, evaluate_farm
from settings import worker_count
from surrogate import ExtrapolationWarning
from wec_types import (DRAFT_BOUNDS, RADIUS_BOUNDS, SLENDERNESS_BOUNDS, FarmLayout, FrequencyGrid,
                       WecGeometry)

logger = logging.getLogger(__name__)

CONTROL_MODES = ("frozen", "farm", "device")
FEASIBILITY_TOL = 1e-6
FARM_AREA_PER_WEC = 2.0e4  # m^2, box half-width is 0.5 sqrt(N * 2e4)


class NoFeasibleSolutionError(RuntimeError):
    """The search never produced a design satisfying every constraint."""


def farm_half_width(n_wec: int) -> float:
    return 0.5 * np.sqrt(n_wec * FARM_AREA_PER_WEC)


def default_layout(n_wec: int, spacing: float = 50.0) -> FarmLayout:
    """Square grid with WEC 1 at the origin, rows along +x and columns along +y."""
    columns = int(np.ceil(np.sqrt(n_wec)))
    xy = [((i // columns) * spacing, (i % columns) * spacing) for i in range(n_wec)]
    return FarmLayout(tuple(xy))


@dataclass
class Design:
    geometry: WecGeometry
    control: ControlParams
    layout: FarmLayout

    def to_dict(self) -> Dict:
        return {
            "radius_m": self.geometry.radius,
            "slenderness": self.geometry.slenderness,
            "draft_m": self.geometry.draft,
            "control_mode": self.control.mode,
            "k_pto": list(self.control.k_pto),
            "b_pto": list(self.control.b_pto),
            "layout": [list(c) for c in self.layout.centers],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Design":
        control = ControlParams(data["control_mode"], tuple(data["k_pto"]), tuple(data["b_pto"]))
        return cls(WecGeometry(data["radius_m"], data["slenderness"]), control,
                   FarmLayout.from_array(data["layout"]))


@dataclass
class ProblemSpec:
    """
    One instance of the farm design problem.

    Frozen groups (plant when free_plant is False, control when
    control_mode is 'frozen', layout when free_layout is False) take their
    values from geometry / control / layout.
    """
    n_wec: int
    climate: ClimateModel
    grid: FrequencyGrid
    power: PowerConfig = field(default_factory=PowerConfig)
    control_mode: str = "farm"
    free_plant: bool = True
    free_layout: bool = True
    safety_distance: float = 10.0
    evaluator: str = "surrogate"
    geometry: WecGeometry = field(default_factory=lambda: WecGeometry(2.0, 1.0))
    control: ControlParams = field(default_factory=lambda: ControlParams.farm(-5.0e3, 5.0e5))
    layout: Optional[FarmLayout] = None

    def __post_init__(self):
        if self.n_wec < 1:
            raise ValueError(f"n_wec must be positive, got {self.n_wec}")
        if self.control_mode not in CONTROL_MODES:
            raise ValueError(f"Unknown control mode '{self.control_mode}'")
        if self.evaluator not in ("surrogate", "oracle"):
            raise ValueError(f"Unknown evaluator '{self.evaluator}'")
        if self.layout is None:
            spacing = max(50.0, 2.0 * self.geometry.radius + self.safety_distance)
            self.layout = default_layout(self.n_wec, spacing)
        if self.layout.n_wec != self.n_wec:
            raise ValueError(f"Layout has {self.layout.n_wec} WECs, problem has {self.n_wec}")
        if self.layout.centers[0] != (0.0, 0.0):
            raise ValueError("WEC 1 must sit at the origin")
        # cache spectra before the problem is shipped to workers
        self.climate.spectral_density(self.grid.omega)

    @classmethod
    def from_settings(cls, settings: Dict, climate: ClimateModel,
                      grid: FrequencyGrid) -> "ProblemSpec":
        p = settings["problem"]
        layout = FarmLayout.from_array(p["layout"]) if p["layout"] else None
        mode = p["control_mode"]
        if mode == "device":
            control = ControlParams.device([p["k_pto"]] * p["n_wec"], [p["b_pto"]] * p["n_wec"])
        else:
            control = ControlParams.farm(p["k_pto"], p["b_pto"])
        return cls(n_wec=p["n_wec"], climate=climate, grid=grid,
                   power=PowerConfig.from_settings(settings), control_mode=mode,
                   free_plant=p["free_plant"], free_layout=p["free_layout"],
                   safety_distance=p["safety_distance_m"], evaluator=p["evaluator"],
                   geometry=WecGeometry(p["radius_m"], p["slenderness"]), control=control,
                   layout=layout)

    @property
    def half_width(self) -> float:
        return farm_half_width(self.n_wec)

    def variable_names(self) -> List[str]:
        names = []
        if self.free_plant:
            names += ["radius", "slenderness"]
        if self.control_mode == "farm":
            names += ["k_pto", "b_pto"]
        elif self.control_mode == "device":
            names += [f"k_pto_{i + 1}" for i in range(self.n_wec)]
            names += [f"b_pto_{i + 1}" for i in range(self.n_wec)]
        if self.free_layout:
            for i in range(1, self.n_wec):
                names += [f"x_{i + 1}", f"y_{i + 1}"]
        return names

    @property
    def n_vars(self) -> int:
        return len(self.variable_names())

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        low, high = [], []
        if self.free_plant:
            low += [RADIUS_BOUNDS[0], SLENDERNESS_BOUNDS[0]]
            high += [RADIUS_BOUNDS[1], SLENDERNESS_BOUNDS[1]]
        n_control = {"frozen": 0, "farm": 1, "device": self.n_wec}[self.control_mode]
        low += [K_PTO_BOUNDS[0]] * n_control + [B_PTO_BOUNDS[0]] * n_control
        high += [K_PTO_BOUNDS[1]] * n_control + [B_PTO_BOUNDS[1]] * n_control
        if self.free_layout:
            w = self.half_width
            low += [0.0, -w] * (self.n_wec - 1)
            high += [w, w] * (self.n_wec - 1)
        return np.array(low, dtype=float), np.array(high, dtype=float)

    def _split(self, x) -> Tuple[Tuple[float, float], np.ndarray, np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_vars,):
            raise ValueError(f"Design vector needs {self.n_vars} entries, got shape {x.shape}")
        pos = 0
        if self.free_plant:
            plant = (float(x[0]), float(x[1]))
            pos = 2
        else:
            plant = (self.geometry.radius, self.geometry.slenderness)
        n_control = {"frozen": 0, "farm": 1, "device": self.n_wec}[self.control_mode]
        k = x[pos:pos + n_control]
        b = x[pos + n_control:pos + 2 * n_control]
        pos += 2 * n_control
        if self.free_layout:
            xy = np.vstack([[0.0, 0.0], x[pos:].reshape(-1, 2)])
        else:
            xy = self.layout.as_array()
        return plant, k, b, xy

    def decode(self, x) -> Design:
        (radius, slenderness), k, b, xy = self._split(x)
        if self.control_mode == "farm":
            control = ControlParams.farm(k[0], b[0])
        elif self.control_mode == "device":
            control = ControlParams.device(k, b)
        else:
            control = self.control
        return Design(WecGeometry(radius, slenderness), control, FarmLayout.from_array(xy))

    def encode(self, design: Design) -> np.ndarray:
        x = []
        if self.free_plant:
            x += [design.geometry.radius, design.geometry.slenderness]
        if self.control_mode == "farm":
            if design.control.mode != "farm":
                raise ValueError("Farm-level problem needs farm-level control")
            x += [design.control.k_pto[0], design.control.b_pto[0]]
        elif self.control_mode == "device":
            k, b = design.control.as_arrays(self.n_wec)
            x += list(k) + list(b)
        if self.free_layout:
            x += list(design.layout.pinned().as_array()[1:].ravel())
        return np.array(x, dtype=float)

    def initial_design(self) -> Design:
        """The frozen values as a design; farm-level control is spread over devices if needed."""
        control = self.control
        if self.control_mode == "device" and control.mode == "farm":
            k, b = control.as_arrays(self.n_wec)
            control = ControlParams.device(k, b)
        return Design(self.geometry, control, self.layout)

    def residuals(self, x) -> np.ndarray:
        """Constraint residuals of a design vector (feasible iff all <= 0)."""
        (radius, slenderness), _, _, xy = self._split(x)
        draft = radius / slenderness
        return np.concatenate([
            constraints(xy, radius, self.safety_distance, self.half_width),
            [DRAFT_BOUNDS[0] - draft, draft - DRAFT_BOUNDS[1]],
        ])

    def summary(self) -> Dict:
        return {
            "n_wec": self.n_wec,
            "control_mode": self.control_mode,
            "free_plant": self.free_plant,
            "free_layout": self.free_layout,
            "safety_distance_m": self.safety_distance,
            "half_width_m": self.half_width,
            "p_lim_w": self.power.p_lim,
            "evaluator": self.evaluator,
            "variables": self.variable_names(),
        }


def constraints(layout, radius: float, safety_distance: float = 10.0,
                half_width: Optional[float] = None) -> np.ndarray:
    """
    Spacing and farm-box residuals (feasible iff every entry is <= 0).

    Pair residuals 2R + s_d - l_pq come first, in (p, q) order with p < q,
    followed by four box residuals per WEC.
    """
    xy = layout.as_array() if isinstance(layout, FarmLayout) else np.asarray(layout, dtype=float)
    xy = xy.reshape(-1, 2)
    n = len(xy)
    if half_width is None:
        half_width = farm_half_width(n)
    pairs = [2.0 * radius + safety_distance - float(np.hypot(*(xy[q] - xy[p])))
             for p in range(n) for q in range(p + 1, n)]
    box = np.column_stack([-xy[:, 0], xy[:, 0] - half_width,
                           -half_width - xy[:, 1], xy[:, 1] - half_width]).ravel()
    return np.concatenate([np.array(pairs, dtype=float), box])


def is_feasible(residuals: np.ndarray, tol: float = FEASIBILITY_TOL) -> bool:
    return bool(np.all(np.asarray(residuals) <= tol))


def _evaluate_row(x, problem: ProblemSpec, source) -> Tuple[float, np.ndarray, int]:
    residuals = problem.residuals(x)
    (radius, slenderness), _, _, _ = problem._split(x)
    draft = radius / slenderness
    if not DRAFT_BOUNDS[0] - 1e-9 <= draft <= DRAFT_BOUNDS[1] + 1e-9:
        return 0.0, residuals, 0
    try:
        design = problem.decode(x)
    except ValueError as exc:
        # coincident centers; the spacing residuals already flag the design
        logger.debug("Design decode failed: %s", exc)
        return 0.0, residuals, 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ExtrapolationWarning)
        performance = evaluate_farm(design.geometry, design.control, design.layout,
                                    problem.climate, problem.power, source, problem.grid)
    extrapolations = sum(1 for w in caught if issubclass(w.category, ExtrapolationWarning))
    for w in caught:
        if not issubclass(w.category, ExtrapolationWarning):
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    return performance.p_v, residuals, extrapolations


def evaluate_candidate(x, problem: ProblemSpec, source) -> Tuple[float, np.ndarray]:
    """
    p_v (W/m^3) and constraint residuals of one design vector.

    Infeasible designs are still evaluated; designs with the draft out of
    bounds return p_v = 0 without calling the coefficient source.
    """
    p_v, residuals, _ = _evaluate_row(x, problem, source)
    return p_v, residuals


def evaluate_batch(X, problem: ProblemSpec, source,
                   n_jobs: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, int]:
    X = np.atleast_2d(X)
    n_jobs = worker_count() if n_jobs is None else n_jobs
    if n_jobs == 1 or len(X) == 1:
        rows = [_evaluate_row(x, problem, source) for x in X]
    else:
        rows = Parallel(n_jobs=n_jobs)(delayed(_evaluate_row)(x, problem, source) for x in X)
    p_v = np.array([r[0] for r in rows])
    residuals = np.vstack([r[1] for r in rows])
    return p_v, residuals, int(sum(r[2] for r in rows))


@dataclass(frozen=True)
class GaConfig:
    pop_size: Optional[int] = None
    n_gen: Optional[int] = None
    crossover_alpha: float = 0.5
    mutation_sigma: float = 0.1

    @classmethod
    def from_settings(cls, settings: Dict) -> "GaConfig":
        ga = settings["ga"]
        return cls(ga["pop_size"], ga["n_gen"], ga["crossover_alpha"], ga["mutation_sigma"])

    def resolve(self, n_wec: int, n_vars: int) -> Tuple[int, int]:
        """Population and generation counts, filling unset values with the defaults."""
        if n_wec == 5:
            pop, gen = 60, 40
        else:
            pop, gen = min(20 * n_vars, 400), 100
        return (self.pop_size or pop), (self.n_gen or gen)


@dataclass(frozen=True)
class RefineConfig:
    max_iter: int = 100
    max_evals: int = 5000
    ftol: float = 1e-10
    xtol: float = 1e-8
    fd_step: float = 1e-6

    @classmethod
    def from_settings(cls, settings: Dict) -> "RefineConfig":
        r = settings["refine"]
        return cls(r["max_iter"], r["max_evals"], r["ftol"], r["xtol"], r["fd_step"])


@dataclass
class OptResult:
    x: np.ndarray
    p_v: float
    residuals: np.ndarray
    n_evals: Dict[str, int]
    seed: Optional[int]
    history: List[float]
    stage: str
    design: Optional[Design] = None
    extrapolations: int = 0
    stationary: bool = False
    stages: Dict[str, "OptResult"] = field(default_factory=dict)
    oracle_p_v: Optional[float] = None

    @property
    def feasible(self) -> bool:
        return is_feasible(self.residuals)

    def to_dict(self) -> Dict:
        out = {
            "stage": self.stage,
            "x": self.x.tolist(),
            "p_v": self.p_v,
            "oracle_p_v": self.oracle_p_v,
            "max_residual": float(np.max(self.residuals)) if len(self.residuals) else 0.0,
            "feasible": self.feasible,
            "n_evals": dict(self.n_evals),
            "seed": self.seed,
            "history": list(self.history),
            "extrapolations": self.extrapolations,
            "stationary": self.stationary,
            "design": self.design.to_dict() if self.design else None,
        }
        if self.stages:
            out["stages"] = {name: r.to_dict() for name, r in self.stages.items()}
        return out


class BlendCrossover(Crossover):
    """BLX-alpha: children drawn uniformly from the parents' range widened by alpha."""

    def __init__(self, alpha: float = 0.5, seed: Optional[int] = None, **kwargs):
        super().__init__(2, 2, **kwargs)
        self.alpha = alpha
        self.rng = np.random.default_rng(seed)

    def _do(self, problem, X, **kwargs):
        low = np.minimum(X[0], X[1])
        high = np.maximum(X[0], X[1])
        spread = self.alpha * (high - low)
        children = self.rng.uniform(low - spread, high + spread, size=(2,) + X.shape[1:])
        return np.clip(children, problem.xl, problem.xu)


class GaussianMutation(Mutation):
    """Adds N(0, (sigma * range)^2) noise to each variable with probability 1/n_var."""

    def __init__(self, sigma: float = 0.1, seed: Optional[int] = None, **kwargs):
        super().__init__(**kwargs)
        self.sigma = sigma
        self.rng = np.random.default_rng(seed)

    def _do(self, problem, X, **kwargs):
        X = np.array(X, dtype=float)
        span = problem.xu - problem.xl
        mask = self.rng.random(X.shape) < 1.0 / X.shape[1]
        noise = self.rng.normal(0.0, 1.0, X.shape) * self.sigma * span
        return np.clip(X + mask * noise, problem.xl, problem.xu)


class _VectorProblem(Problem):
    """pymoo wrapper: evaluate(X) returns (values to maximize, residuals)."""

    def __init__(self, evaluate: Callable, xl: np.ndarray, xu: np.ndarray, n_constr: int):
        super().__init__(n_var=len(xl), n_obj=1, n_ieq_constr=n_constr, xl=xl, xu=xu)
        self._evaluate_fn = evaluate
        self.extrapolations = 0

    def _evaluate(self, x, out, *args, **kwargs):
        values, residuals, extrapolations = self._evaluate_fn(x)
        self.extrapolations += extrapolations
        out["F"] = -np.asarray(values, dtype=float).reshape(-1, 1)
        if self.n_ieq_constr:
            out["G"] = np.asarray(residuals, dtype=float)


class _BestTracker(Callback):
    def __init__(self):
        super().__init__()
        self.best: List[float] = []
        self.min_violation = np.inf

    def notify(self, algorithm):
        cv = algorithm.pop.get("CV")
        if cv is not None and len(cv):
            self.min_violation = min(self.min_violation, float(np.min(cv)))
        opt = algorithm.opt
        if opt is not None and len(opt) and float(opt[0].CV[0]) <= 0.0:
            self.best.append(-float(opt[0].F[0]))


def genetic_search(evaluate: Callable, xl: np.ndarray, xu: np.ndarray, n_constr: int,
                   pop_size: int, n_gen: int, seed: int, alpha: float = 0.5,
                   sigma: float = 0.1) -> Tuple[np.ndarray, float, List[float], int, int]:
    """
    Real-coded GA maximizing evaluate(X)[0] under evaluate(X)[1] <= 0.

    Tournament selection compares feasibility first, then objective;
    survival keeps the best individuals (elitist).

    Returns:
        (best x, best value, generation-best history, evaluations, extrapolations)
    """
    problem = _VectorProblem(evaluate, np.asarray(xl, float), np.asarray(xu, float), n_constr)
    algorithm = GA(pop_size=pop_size,
                   sampling=FloatRandomSampling(),
                   crossover=BlendCrossover(alpha, seed=seed),
                   mutation=GaussianMutation(sigma, seed=None if seed is None else seed + 1),
                   eliminate_duplicates=True)
    tracker = _BestTracker()
    res = pymoo_minimize(problem, algorithm, ("n_gen", n_gen), seed=seed, callback=tracker,
                         verbose=False)
    n_evals = int(res.algorithm.evaluator.n_eval)
    if res.X is None:
        raise NoFeasibleSolutionError(
            f"No feasible individual in {n_gen} generations of {pop_size} "
            f"(smallest constraint violation {tracker.min_violation:.4g})")
    x = np.atleast_1d(np.asarray(res.X, dtype=float))
    return x, -float(np.atleast_1d(res.F)[0]), tracker.best, n_evals, problem.extrapolations


def ga_search(problem: ProblemSpec, source, seed: int, config: GaConfig = GaConfig(),
              n_jobs: Optional[int] = None) -> OptResult:
    """Global search of the design space with the given coefficient source."""
    xl, xu = problem.bounds()
    pop_size, n_gen = config.resolve(problem.n_wec, problem.n_vars)
    n_constr = len(problem.residuals(0.5 * (xl + xu)))
    logger.info("GA: %d variables, population %d, %d generations, source %s",
                problem.n_vars, pop_size, n_gen, getattr(source, "name", type(source).__name__))

    def evaluate(X):
        return evaluate_batch(X, problem, source, n_jobs)

    x, p_v, history, n_evals, extrapolations = genetic_search(
        evaluate, xl, xu, n_constr, pop_size, n_gen, seed, config.crossover_alpha,
        config.mutation_sigma)
    logger.info("GA best p_v %.4g W/m^3 after %d evaluations (%d extrapolations)",
                p_v, n_evals, extrapolations)
    return OptResult(x=x, p_v=p_v, residuals=problem.residuals(x), n_evals={"ga": n_evals},
                     seed=seed, history=history, stage="ga", design=problem.decode(x),
                     extrapolations=extrapolations)


class _Stop(Exception):
    pass


@dataclass
class RefineOutcome:
    x: np.ndarray
    value: float
    n_evals: int
    history: List[float]
    stationary: bool
    reason: str


def local_refine(objective: Callable, residuals: Callable, x0, xl, xu,
                 config: RefineConfig = RefineConfig(),
                 evaluate_many: Optional[Callable] = None) -> RefineOutcome:
    """
    SLSQP maximization of objective(x) subject to residuals(x) <= 0 in a box.

    Variables are scaled to the unit box and gradients use central
    differences (one-sided at the bounds). Only feasible points that improve
    on x0 are accepted, so the returned value never falls below the start.
    """
    x0 = np.asarray(x0, dtype=float)
    xl = np.asarray(xl, dtype=float)
    xu = np.asarray(xu, dtype=float)
    span = np.where(xu > xl, xu - xl, 1.0)
    evaluate_many = evaluate_many or (lambda xs: [objective(x) for x in xs])

    def to_x(u):
        return np.clip(xl + np.asarray(u) * span, xl, xu)

    cache: Dict[Tuple[float, ...], float] = {}
    state = {"evals": 0}
    f0 = float(objective(x0))
    state["evals"] += 1
    start_feasible = is_feasible(residuals(x0))
    best = {"x": x0.copy(), "f": f0 if start_feasible else -np.inf}
    threshold = config.ftol * max(1.0, abs(f0))

    def record(x, f):
        if f > best["f"] + (threshold if np.array_equal(best["x"], x0) else 0.0) \
                and is_feasible(residuals(x)):
            best["x"], best["f"] = x.copy(), f

    def values(us):
        xs = [to_x(u) for u in us]
        keys = [tuple(x) for x in xs]
        missing = [i for i, k in enumerate(keys) if k not in cache]
        if missing:
            if state["evals"] + len(missing) > config.max_evals:
                raise _Stop("evaluation cap")
            fresh = evaluate_many([xs[i] for i in missing])
            state["evals"] += len(missing)
            for i, f in zip(missing, fresh):
                cache[keys[i]] = float(f)
                record(xs[i], float(f))
        return [cache[k] for k in keys]

    scale = abs(f0) if f0 != 0 and np.isfinite(f0) else 1.0

    def fun(u):
        return -values([u])[0] / scale

    def jac(u):
        u = np.asarray(u, dtype=float)
        h = config.fd_step * np.maximum(1.0, np.abs(u))
        stencil = []
        for j in range(len(u)):
            up, down = u.copy(), u.copy()
            up[j] = min(u[j] + h[j], 1.0)
            down[j] = max(u[j] - h[j], 0.0)
            stencil += [up, down]
        f = values(stencil)
        grad = np.empty(len(u))
        for j in range(len(u)):
            step = stencil[2 * j][j] - stencil[2 * j + 1][j]
            grad[j] = -(f[2 * j] - f[2 * j + 1]) / step / scale if step > 0 else 0.0
        return grad

    history = [best["f"]] if start_feasible else []
    last = {"u": (x0 - xl) / span}

    def callback(uk, *args):
        fk = values([uk])[0]
        x = to_x(uk)
        if is_feasible(residuals(x)) and (not history or fk >= history[-1]):
            history.append(fk)
        moved = np.linalg.norm(np.asarray(uk) - last["u"])
        last["u"] = np.array(uk, dtype=float)
        if moved < config.xtol:
            raise _Stop("step tolerance")

    reason = "converged"
    u0 = np.clip((x0 - xl) / span, 0.0, 1.0)
    try:
        res = minimize(fun, u0, method="SLSQP", jac=jac, bounds=[(0.0, 1.0)] * len(u0),
                       constraints=[{"type": "ineq", "fun": lambda u: -np.asarray(residuals(to_x(u)))}],
                       callback=callback, options={"maxiter": config.max_iter, "ftol": config.ftol})
        values([res.x])
        reason = str(res.message)
    except _Stop as stop:
        reason = str(stop)

    stationary = np.array_equal(best["x"], x0)
    if stationary:
        logger.info("Refinement kept the starting point (%s)", reason)
    if history and best["f"] > history[-1]:
        history.append(best["f"])
    return RefineOutcome(best["x"], best["f"] if np.isfinite(best["f"]) else f0,
                         state["evals"], history, stationary, reason)


def _objective_only(x, problem: ProblemSpec, source) -> float:
    return _evaluate_row(x, problem, source)[0]


def gradient_refine(x0, problem: ProblemSpec, source, config: RefineConfig = RefineConfig(),
                    n_jobs: Optional[int] = None) -> OptResult:
    """Local refinement of x0 with the given (usually oracle) source."""
    xl, xu = problem.bounds()
    n_jobs = worker_count() if n_jobs is None else n_jobs

    def objective(x):
        return _objective_only(x, problem, source)

    def evaluate_many(xs):
        if n_jobs == 1 or len(xs) == 1:
            return [objective(x) for x in xs]
        return Parallel(n_jobs=n_jobs)(delayed(_objective_only)(x, problem, source) for x in xs)

    outcome = local_refine(objective, problem.residuals, x0, xl, xu, config, evaluate_many)
    logger.info("Refinement p_v %.6g W/m^3 after %d evaluations (%s)",
                outcome.value, outcome.n_evals, outcome.reason)
    return OptResult(x=outcome.x, p_v=outcome.value, residuals=problem.residuals(outcome.x),
                     n_evals={"refine": outcome.n_evals}, seed=None, history=outcome.history,
                     stage="refine", design=problem.decode(outcome.x),
                     stationary=outcome.stationary, oracle_p_v=outcome.value)


def hybrid(problem: ProblemSpec, surrogate_source, oracle_source, seed: int,
           ga_config: GaConfig = GaConfig(), refine_config: RefineConfig = RefineConfig(),
           n_jobs: Optional[int] = None) -> OptResult:
    """GA on the surrogate, then oracle refinement starting from the GA optimum."""
    ga = ga_search(problem, surrogate_source, seed, ga_config, n_jobs)
    ga.oracle_p_v = evaluate_candidate(ga.x, problem, oracle_source)[0]
    refined = gradient_refine(ga.x, problem, oracle_source, refine_config, n_jobs)
    n_evals = {"ga": ga.n_evals["ga"], "refine": refined.n_evals["refine"]}
    logger.info("Hybrid: GA oracle p_v %.6g -> refined %.6g W/m^3", ga.oracle_p_v, refined.p_v)
    return OptResult(x=refined.x, p_v=refined.p_v, residuals=refined.residuals, n_evals=n_evals,
                     seed=seed, history=ga.history + refined.history, stage="hybrid",
                     design=refined.design, extrapolations=ga.extrapolations,
                     stationary=refined.stationary, stages={"ga": ga, "refine": refined},
                     oracle_p_v=refined.p_v)


def optimize(problem: ProblemSpec, sources: Dict[str, object], seed: int,
             ga_config: GaConfig = GaConfig(), refine_config: RefineConfig = RefineConfig(),
             n_jobs: Optional[int] = None) -> OptResult:
    """
    Run the configured pipeline: hybrid when a surrogate is available and
    selected, otherwise GA and refinement both on the oracle.
    """
    if problem.evaluator == "surrogate" and sources.get("surrogate") is not None:
        return hybrid(problem, sources["surrogate"], sources["oracle"], seed, ga_config,
                      refine_config, n_jobs)
    oracle = sources["oracle"]
    ga = ga_search(problem, oracle, seed, ga_config, n_jobs)
    ga.oracle_p_v = ga.p_v
    refined = gradient_refine(ga.x, problem, oracle, refine_config, n_jobs)
    return OptResult(x=refined.x, p_v=refined.p_v, residuals=refined.residuals,
                     n_evals={"ga": ga.n_evals["ga"], "refine": refined.n_evals["refine"]},
                     seed=seed, history=ga.history + refined.history, stage="oracle-hybrid",
                     design=refined.design, stationary=refined.stationary,
                     stages={"ga": ga, "refine": refined}, oracle_p_v=refined.p_v)
