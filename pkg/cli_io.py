#!/usr/bin/env python3
"""
Command-line entry point for the WEC farm toolkit.

    python cli_io.py <command> --config run.json --out results/ --seed N [-v]

Commands write JSON reports and CSV tables into --out; each CSV gets a
<name>.meta.json sidecar with the run metadata. Exit status is 0 on
success, 1 when a validation check or a computation fails, and 2 for usage
or configuration errors.
"""

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from case_studies import CASE_PRESETS, case_problem, case_study, perturb_sensitivity
from climate import (ClimateFitError, ClimateModel, climate_from_settings, fit_climate, get_site,
                     read_climate_csv, synth_climate, write_climate_csv)
from farm_model import (CONVENTIONS, ControlParams, PowerConfig, evaluate_farm, natural_frequency,
                        power_matrix, q_factor)
from hydro_oracle import HydroSolveError, OracleSource
from mbe import compose_farm
from optimizer import (Design, GaConfig, NoFeasibleSolutionError, ProblemSpec, RefineConfig,
                       default_layout, optimize)
from settings import ConfigError, __version__, config_hash, load_settings, setup_logging
from surrogate import (BundleChecksumError, BundleVersionError, QbcConfig, SurrogateSource,
                       TrainingDivergedError, load_bundle, save_bundle, train_bundle)
from validation import objective_validation, validate_surrogate
from wec_types import FarmLayout, FrequencyGrid, WecGeometry

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

COMMANDS = ["climate-fit", "synth-climate", "train", "validate-sm", "simulate", "optimize",
            "case-study", "perturb", "validate-objective"]
LAYOUT_COLUMNS = ["wec", "x_m", "y_m"]


class UsageError(Exception):
    pass


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def write_json(path: str, payload: Dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, default=_json_default)
        fh.write("\n")


def read_json(path: str) -> Dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"Cannot read {path}: {exc}") from exc


def layout_frame(layout: FarmLayout) -> pd.DataFrame:
    xy = layout.as_array()
    return pd.DataFrame({"wec": np.arange(1, layout.n_wec + 1), "x_m": xy[:, 0], "y_m": xy[:, 1]},
                        columns=LAYOUT_COLUMNS)


class RunContext:
    """Parsed arguments, merged settings and the artifact metadata of one command."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.command = args.command
        self.settings = load_settings(args.config)
        self.seed = args.seed
        self.out = args.out
        try:
            os.makedirs(self.out, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"Cannot create output directory {self.out}: {exc}") from exc
        if not os.access(self.out, os.W_OK):
            raise UsageError(f"Output directory {self.out} is not writable")
        self.grid = FrequencyGrid.from_settings(self.settings)
        self.n_jobs = getattr(args, "jobs", None)

    def seed_for(self, section: str) -> int:
        return self.seed if self.seed is not None else self.settings["seeds"][section]

    def meta(self, seed: Optional[int] = None) -> Dict:
        return {
            "version": __version__,
            "config_hash": config_hash(self.settings),
            "seed": seed,
            "backend": self.settings["hydro"]["backend"],
            "command": self.command,
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def write_meta(self, name: str, seed: Optional[int]):
        """Sidecar `<name>.meta.json` carrying the run metadata of a CSV artifact."""
        write_json(self.path(f"{name}.meta.json"), self.meta(seed))

    def write_csv(self, frame: pd.DataFrame, name: str, seed: Optional[int]):
        frame.to_csv(self.path(name), index=False)
        self.write_meta(name, seed)

    def climate(self) -> ClimateModel:
        if getattr(self.args, "climate_model", None):
            return ClimateModel.from_json(self.args.climate_model)
        return climate_from_settings(self.settings, self.seed_for("climate"))

    def oracle(self) -> OracleSource:
        return OracleSource.from_settings(self.settings)

    def bundle_path(self) -> Optional[str]:
        return getattr(self.args, "bundle", None) or self.settings["surrogate"]["bundle_path"]

    def sources(self, require_surrogate: bool = False) -> Dict[str, object]:
        path = self.bundle_path()
        if not path and require_surrogate:
            raise UsageError("This command needs a surrogate bundle (--bundle)")
        surrogate = SurrogateSource(load_bundle(path)) if path else None
        if surrogate is None and self.settings["problem"]["evaluator"] == "surrogate":
            logger.warning("No surrogate bundle configured; using the oracle for every stage")
        return {"oracle": self.oracle(), "surrogate": surrogate}


def cmd_synth_climate(ctx: RunContext) -> int:
    cfg = ctx.settings["climate"]
    seed = ctx.seed_for("climate")
    samples = synth_climate(get_site(cfg["site"]), cfg["years"], cfg["samples_per_year"], seed,
                            hs_box=tuple(cfg["hs_box"]), tp_box=tuple(cfg["tp_box"]))
    write_climate_csv(samples, ctx.path("climate_samples.csv"))
    ctx.write_meta("climate_samples.csv", seed)
    print(f"Wrote {len(samples)} sea states for site {cfg['site']} ({cfg['years']} years)")
    return EXIT_OK


def cmd_climate_fit(ctx: RunContext) -> int:
    cfg = ctx.settings["climate"]
    seed = ctx.seed_for("climate")
    path = ctx.args.samples or cfg["path"]
    if path:
        samples = read_climate_csv(path)
    else:
        samples = synth_climate(get_site(cfg["site"]), cfg["years"], cfg["samples_per_year"], seed,
                                hs_box=tuple(cfg["hs_box"]), tp_box=tuple(cfg["tp_box"]))
    climate = fit_climate(samples, cfg["n_gq"], hs_box=tuple(cfg["hs_box"]),
                          tp_box=tuple(cfg["tp_box"]))
    climate.to_json(ctx.path("climate_model.json"), meta=ctx.meta(seed))
    print(f"Fitted climate: {climate.n_years} years on a {len(climate.hs_nodes)}x"
          f"{len(climate.tp_nodes)} grid")
    return EXIT_OK


def _qbc_configs(settings: Dict) -> Dict[str, QbcConfig]:
    return {kind: QbcConfig.from_settings(settings, kind) for kind in ("one_body", "two_body")}


def cmd_train(ctx: RunContext) -> int:
    seed = ctx.seed_for("surrogate")
    configs = _qbc_configs(ctx.settings)
    bundle = train_bundle(ctx.oracle(), ctx.grid, configs["one_body"], configs["two_body"], seed,
                          ctx.n_jobs)
    save_bundle(bundle, ctx.path("surrogate_bundle.json"), meta=ctx.meta(seed))
    for qoi, committee in bundle.committees.items():
        ctx.write_csv(committee.history_frame(), f"training_log_{qoi}.csv", seed)
        last = committee.history[-1] if committee.history else {}
        print(f"{qoi:>7}: {len(committee.history) - 1} rounds, {last.get('n_samples', 0)} samples, "
              f"pool variance {last.get('pool_var', float('nan')):.3e}")
    return EXIT_OK


def cmd_validate_sm(ctx: RunContext) -> int:
    path = ctx.bundle_path()
    if not path:
        raise UsageError("validate-sm needs a surrogate bundle (--bundle)")
    bundle = load_bundle(path)
    seed = ctx.seed_for("surrogate")
    val = ctx.settings["validation"]
    report, maps = validate_surrogate(bundle, ctx.oracle(), _qbc_configs(ctx.settings),
                                      val["n_grid"], seed, val["mean_mse_max"], val["worst_mse_max"])
    report["meta"] = ctx.meta(seed)
    write_json(ctx.path("validation_sm.json"), report)
    for qoi, frame in maps.items():
        ctx.write_csv(frame, f"mse_map_{qoi}.csv", seed)
    for qoi, entry in report["qois"].items():
        status = "ok" if entry["passed"] else "FAIL"
        print(f"{qoi:>7}: mean MSE {entry['mean_mse']:.3e}, worst {entry['max_mse']:.3e} [{status}]")
    return EXIT_OK if report["passed"] else EXIT_FAILED


def _settings_design(settings: Dict) -> Design:
    problem = settings["problem"]
    n = problem["n_wec"]
    if problem["control_mode"] == "device":
        control = ControlParams.device([problem["k_pto"]] * n, [problem["b_pto"]] * n)
    else:
        control = ControlParams.farm(problem["k_pto"], problem["b_pto"])
    geometry = WecGeometry(problem["radius_m"], problem["slenderness"])
    if problem["layout"]:
        layout = FarmLayout.from_array(problem["layout"])
    else:
        layout = default_layout(n, max(50.0, 2.0 * geometry.radius + problem["safety_distance_m"]))
    return Design(geometry, control, layout)


def cmd_simulate(ctx: RunContext) -> int:
    climate = ctx.climate()
    seed = ctx.seed_for("climate")
    sources = ctx.sources()
    use_surrogate = ctx.settings["problem"]["evaluator"] == "surrogate" and sources["surrogate"]
    source = sources["surrogate"] if use_surrogate else sources["oracle"]
    design = _settings_design(ctx.settings)
    config = PowerConfig.from_settings(ctx.settings)
    performance = evaluate_farm(design.geometry, design.control, design.layout, climate, config,
                                source, ctx.grid)
    hydro = compose_farm(design.geometry, design.layout, source, ctx.grid)
    single = FarmLayout(((0.0, 0.0),))
    k, b = design.control.as_arrays(design.layout.n_wec)
    isolated = evaluate_farm(design.geometry, ControlParams.farm(k[0], b[0]), single, climate,
                             config, source, ctx.grid).p_a
    result = {
        "design": design.to_dict(),
        "source": source.name,
        "p_a_w": performance.p_a,
        "p_v": performance.p_v,
        "saturated_fraction": performance.saturated_fraction,
        "skipped_frequencies": performance.skipped_frequencies,
        "q_factor": q_factor(performance.p_a, isolated, design.layout.n_wec) if isolated else None,
        "natural_frequencies": [natural_frequency(design.geometry, design.control, hydro, p,
                                                  ctx.grid.rho, ctx.grid.g)
                                for p in range(design.layout.n_wec)],
        "conventions": CONVENTIONS,
        "meta": ctx.meta(seed),
    }
    write_json(ctx.path("simulation.json"), result)
    ctx.write_csv(power_matrix(performance.p_i, climate, config), "power_matrix.csv", seed)
    ctx.write_csv(hydro.to_frame(), "hydro_table.csv", seed)
    print(f"p_a = {performance.p_a / 1e3:.3f} kW, p_v = {performance.p_v:.3f} W/m^3 "
          f"({source.name})")
    return EXIT_OK


def _problem(ctx: RunContext, climate: ClimateModel) -> ProblemSpec:
    case = getattr(ctx.args, "case", None)
    if case:
        return case_problem(case, ctx.settings, climate, ctx.grid,
                            getattr(ctx.args, "variant", False))
    return ProblemSpec.from_settings(ctx.settings, climate, ctx.grid)


def cmd_optimize(ctx: RunContext) -> int:
    climate = ctx.climate()
    problem = _problem(ctx, climate)
    seed = ctx.seed_for("optimizer")
    result = optimize(problem, ctx.sources(), seed, GaConfig.from_settings(ctx.settings),
                      RefineConfig.from_settings(ctx.settings), ctx.n_jobs)
    write_json(ctx.path("optimization.json"), {"problem": problem.summary(),
                                               "result": result.to_dict(),
                                               "meta": ctx.meta(seed)})
    ctx.write_csv(layout_frame(result.design.layout), "layout.csv", seed)
    print(f"Best p_v = {result.p_v:.4f} W/m^3 ({result.stage}, evaluations {result.n_evals})")
    return EXIT_OK


def cmd_case_study(ctx: RunContext) -> int:
    case = ctx.args.case
    seed = ctx.seed_for("optimizer")
    report, layout = case_study(case, ctx.settings, ctx.climate(), ctx.grid, ctx.sources(), seed,
                                ctx.args.variant, ctx.n_jobs)
    report["meta"] = ctx.meta(seed)
    write_json(ctx.path(f"case_study_{case}.json"), report)
    ctx.write_csv(layout_frame(layout), f"layout_{case}.csv", seed)
    for run in report["runs"]:
        extra = f", q = {run['q_factor']:.3f}" if "q_factor" in run else ""
        print(f"Case {case}: p_lim = {run['p_lim_w']} W, p_v = {run['p_v']:.4f} W/m^3{extra}")
    return EXIT_OK


def cmd_perturb(ctx: RunContext) -> int:
    payload = read_json(ctx.args.result)
    try:
        design = Design.from_dict(payload["result"]["design"])
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{ctx.args.result} holds no optimized design") from exc
    val = ctx.settings["validation"]
    climate = ctx.climate()
    p = ctx.settings["problem"]
    problem = ProblemSpec(n_wec=design.layout.n_wec, climate=climate, grid=ctx.grid,
                          power=PowerConfig.from_settings(ctx.settings), control_mode="frozen",
                          free_plant=False, free_layout=False,
                          safety_distance=p["safety_distance_m"], evaluator="oracle",
                          geometry=design.geometry, control=design.control,
                          layout=design.layout.pinned())
    radius = ctx.args.radius if ctx.args.radius is not None else val["perturb_radius_m"]
    n = ctx.args.samples if ctx.args.samples is not None else val["perturb_samples"]
    seed = ctx.seed_for("optimizer")
    frame = perturb_sensitivity(design, problem, ctx.args.wec - 1, radius, n, seed, ctx.oracle(),
                                ctx.n_jobs)
    ctx.write_csv(frame, "perturbation.csv", seed)
    print(f"Perturbed WEC {ctx.args.wec}: {int(frame['feasible'].sum())}/{n} feasible samples")
    return EXIT_OK


def cmd_validate_objective(ctx: RunContext) -> int:
    climate = ctx.climate()
    sources = ctx.sources(require_surrogate=True)
    p = ctx.settings["problem"]
    problem = ProblemSpec(n_wec=p["n_wec"], climate=climate, grid=ctx.grid,
                          power=PowerConfig.from_settings(ctx.settings), control_mode="farm",
                          safety_distance=p["safety_distance_m"])
    n = ctx.args.n if ctx.args.n is not None else ctx.settings["validation"]["n_objective"]
    seed = ctx.seed_for("optimizer")
    report, hist, scatter = objective_validation(sources["surrogate"], sources["oracle"], problem,
                                                 n, seed, n_jobs=ctx.n_jobs)
    report["meta"] = ctx.meta(seed)
    write_json(ctx.path("objective_validation.json"), report)
    ctx.write_csv(hist, "objective_hist.csv", seed)
    ctx.write_csv(scatter, "objective_scatter.csv", seed)
    if n:
        print(f"99th-percentile |p_v error| = {report['p99_abs_error']:.4g} W/m^3 "
              f"(bound {report['bound']:.4g})")
    return EXIT_OK if report["passed"] else EXIT_FAILED


HANDLERS = {
    "synth-climate": cmd_synth_climate,
    "climate-fit": cmd_climate_fit,
    "train": cmd_train,
    "validate-sm": cmd_validate_sm,
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "case-study": cmd_case_study,
    "perturb": cmd_perturb,
    "validate-objective": cmd_validate_objective,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config merged over the defaults in settings.py")
    common.add_argument("--out", default="results", help="output directory (default: results)")
    common.add_argument("--seed", type=int, default=None, help="overrides the configured seeds")
    common.add_argument("--jobs", type=int, default=None,
                        help="parallel workers (default: WECFARM_THREADS or all cores)")
    common.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for INFO, -vv for DEBUG logging")

    parser = argparse.ArgumentParser(
        prog="cli_io.py",
        description="Concurrent plant, control and layout optimization of WEC farms.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    sub.add_parser("synth-climate", parents=[common], help="write synthetic sea-state samples")
    p = sub.add_parser("climate-fit", parents=[common], help="fit the probabilistic climate model")
    p.add_argument("--samples", help="CSV with year,hs_m,tp_s (default: climate.path or synthetic)")

    sub.add_parser("train", parents=[common], help="train surrogate committees by QBC")
    p = sub.add_parser("validate-sm", parents=[common], help="surrogate MSE on a held-out grid")
    p.add_argument("--bundle", help="surrogate bundle JSON")

    for name, text in (("simulate", "evaluate the configured design"),
                       ("optimize", "optimize plant, control and layout")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--bundle", help="surrogate bundle JSON")
        p.add_argument("--climate-model", help="fitted climate JSON (default: fit from settings)")
        if name == "optimize":
            p.add_argument("--case", choices=list(CASE_PRESETS), help="use a case-study problem")
            p.add_argument("--variant", action="store_true", help="case-study variant settings")

    p = sub.add_parser("case-study", parents=[common], help="run a case study")
    p.add_argument("--case", required=True, choices=list(CASE_PRESETS))
    p.add_argument("--variant", action="store_true")
    p.add_argument("--bundle", help="surrogate bundle JSON")
    p.add_argument("--climate-model", help="fitted climate JSON")

    p = sub.add_parser("perturb", parents=[common], help="layout sensitivity of one WEC")
    p.add_argument("--result", required=True, help="optimization.json with the design")
    p.add_argument("--wec", type=int, required=True, help="1-based WEC index")
    p.add_argument("--radius", type=float, default=None, help="perturbation radius in m")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--climate-model", help="fitted climate JSON")

    p = sub.add_parser("validate-objective", parents=[common],
                       help="surrogate vs oracle objective error")
    p.add_argument("--bundle", help="surrogate bundle JSON")
    p.add_argument("--n", type=int, default=None, help="number of random designs")
    p.add_argument("--climate-model", help="fitted climate JSON")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    setup_logging(args.verbose)
    try:
        ctx = RunContext(args)
        return HANDLERS[args.command](ctx)
    except (ConfigError, UsageError, BundleVersionError, BundleChecksumError,
            FileNotFoundError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NoFeasibleSolutionError, ClimateFitError, HydroSolveError, TrainingDivergedError,
            ValueError) as exc:
        print(f"Failed: {exc}", file=sys.stderr)
        logger.debug("Command %s failed", args.command, exc_info=True)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
