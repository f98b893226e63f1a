import numpy as np
import pytest

from conftest import quick_config, single_node_climate
from hydro_oracle import Backend, OracleSource
from optimizer import ProblemSpec, constraints, is_feasible
from settings import DEFAULT_SETTINGS
from surrogate import (ONE_BODY_QOIS, TWO_BODY_QOIS, QbcConfig, SurrogateSource, admissible,
                       train_bundle)
from validation import (INPUT_COLUMNS, OBJECTIVE_BINS, held_out_grid, objective_validation,
                        random_designs, validate_surrogate)
from wec_types import DRAFT_BOUNDS, FrequencyGrid

QUICK_CONFIGS = {"one_body": quick_config("one_body"), "two_body": quick_config("two_body")}


def _kind(qoi):
    return "one_body" if qoi in ONE_BODY_QOIS else "two_body"


def test_held_out_grid():
    config = quick_config("two_body")
    grid = held_out_grid(config, 50, seed=3)
    assert grid.shape == (50, 4)
    assert np.all(admissible(grid, config))
    assert np.array_equal(grid, held_out_grid(config, 50, seed=3))


def test_validate_surrogate_report(toy_bundle, toy_source):
    report, maps = validate_surrogate(toy_bundle, toy_source, QUICK_CONFIGS, n_grid=20, seed=0,
                                      mean_mse_max=1e9, worst_mse_max=1e9)
    assert set(report["qois"]) == set(ONE_BODY_QOIS + TWO_BODY_QOIS)
    assert report["passed"]
    for qoi, entry in report["qois"].items():
        assert entry["n_points"] == 20
        assert 0.0 <= entry["mean_mse"] <= entry["max_mse"]
        assert list(maps[qoi].columns) == INPUT_COLUMNS[_kind(qoi)] + ["mse"]
        assert maps[qoi]["mse"].mean() == pytest.approx(entry["mean_mse"])


def test_validate_surrogate_thresholds(toy_bundle, toy_source):
    report, _ = validate_surrogate(toy_bundle, toy_source, QUICK_CONFIGS, n_grid=10, seed=1,
                                   mean_mse_max=0.0, worst_mse_max=0.0)
    assert not report["passed"]
    assert not any(e["passed"] for e in report["qois"].values())


def test_random_designs(small_grid):
    problem = ProblemSpec(4, single_node_climate(), small_grid, control_mode="device")
    X = random_designs(problem, 15, seed=2)
    assert X.shape == (15, problem.n_vars)
    assert np.array_equal(X, random_designs(problem, 15, seed=2))
    for x in X:
        residuals = problem.residuals(x)
        assert is_feasible(residuals)
        assert DRAFT_BOUNDS[0] <= x[0] / x[1] <= DRAFT_BOUNDS[1]


def test_random_designs_with_frozen_plant(small_grid):
    problem = ProblemSpec(3, single_node_climate(), small_grid, control_mode="frozen",
                          free_plant=False)
    X = random_designs(problem, 5, seed=0)
    assert X.shape == (5, 4)
    for x in X:
        xy = np.vstack([[0.0, 0.0], x.reshape(-1, 2)])
        assert is_feasible(constraints(xy, problem.geometry.radius, 10.0, problem.half_width))


def test_objective_validation_outputs(toy_bundle, toy_source, small_grid):
    problem = ProblemSpec(2, single_node_climate(), small_grid)
    report, hist, scatter = objective_validation(SurrogateSource(toy_bundle), toy_source,
                                                 problem, n=8, seed=0, n_jobs=1)
    assert report["n"] == 8
    assert report["bound"] == pytest.approx(0.05 * report["interdecile_range"])
    assert report["passed"] == (report["p99_abs_error"] <= report["bound"])
    assert len(hist) == OBJECTIVE_BINS
    assert hist["count"].sum() == 8
    assert list(scatter.columns) == ["oracle_p_v", "surrogate_p_v", "abs_error"]
    np.testing.assert_allclose(scatter["abs_error"],
                               np.abs(scatter["surrogate_p_v"] - scatter["oracle_p_v"]))


def test_objective_validation_against_itself(toy_source, small_grid):
    problem = ProblemSpec(2, single_node_climate(), small_grid)
    report, _, scatter = objective_validation(toy_source, toy_source, problem, n=6, seed=1,
                                              n_jobs=1)
    assert report["p99_abs_error"] == 0.0
    assert report["passed"]
    assert np.all(scatter["abs_error"] == 0.0)


def test_objective_validation_empty(toy_source, small_grid):
    problem = ProblemSpec(2, single_node_climate(), small_grid)
    report, hist, scatter = objective_validation(toy_source, toy_source, problem, n=0, seed=0)
    assert report["passed"] and report["p99_abs_error"] is None
    assert hist.empty and scatter.empty


@pytest.mark.slow
def test_reference_surrogate_fidelity():
    grid = FrequencyGrid.uniform(20, 0.3, 2.0)
    oracle = OracleSource(Backend.REFERENCE, modes=20, exterior_modes=20)
    configs = {kind: QbcConfig.from_settings(DEFAULT_SETTINGS, kind)
               for kind in ("one_body", "two_body")}
    bundle = train_bundle(oracle, grid, configs["one_body"], configs["two_body"], seed=0)
    report, _ = validate_surrogate(bundle, oracle, configs, n_grid=500, seed=11)
    assert report["passed"], report["qois"]


@pytest.mark.slow
def test_objective_error_within_interdecile_bound(tiny_climate):
    grid = FrequencyGrid.uniform(20, 0.3, 2.0)
    oracle = OracleSource(Backend.REFERENCE, modes=20, exterior_modes=20)
    configs = {kind: QbcConfig.from_settings(DEFAULT_SETTINGS, kind)
               for kind in ("one_body", "two_body")}
    bundle = train_bundle(oracle, grid, configs["one_body"], configs["two_body"], seed=0)
    problem = ProblemSpec(5, tiny_climate, grid)
    report, _, scatter = objective_validation(SurrogateSource(bundle), oracle, problem, n=500,
                                              seed=3)
    assert len(scatter) == 500
    assert report["passed"]
