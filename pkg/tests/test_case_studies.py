import json
import warnings

import numpy as np
import pytest

from case_studies import (CASE_PRESETS, KW, case_problem, case_study, isolated_power,
                          natural_frequencies, percentile_of, perturb_sensitivity, plant_trend,
                          random_feasible_layout, random_layout_baseline)
from conftest import single_node_climate
from farm_model import evaluate_farm
from hydro_oracle import Backend, OracleSource
from optimizer import Design, constraints, farm_half_width, is_feasible
from settings import DEFAULT_SETTINGS, merge_settings
from surrogate import ExtrapolationWarning, QbcConfig, SurrogateSource
from wec_types import FarmLayout, WecGeometry

QUICK = {"ga": {"pop_size": 8, "n_gen": 2}, "refine": {"max_iter": 3, "max_evals": 20},
         "validation": {"n_random_layouts": 5}, "problem": {"evaluator": "oracle"}}


@pytest.fixture
def quick_settings():
    return merge_settings(QUICK)


@pytest.mark.parametrize("case_id, n_vars", [("I", 2), ("II", 8), ("III", 10), ("IV", 12),
                                             ("V", 20), ("VI", 52)])
def test_case_variable_sets(case_id, n_vars, quick_settings, small_grid):
    problem = case_problem(case_id, quick_settings, single_node_climate(), small_grid)
    assert problem.n_vars == n_vars
    assert problem.n_wec == CASE_PRESETS[case_id]["n_wec"]


def test_case_problem_presets(quick_settings, small_grid):
    climate = single_node_climate()
    study_two = case_problem("II", quick_settings, climate, small_grid)
    assert (study_two.geometry.radius, study_two.geometry.slenderness) == (2.0, 1.0)
    assert study_two.control.k_pto == (-5.0e3,) and study_two.control.b_pto == (5.0e5,)
    variant = case_problem("III", quick_settings, climate, small_grid, variant=True)
    assert variant.control.b_pto == (3.0e3,)
    assert variant.power.p_lim == 25 * KW
    swept = case_problem("I", quick_settings, climate, small_grid, p_lim=10 * KW)
    assert swept.power.p_lim == 10 * KW
    assert case_problem("VI", quick_settings, climate, small_grid).power.p_lim == 1e5 * KW


def test_case_problem_rejects(quick_settings, small_grid):
    with pytest.raises(ValueError):
        case_problem("VII", quick_settings, single_node_climate(), small_grid)
    with pytest.raises(ValueError):
        case_problem("I", quick_settings, single_node_climate(), small_grid, variant=True)


def test_random_feasible_layout():
    rng = np.random.default_rng(0)
    for _ in range(20):
        layout = random_feasible_layout(5, 3.0, 10.0, 158.114, rng)
        assert layout.centers[0] == (0.0, 0.0)
        assert is_feasible(constraints(layout, 3.0, 10.0, 158.114))
    a = random_feasible_layout(5, 2.0, 10.0, 158.114, np.random.default_rng(4))
    b = random_feasible_layout(5, 2.0, 10.0, 158.114, np.random.default_rng(4))
    assert a == b
    with pytest.raises(RuntimeError):
        random_feasible_layout(30, 5.0, 10.0, 20.0, np.random.default_rng(0), max_tries=50)


def test_percentile_of():
    assert percentile_of(3.0, [1.0, 2.0, 3.0, 4.0]) == 75.0
    assert percentile_of(0.0, [1.0, 2.0]) == 0.0
    assert percentile_of(10.0, [1.0, 2.0]) == 100.0
    assert np.isnan(percentile_of(1.0, []))


def _study_two(quick_settings, grid):
    problem = case_problem("II", quick_settings, single_node_climate(), grid)
    return problem, problem.initial_design()


def test_perturbation_radius_zero_reproduces_incumbent(quick_settings, small_grid, toy_source):
    problem, design = _study_two(quick_settings, small_grid)
    incumbent = evaluate_farm(design.geometry, design.control, design.layout, problem.climate,
                              problem.power, toy_source, small_grid).p_v
    table = perturb_sensitivity(design, problem, 2, 0.0, 4, seed=1, source=toy_source, n_jobs=1)
    assert list(table.columns) == ["dx", "dy", "p_v", "feasible"]
    assert table["feasible"].all()
    assert np.all(table["p_v"] == incumbent)


def test_perturbation_is_seeded_and_flags_infeasible(quick_settings, small_grid, toy_source):
    problem, design = _study_two(quick_settings, small_grid)
    a = perturb_sensitivity(design, problem, 1, 60.0, 12, seed=3, source=toy_source, n_jobs=1)
    b = perturb_sensitivity(design, problem, 1, 60.0, 12, seed=3, source=toy_source, n_jobs=1)
    assert a.equals(b)
    assert np.all(np.hypot(a["dx"], a["dy"]) <= 60.0)
    infeasible = ~a["feasible"]
    assert a.loc[infeasible, "p_v"].isna().all()
    assert a.loc[~infeasible, "p_v"].notna().all()
    with pytest.raises(ValueError):
        perturb_sensitivity(design, problem, 5, 10.0, 2, seed=0, source=toy_source)
    with pytest.raises(ValueError):
        perturb_sensitivity(design, problem, 0, -1.0, 2, seed=0, source=toy_source)


def test_random_layout_baseline(quick_settings, small_grid, toy_source):
    problem, design = _study_two(quick_settings, small_grid)
    values = random_layout_baseline(problem, design, 6, seed=2, source=toy_source, n_jobs=1)
    again = random_layout_baseline(problem, design, 6, seed=2, source=toy_source, n_jobs=1)
    assert values.shape == (6,)
    assert np.array_equal(values, again)
    assert np.all(values > 0)
    assert len(random_layout_baseline(problem, design, 0, 2, toy_source)) == 0


def test_isolated_power_and_frequencies(quick_settings, small_grid, toy_source):
    problem, design = _study_two(quick_settings, small_grid)
    single = evaluate_farm(design.geometry, design.control, FarmLayout(((0.0, 0.0),)),
                           problem.climate, problem.power, toy_source, small_grid).p_a
    assert isolated_power(design, problem, toy_source) == pytest.approx(single)
    frequencies = natural_frequencies(design, problem, toy_source)
    assert len(frequencies) == 5
    assert all(w is not None and w > 0 for w in frequencies)


def test_plant_trend():
    def run(limit, radius):
        return {"p_lim_w": limit, "p_v": radius * 10.0,
                "result": {"design": {"radius_m": radius, "slenderness": 1.0}}}

    trend = plant_trend([run(1e3, 1.0), run(1e4, 2.0), run(1e5, 4.0), run(1e6, 4.04)])
    assert trend["radius_nondecreasing"]
    assert trend["final_plateau_change"] == pytest.approx(0.01)
    assert not plant_trend([run(1e3, 2.0), run(1e4, 1.0)])["radius_nondecreasing"]


def test_case_study_two_report(quick_settings, small_grid, toy_source):
    sources = {"oracle": toy_source, "surrogate": None}
    report, layout = case_study("II", quick_settings, single_node_climate(), small_grid, sources,
                                seed=5, n_jobs=1)
    assert report["case"] == "II" and report["seed"] == 5
    assert len(report["runs"]) == 1
    run = report["runs"][0]
    assert run["result"]["feasible"]
    assert run["q_factor"] > 0
    assert 0.0 <= run["random_layout_percentile"] <= 100.0
    assert layout.n_wec == 5 and layout.centers[0] == (0.0, 0.0)
    json.dumps(report)


def test_case_study_one_sweep(quick_settings, small_grid, toy_source):
    sources = {"oracle": toy_source, "surrogate": None}
    report, _ = case_study("I", quick_settings, single_node_climate(), small_grid, sources,
                           seed=1, n_jobs=1)
    assert [r["p_lim_w"] for r in report["runs"]] == CASE_PRESETS["I"]["p_lim_sweep_w"]
    assert "q_factor" not in report["runs"][0]
    assert len(report["trend"]["radius_m"]) == 5


def test_case_study_four_reports_frequencies(quick_settings, small_grid, toy_source):
    sources = {"oracle": toy_source, "surrogate": None}
    report, _ = case_study("IV", quick_settings, single_node_climate(), small_grid, sources,
                           seed=2, n_jobs=1)
    assert len(report["runs"][0]["natural_frequencies"]) == 5
    assert report["problem"]["control_mode"] == "farm"


def test_case_study_unknown(quick_settings, small_grid, toy_source):
    with pytest.raises(ValueError):
        case_study("0", quick_settings, single_node_climate(), small_grid, {"oracle": toy_source},
                   seed=0)


@pytest.mark.slow
def test_radius_grows_with_power_limit(tiny_climate, coarse_grid):
    settings = merge_settings({"ga": {"pop_size": 40, "n_gen": 30},
                               "problem": {"evaluator": "oracle"}})
    sources = {"oracle": OracleSource(Backend.REFERENCE, modes=20, exterior_modes=20)}
    report, _ = case_study("I", settings, tiny_climate, coarse_grid, sources, seed=0)
    assert report["trend"]["radius_nondecreasing"]
    assert report["trend"]["final_plateau_change"] <= 0.02


@pytest.mark.slow
def test_hybrid_beats_random_layouts(tiny_climate, coarse_grid):
    settings = merge_settings({"problem": {"evaluator": "oracle"},
                               "validation": {"n_random_layouts": 500}})
    source = OracleSource(Backend.REFERENCE, modes=20, exterior_modes=20)
    report, _ = case_study("II", settings, tiny_climate, coarse_grid, {"oracle": source}, seed=0)
    assert report["runs"][0]["random_layout_percentile"] >= 90.0


@pytest.mark.slow
def test_converged_layout_is_locally_good(tiny_climate, coarse_grid):
    settings = merge_settings({"problem": {"evaluator": "oracle"}})
    source = OracleSource(Backend.REFERENCE, modes=20, exterior_modes=20)
    report, layout = case_study("II", settings, tiny_climate, coarse_grid, {"oracle": source},
                                seed=0)
    problem = case_problem("II", settings, tiny_climate, coarse_grid)
    design = Design(problem.geometry, problem.control, layout)
    table = perturb_sensitivity(design, problem, 1, 15.0, 200, seed=0, source=source)
    values = table["p_v"].dropna()
    assert percentile_of(report["runs"][0]["p_v"], values) >= 90.0


def test_two_body_range_spans_every_case_farm(toy_bundle, small_grid):
    configured = QbcConfig.from_settings(DEFAULT_SETTINGS, "two_body").distance_range
    widest = max(2.0 * np.sqrt(2.0) * farm_half_width(p["n_wec"]) for p in CASE_PRESETS.values())
    assert configured[1] >= widest
    source = SurrogateSource(toy_bundle)
    with warnings.catch_warnings():
        warnings.simplefilter("error", ExtrapolationWarning)
        source.pairs(WecGeometry(2.0, 1.0), [widest], [np.pi / 4], small_grid)
    assert source.extrapolations == 0
