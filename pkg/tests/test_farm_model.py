import numpy as np
import pytest

from climate import jonswap
from conftest import single_node_climate
from farm_model import (POWER_MATRIX_COLUMNS, SPECTRAL_AMPLITUDE_WEIGHT, ControlParams,
                        PowerConfig, SingularSystemWarning, assemble_impedance, assemble_system,
                        body_mass, evaluate_farm, expected_power, hydrostatic_stiffness,
                        mechanical_power, natural_frequency, objective_pv, power_matrix,
                        q_factor, response, sea_state_power, spectral_power)
from mbe import compose_farm
from wec_types import FarmLayout, FrequencyGrid, HydroTable, WecGeometry

GEOM = WecGeometry(2.0, 2.0)
LAYOUT = FarmLayout(((0.0, 0.0), (30.0, 12.0), (-8.0, 45.0)))


def _empty_table(omega, n=1, excitation=1.0):
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    zeros = np.zeros((len(omega), n, n))
    fe = np.full((len(omega), n), excitation, dtype=complex)
    return HydroTable(omega, zeros, zeros.copy(), fe)


def test_control_params_validation():
    with pytest.raises(ValueError):
        ControlParams("plant", (0.0,), (1.0,))
    with pytest.raises(ValueError):
        ControlParams.farm(0.0, -1.0)
    with pytest.raises(ValueError):
        ControlParams("farm", (0.0, 1.0), (1.0, 1.0))
    with pytest.raises(ValueError):
        ControlParams.device([0.0, 1.0], [1.0])
    assert not ControlParams.farm(6e5, 1e4).within_bounds()
    k, b = ControlParams.farm(-1e4, 2e4).as_arrays(3)
    np.testing.assert_array_equal(k, [-1e4] * 3)
    np.testing.assert_array_equal(b, [2e4] * 3)
    with pytest.raises(ValueError):
        ControlParams.device([0.0, 0.0], [1.0, 1.0]).as_arrays(3)


def test_power_config_validation():
    assert PowerConfig().efficiency == pytest.approx(0.7448, rel=1e-14)
    with pytest.raises(ValueError):
        PowerConfig(eta_pcc=0.0)
    with pytest.raises(ValueError):
        PowerConfig(eta_t=1.1)
    with pytest.raises(ValueError):
        PowerConfig(p_lim=0.0)


def test_resonance_transfer_magnitude():
    omega, b_pto = 1.0, 1.0e4
    rho, g = 1025.0, 9.81
    mass = body_mass(GEOM, rho)
    k_pto = omega ** 2 * mass - hydrostatic_stiffness(GEOM, rho, g)
    control = ControlParams.farm(k_pto, b_pto)
    assert control.within_bounds()
    h = assemble_system(np.zeros((1, 1)), np.zeros((1, 1)), GEOM, control, omega, rho, g)
    assert abs(h[0, 0]) == pytest.approx(1.0 / (omega * b_pto), rel=1e-9)


def test_two_body_inverse_matches_closed_form():
    rng = np.random.default_rng(2)
    a = rng.uniform(1e3, 5e4, (2, 2))
    a = a + a.T
    b = rng.uniform(0.0, 1e4, (2, 2))
    b = b + b.T
    control = ControlParams.device([-2e4, 3e4], [1e4, 4e4])
    omega, rho, g = 0.8, 1025.0, 9.81
    mass = body_mass(GEOM, rho)
    stiffness = hydrostatic_stiffness(GEOM, rho, g)
    z = (-omega ** 2 * (mass * np.eye(2) + a) + stiffness * np.eye(2)
         + np.diag([-2e4, 3e4]) + 1j * omega * (b + np.diag([1e4, 4e4])))
    det = z[0, 0] * z[1, 1] - z[0, 1] * z[1, 0]
    closed = np.array([[z[1, 1], -z[0, 1]], [-z[1, 0], z[0, 0]]]) / det
    h = assemble_system(a, b, GEOM, control, omega, rho, g)
    np.testing.assert_allclose(h, closed, rtol=1e-12, atol=1e-12 * np.abs(closed).max())


def test_transfer_matrix_symmetric():
    rng = np.random.default_rng(4)
    a = rng.uniform(0, 1e4, (3, 3))
    b = rng.uniform(0, 1e4, (3, 3))
    control = ControlParams.device([0.0, 1e4, -1e4], [1e4, 2e4, 3e4])
    h = assemble_system(a + a.T, b + b.T, GEOM, control, 1.1)
    np.testing.assert_allclose(h, h.T, rtol=1e-12, atol=1e-12 * np.abs(h).max())


def test_impedance_stack_matches_single_frequency():
    table = _empty_table([0.5, 1.0, 1.5], n=2)
    control = ControlParams.farm(1e4, 2e4)
    stack = assemble_impedance(table.added_mass, table.damping, GEOM, control, table.omega)
    single = assemble_impedance(table.added_mass[1], table.damping[1], GEOM, control, 1.0)
    np.testing.assert_array_equal(stack[1], single)


def test_singular_frequency_skipped():
    geom = WecGeometry(2.0, 2.0)
    table = _empty_table([1.0, 2.0])
    control = ControlParams.farm(0.0, 0.0)
    # rho = g = 1 and D = 1 make M = G, so omega = 1 is an exact undamped resonance
    with pytest.warns(SingularSystemWarning):
        xi, skipped = response(table, geom, control, rho=1.0, g=1.0)
    assert skipped == [1.0]
    assert xi[0, 0] == 0
    assert np.isfinite(xi[1, 0]) and xi[1, 0] != 0


def test_zero_pto_damping_absorbs_nothing(coarse_grid, toy_source):
    hydro = compose_farm(GEOM, LAYOUT, toy_source, coarse_grid)
    control = ControlParams.farm(1e4, 0.0)
    assert sea_state_power(GEOM, control, hydro, 2.0, 8.0, PowerConfig()) == 0.0


def test_response_finite_with_positive_damping(coarse_grid, toy_source):
    hydro = compose_farm(GEOM, LAYOUT, toy_source, coarse_grid)
    xi, skipped = response(hydro, GEOM, ControlParams.farm(-5e4, 1.0))
    assert skipped == []
    assert np.all(np.isfinite(xi))


def test_saturation_clamp():
    p_m = np.array([60000.0])
    p_i = spectral_power(p_m, np.array([1.0]), np.array([1.0]), PowerConfig(p_lim=1.0e5))
    assert p_i == pytest.approx(1.0e5)
    unclamped = spectral_power(p_m, np.array([1.0]), np.array([1.0]), PowerConfig())
    assert unclamped == pytest.approx(1.2e5)


def test_single_frequency_hand_quadrature():
    omega, d_omega = 0.9, 0.05
    table = _empty_table(omega, excitation=2.0e4)
    control = ControlParams.farm(0.0, 3.0e4)
    p_m, _ = mechanical_power(table, GEOM, control)
    p_i = sea_state_power(GEOM, control, table, 2.5, 9.0, PowerConfig(), d_omega=[d_omega])
    expected = SPECTRAL_AMPLITUDE_WEIGHT * d_omega * float(jonswap(2.5, 9.0, omega)) * p_m[0]
    assert p_i == pytest.approx(expected, rel=1e-14)
    grid_width = sea_state_power(GEOM, control, table, 2.5, 9.0, PowerConfig())
    assert grid_width == pytest.approx(expected / d_omega, rel=1e-14)


def test_efficiency_ratio(coarse_grid, toy_source, tiny_climate):
    control = ControlParams.farm(-1e4, 5e4)
    default = evaluate_farm(GEOM, control, LAYOUT, tiny_climate, PowerConfig(), toy_source,
                            coarse_grid)
    lossless = evaluate_farm(GEOM, control, LAYOUT, tiny_climate, PowerConfig(1.0, 1.0, 1.0),
                             toy_source, coarse_grid)
    assert default.p_a / lossless.p_a == pytest.approx(0.8 * 0.95 * 0.98, rel=1e-14)


def test_single_node_expected_power():
    climate = single_node_climate()
    p_i = np.array([[1234.5]])
    assert expected_power(p_i, climate, PowerConfig()) == pytest.approx(0.7448 * 1234.5, rel=1e-14)


def test_renormalization_leaves_power_unchanged(uniform_climate):
    p_i = np.arange(1.0, 10.0).reshape(3, 3) * 1e3
    config = PowerConfig()
    base = expected_power(p_i, uniform_climate, config)
    doubled = expected_power(p_i, uniform_climate.scaled(2.0).renormalized(), config)
    assert doubled == pytest.approx(base, rel=1e-14)


def test_objective_pv():
    geom = WecGeometry(2.0, 2.0)
    assert objective_pv(4 * np.pi, geom) == pytest.approx(1.0, rel=1e-15)
    assert objective_pv(0.0, geom) == 0.0
    assert objective_pv(12 * np.pi, geom) == pytest.approx(3 * objective_pv(4 * np.pi, geom))


def test_q_factor():
    assert q_factor(5.0, 5.0, 1) == 1.0
    assert q_factor(9.0, 2.0, 4) == pytest.approx(1.125)
    with pytest.raises(ZeroDivisionError):
        q_factor(1.0, 0.0, 3)


def test_q_factor_tends_to_one_when_far_apart(coarse_grid, toy_source, tiny_climate):
    control = ControlParams.farm(-1e4, 5e4)
    config = PowerConfig()
    alone = evaluate_farm(GEOM, control, FarmLayout(((0.0, 0.0),)), tiny_climate, config,
                          toy_source, coarse_grid)
    far = FarmLayout(((0.0, 0.0), (1.0e7, 0.0)))
    pair = evaluate_farm(GEOM, control, far, tiny_climate, config, toy_source, coarse_grid)
    assert q_factor(pair.p_a, alone.p_a, 2) == pytest.approx(1.0, abs=0.01)


def test_power_nonnegative_and_saturation_never_increases(coarse_grid, toy_source, tiny_climate):
    control = ControlParams.farm(-2e4, 8e4)
    free = evaluate_farm(GEOM, control, LAYOUT, tiny_climate, PowerConfig(), toy_source,
                         coarse_grid)
    limit = float(np.median(free.p_i))
    capped = evaluate_farm(GEOM, control, LAYOUT, tiny_climate, PowerConfig(p_lim=limit),
                           toy_source, coarse_grid)
    assert np.all(free.p_i >= 0)
    assert np.all(capped.p_i <= free.p_i)
    assert capped.p_i.max() <= limit
    assert 0.0 < capped.saturated_fraction <= 1.0
    assert free.saturated_fraction == 0.0
    assert capped.p_a <= free.p_a


def test_translation_and_reflection_invariance(coarse_grid, toy_source, tiny_climate):
    control = ControlParams.farm(-1e4, 5e4)
    config = PowerConfig()
    base = evaluate_farm(GEOM, control, LAYOUT, tiny_climate, config, toy_source, coarse_grid)
    for moved in (LAYOUT.translated(173.0, -61.0), LAYOUT.reflected()):
        other = evaluate_farm(GEOM, control, moved, tiny_climate, config, toy_source, coarse_grid)
        assert other.p_v == pytest.approx(base.p_v, rel=1e-10)


def test_evaluation_is_deterministic(coarse_grid, reference_source, tiny_climate):
    control = ControlParams.farm(-1e4, 5e4)
    runs = [evaluate_farm(GEOM, control, LAYOUT, tiny_climate, PowerConfig(), reference_source,
                          coarse_grid) for _ in range(2)]
    assert runs[0].p_v == runs[1].p_v
    assert np.array_equal(runs[0].p_i, runs[1].p_i)


def test_equal_device_control_matches_farm_control(coarse_grid, toy_source, tiny_climate):
    farm = ControlParams.farm(-1.5e4, 6e4)
    device = ControlParams.device([-1.5e4] * 3, [6e4] * 3)
    a = evaluate_farm(GEOM, farm, LAYOUT, tiny_climate, PowerConfig(), toy_source, coarse_grid)
    b = evaluate_farm(GEOM, device, LAYOUT, tiny_climate, PowerConfig(), toy_source, coarse_grid)
    assert a.p_v == b.p_v
    assert np.array_equal(a.p_i, b.p_i)


def test_natural_frequency_without_added_mass():
    table = _empty_table([0.5, 1.0, 2.0])
    control = ControlParams.farm(2e4, 1e4)
    expected = np.sqrt((2e4 + hydrostatic_stiffness(GEOM, 1025.0, 9.81)) / body_mass(GEOM, 1025.0))
    assert natural_frequency(GEOM, control, table) == pytest.approx(expected, rel=1e-12)


def test_natural_frequency_no_real_root():
    table = _empty_table([0.5, 1.0])
    control = ControlParams.farm(-5e5, 1e4)
    assert hydrostatic_stiffness(GEOM, 1025.0, 9.81) < 5e5
    assert natural_frequency(GEOM, control, table) is None


def test_natural_frequency_fixed_point(coarse_grid, toy_source):
    hydro = compose_farm(GEOM, LAYOUT, toy_source, coarse_grid)
    mass = body_mass(GEOM, 1025.0)
    stiffness = hydrostatic_stiffness(GEOM, 1025.0, 9.81)
    previous = 0.0
    for k_pto in (-5e4, 0.0, 5e4, 2e5):
        w = natural_frequency(GEOM, ControlParams.farm(k_pto, 1e4), hydro, device=1)
        a_ii = np.interp(w, hydro.omega, hydro.added_mass[:, 1, 1])
        assert w == pytest.approx(np.sqrt((k_pto + stiffness) / (mass + a_ii)), rel=1e-7)
        assert w > previous
        previous = w


def test_power_matrix_layout(uniform_climate):
    p_i = np.arange(9, dtype=float).reshape(3, 3)
    frame = power_matrix(p_i, uniform_climate, PowerConfig(p_lim=6.0))
    assert list(frame.columns) == POWER_MATRIX_COLUMNS
    assert len(frame) == 2 * 9
    assert sorted(frame["year"].unique()) == [1, 2]
    assert frame["saturated"].sum() == 2 * 3
    hs, _ = uniform_climate.sea_states()
    np.testing.assert_array_equal(frame["hs"].to_numpy()[:9], hs.ravel())
    assert not power_matrix(p_i, uniform_climate, PowerConfig())["saturated"].any()


def test_single_frequency_grid_bin_width():
    grid = FrequencyGrid((1.0,), bin_width=0.2)
    np.testing.assert_array_equal(grid.bin_widths(), [0.2])
