"""
Frequency-domain response and power of a WEC farm.

Each device is a heaving cylinder with a linear spring-damper PTO. For every
frequency the farm solves

    [-omega^2 (M + A) + G + K_pto + i omega (B + B_pto)] xi = Fe

and the absorbed power is weighted by the sea-state spectrum and the
climate's probability masses.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from climate import ClimateModel, jonswap
from mbe import compose_farm
from wec_types import FarmLayout, FrequencyGrid, HydroTable, WecGeometry

logger = logging.getLogger(__name__)

K_PTO_BOUNDS = (-5.0e5, 5.0e5)
B_PTO_BOUNDS = (0.0, 5.0e5)

# p_m is computed per unit wave amplitude; a spectral band of width dw holds
# amplitude^2 = 2 S dw
SPECTRAL_AMPLITUDE_WEIGHT = 2.0

POWER_MATRIX_COLUMNS = ["hs", "tp", "year", "p_i_watts", "saturated"]

CONVENTIONS = {
    "time_dependence": "exp(+i omega t)",
    "impedance": "-omega^2 (M + A) + G + K_pto + i omega (B + B_pto)",
    "spectral_amplitude_weight": SPECTRAL_AMPLITUDE_WEIGHT,
    "power_limit": "farm-level clamp per sea state",
    "climate_renormalized": True,
}

_conventions_logged = False


class SingularSystemWarning(RuntimeWarning):
    """A frequency was skipped because the impedance matrix is singular."""


@dataclass(frozen=True)
class ControlParams:
    """PTO stiffness (N/m) and damping (N s/m) per device."""
    mode: str
    k_pto: tuple
    b_pto: tuple

    def __post_init__(self):
        if self.mode not in ("farm", "device"):
            raise ValueError(f"Unknown control mode: {self.mode}. Must be 'farm' or 'device'")
        object.__setattr__(self, "k_pto", tuple(float(v) for v in np.atleast_1d(self.k_pto)))
        object.__setattr__(self, "b_pto", tuple(float(v) for v in np.atleast_1d(self.b_pto)))
        if len(self.k_pto) != len(self.b_pto):
            raise ValueError("k_pto and b_pto need the same number of entries")
        if self.mode == "farm" and len(self.k_pto) != 1:
            raise ValueError("Farm-level control takes a single k_pto and b_pto")
        if any(b < 0 for b in self.b_pto):
            raise ValueError(f"PTO damping must be nonnegative, got {self.b_pto}")

    @classmethod
    def farm(cls, k_pto: float, b_pto: float) -> "ControlParams":
        return cls("farm", (k_pto,), (b_pto,))

    @classmethod
    def device(cls, k_pto: Sequence[float], b_pto: Sequence[float]) -> "ControlParams":
        return cls("device", tuple(k_pto), tuple(b_pto))

    def within_bounds(self, tol: float = 1e-9) -> bool:
        return (all(K_PTO_BOUNDS[0] - tol <= k <= K_PTO_BOUNDS[1] + tol for k in self.k_pto)
                and all(B_PTO_BOUNDS[0] - tol <= b <= B_PTO_BOUNDS[1] + tol for b in self.b_pto))

    def as_arrays(self, n_wec: int):
        """Per-device (k, b) arrays; farm-level values are broadcast."""
        if self.mode == "farm":
            return np.full(n_wec, self.k_pto[0]), np.full(n_wec, self.b_pto[0])
        if len(self.k_pto) != n_wec:
            raise ValueError(f"Device-level control has {len(self.k_pto)} entries for {n_wec} WECs")
        return np.array(self.k_pto), np.array(self.b_pto)


@dataclass(frozen=True)
class PowerConfig:
    eta_pcc: float = 0.8
    eta_oa: float = 0.95
    eta_t: float = 0.98
    p_lim: Optional[float] = None

    def __post_init__(self):
        for name in ("eta_pcc", "eta_oa", "eta_t"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        if self.p_lim is not None and not self.p_lim > 0:
            raise ValueError(f"p_lim must be positive, got {self.p_lim}")

    @property
    def efficiency(self) -> float:
        return self.eta_pcc * self.eta_oa * self.eta_t

    @classmethod
    def from_settings(cls, settings: Dict) -> "PowerConfig":
        power = settings["power"]
        return cls(power["eta_pcc"], power["eta_oa"], power["eta_t"], settings["problem"]["p_lim_w"])


@dataclass
class FarmPerformance:
    p_a: float
    p_v: float
    saturated_fraction: float
    p_i: np.ndarray = field(repr=False)
    skipped_frequencies: List[float] = field(default_factory=list)


def _log_conventions():
    global _conventions_logged
    if not _conventions_logged:
        logger.info("Power conventions: %s", CONVENTIONS)
        _conventions_logged = True


def body_mass(geom: WecGeometry, rho: float) -> float:
    """Neutrally buoyant cylinder: M = rho pi R^2 D."""
    return rho * geom.volume


def hydrostatic_stiffness(geom: WecGeometry, rho: float, g: float) -> float:
    return rho * g * geom.waterplane_area


def assemble_impedance(added_mass: np.ndarray, damping: np.ndarray, geom: WecGeometry,
                       control: ControlParams, omega, rho: float = 1025.0,
                       g: float = 9.81) -> np.ndarray:
    """Impedance Z(omega); accepts a single (N, N) frequency or a stack (n_w, N, N)."""
    added_mass = np.asarray(added_mass, dtype=float)
    damping = np.asarray(damping, dtype=float)
    n = added_mass.shape[-1]
    k_pto, b_pto = control.as_arrays(n)
    w = np.asarray(omega, dtype=float)[..., None, None]
    mass = body_mass(geom, rho) * np.eye(n)
    restoring = hydrostatic_stiffness(geom, rho, g) * np.eye(n) + np.diag(k_pto)
    return -w ** 2 * (mass + added_mass) + restoring + 1j * w * (damping + np.diag(b_pto))


def assemble_system(added_mass: np.ndarray, damping: np.ndarray, geom: WecGeometry,
                    control: ControlParams, omega: float, rho: float = 1025.0,
                    g: float = 9.81) -> np.ndarray:
    """Transfer matrix H(omega) = Z(omega)^-1 for one frequency."""
    impedance = assemble_impedance(added_mass, damping, geom, control, omega, rho, g)
    return np.linalg.solve(impedance, np.eye(impedance.shape[-1], dtype=complex))


def response(hydro: HydroTable, geom: WecGeometry, control: ControlParams,
             rho: float = 1025.0, g: float = 9.81):
    """
    Heave amplitudes per unit wave amplitude for every frequency.

    Returns:
        (xi, skipped) where xi has shape (n_w, N) and singular frequencies are zero
    """
    impedance = assemble_impedance(hydro.added_mass, hydro.damping, geom, control,
                                   hydro.omega, rho, g)
    force = hydro.excitation[..., None]
    try:
        return np.linalg.solve(impedance, force)[..., 0], []
    except np.linalg.LinAlgError:
        pass
    xi = np.zeros(hydro.excitation.shape, dtype=complex)
    skipped = []
    for idx, w in enumerate(hydro.omega):
        try:
            xi[idx] = np.linalg.solve(impedance[idx], hydro.excitation[idx])
        except np.linalg.LinAlgError:
            skipped.append(float(w))
    if skipped:
        warnings.warn(f"Singular farm system at omega={skipped}; frequencies skipped",
                      SingularSystemWarning)
        logger.warning("Skipped %d singular frequencies", len(skipped))
    return xi, skipped


def mechanical_power(hydro: HydroTable, geom: WecGeometry, control: ControlParams,
                     rho: float = 1025.0, g: float = 9.81):
    """Farm absorbed power per unit wave amplitude squared, p_m(omega) in W/m^2."""
    xi, skipped = response(hydro, geom, control, rho, g)
    _, b_pto = control.as_arrays(hydro.n_wec)
    p_m = 0.5 * hydro.omega ** 2 * (np.abs(xi) ** 2 @ b_pto)
    return p_m, skipped


def spectral_power(p_m: np.ndarray, spectrum: np.ndarray, d_omega: np.ndarray,
                   config: PowerConfig) -> np.ndarray:
    """
    Farm power p_i for one or many sea states.

    Args:
        p_m: Power per unit amplitude squared per frequency
        spectrum: JONSWAP densities, last axis over frequency
        d_omega: Frequency bin widths
        config: Saturation limit (p_lim) is applied to the farm-level value

    Returns:
        p_i in watts with the spectrum's leading shape
    """
    p_i = np.sum(SPECTRAL_AMPLITUDE_WEIGHT * spectrum * d_omega * p_m, axis=-1)
    if config.p_lim is not None:
        p_i = np.minimum(p_i, config.p_lim)
    return p_i


def sea_state_power(geom: WecGeometry, control: ControlParams, hydro: HydroTable, hs: float,
                    tp: float, config: PowerConfig, d_omega: Optional[np.ndarray] = None,
                    rho: float = 1025.0, g: float = 9.81) -> float:
    """Farm power p_i (W) in one sea state, clamped at p_lim when configured."""
    p_m, _ = mechanical_power(hydro, geom, control, rho, g)
    if d_omega is None:
        d_omega = FrequencyGrid(tuple(hydro.omega)).bin_widths()
    spectrum = jonswap(hs, tp, hydro.omega)
    return float(spectral_power(p_m, spectrum, np.asarray(d_omega), config))


def expected_power(p_i: np.ndarray, climate: ClimateModel, config: PowerConfig) -> float:
    """p_a = efficiency * sum over years and nodes of p_i * probability mass."""
    return float(config.efficiency * np.sum(climate.prob * p_i[None, :, :]))


def lifetime_power(geom: WecGeometry, control: ControlParams, layout: FarmLayout,
                   climate: ClimateModel, config: PowerConfig, source,
                   grid: FrequencyGrid) -> float:
    """Efficiency-weighted power summed over the climate's years and sea states."""
    return evaluate_farm(geom, control, layout, climate, config, source, grid).p_a


def objective_pv(p_a: float, geom: WecGeometry) -> float:
    """Average power per unit WEC volume, W/m^3."""
    return p_a / geom.volume


def q_factor(p_a_farm: float, p_a_isolated: float, n_wec: int) -> float:
    if p_a_isolated == 0:
        raise ZeroDivisionError("Isolated-device power is zero; q-factor undefined")
    return p_a_farm / (n_wec * p_a_isolated)


def natural_frequency(geom: WecGeometry, control: ControlParams, hydro: HydroTable,
                      device: int = 0, rho: float = 1025.0, g: float = 9.81,
                      relaxation: float = 0.5, tol: float = 1e-8,
                      max_iter: int = 1000) -> Optional[float]:
    """
    Undamped natural frequency of one device with the farm's added mass.

    Solves omega = sqrt((k_pto + G) / (M + A_ii(omega))) by damped fixed-point
    iteration, with A_ii interpolated on the table's grid (held constant
    outside it). Returns None when no real solution exists.
    """
    k_pto, _ = control.as_arrays(hydro.n_wec)
    stiffness = k_pto[device] + hydrostatic_stiffness(geom, rho, g)
    if stiffness <= 0:
        return None
    mass = body_mass(geom, rho)
    a_ii = hydro.added_mass[:, device, device]

    def update(w):
        inertia = mass + np.interp(w, hydro.omega, a_ii)
        if inertia <= 0:
            return None
        return np.sqrt(stiffness / inertia)

    current = update(float(np.sqrt(stiffness / mass)))
    if current is None:
        return None
    for _ in range(max_iter):
        target = update(current)
        if target is None:
            return None
        if abs(target - current) <= tol * max(1.0, current):
            return float(target)
        current = (1.0 - relaxation) * current + relaxation * target
    logger.warning("Natural frequency iteration did not converge for device %d", device + 1)
    return float(current)


def evaluate_farm(geom: WecGeometry, control: ControlParams, layout: FarmLayout,
                  climate: ClimateModel, config: PowerConfig, source,
                  grid: FrequencyGrid) -> FarmPerformance:
    """Compose the farm, solve the response and integrate power over the climate."""
    _log_conventions()
    hydro = compose_farm(geom, layout, source, grid)
    p_m, skipped = mechanical_power(hydro, geom, control, grid.rho, grid.g)
    spectrum = climate.spectral_density(grid.omega)
    p_i = spectral_power(p_m, spectrum, grid.bin_widths(), config)
    p_a = expected_power(p_i, climate, config)
    saturated = 0.0
    if config.p_lim is not None:
        saturated = float(np.mean(p_i >= config.p_lim))
    return FarmPerformance(p_a, objective_pv(p_a, geom), saturated, p_i, skipped)


def power_matrix(p_i: np.ndarray, climate: ClimateModel, config: PowerConfig) -> pd.DataFrame:
    """Per-sea-state power table: hs, tp, year, p_i_watts, saturated."""
    hs, tp = climate.sea_states()
    rows = []
    for year in climate.years:
        saturated = (np.zeros_like(p_i, dtype=bool) if config.p_lim is None
                     else p_i >= config.p_lim)
        rows.append(pd.DataFrame({
            "hs": hs.ravel(),
            "tp": tp.ravel(),
            "year": year,
            "p_i_watts": p_i.ravel(),
            "saturated": saturated.ravel(),
        }))
    return pd.concat(rows, ignore_index=True)[POWER_MATRIX_COLUMNS]
