"""
Hydrodynamic coefficients for heaving vertical cylinders.

Two interchangeable backends produce the same outputs:

- reference: eigenfunction matching for a truncated cylinder in water of
  finite depth (radiation and axisymmetric diffraction), with plane-wave
  Bessel interactions between pairs of bodies;
- toy: closed-form fixture values, cheap and smooth, meant for tests and
  quick pipeline runs. Its constants carry no physical meaning.

All outputs are normalized: Fe/(rho g pi R^2 D), A/(rho pi R^3) and
B/(omega rho pi R^3). Time dependence is exp(+i omega t) and the incident
wave travels along +x, so a body at x sees the phase exp(-i k x).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import hankel1, ive, j0, j1, kve, y0

from climate import wavenumbers
from mbe import denormalize, normalize, pair_features
from wec_types import FarmLayout, FrequencyGrid, HydroTable, WecGeometry

logger = logging.getLogger(__name__)

DEFAULT_MODES = 40
DEFAULT_EXTERIOR_MODES = 40
ONE_BODY_COLUMNS = ["omega", "a", "b", "fe_re", "fe_im"]
PAIR_COLUMNS = ["omega", "a11", "a12", "b11", "b12", "fe1_re", "fe1_im"]


class Backend(str, Enum):
    REFERENCE = "reference"
    TOY = "toy"


class HydroSolveError(RuntimeError):
    """Raised when the eigenfunction system cannot be solved."""


def _readonly(*arrays: np.ndarray):
    for arr in arrays:
        arr.setflags(write=False)


@dataclass(frozen=True)
class OneBodyOutputs:
    """
    Normalized isolated-body coefficients.

    sigma is the far-field scattering strength the oracle pair model needs; it is
    None when the coefficients come from a surrogate, which does not learn it.
    """
    omega: np.ndarray
    a: np.ndarray
    b: np.ndarray
    fe_re: np.ndarray
    fe_im: np.ndarray
    sigma: Optional[np.ndarray] = None

    @property
    def fe(self) -> np.ndarray:
        return self.fe_re + 1j * self.fe_im

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(dict(zip(ONE_BODY_COLUMNS,
                                     [self.omega, self.a, self.b, self.fe_re, self.fe_im])))


@dataclass(frozen=True)
class PairOutputs:
    """Normalized coefficients of body 1 (at the origin) in the presence of body 2."""
    omega: np.ndarray
    a11: np.ndarray
    a12: np.ndarray
    b11: np.ndarray
    b12: np.ndarray
    fe_re: np.ndarray
    fe_im: np.ndarray

    @property
    def fe(self) -> np.ndarray:
        return self.fe_re + 1j * self.fe_im

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(dict(zip(PAIR_COLUMNS, [self.omega, self.a11, self.a12, self.b11,
                                                    self.b12, self.fe_re, self.fe_im])))


def evanescent_wavenumbers(omega: float, h: float, g: float, n: int) -> np.ndarray:
    """First n roots of kappa tan(kappa h) = -omega^2/g, one per ((m-1/2) pi/h, m pi/h)."""
    nu = omega ** 2

    def residual(kappa):
        return nu * np.cos(kappa * h) + g * kappa * np.sin(kappa * h)

    roots = np.empty(n)
    for m in range(1, n + 1):
        lo = (m - 0.5) * np.pi / h
        hi = m * np.pi / h
        roots[m - 1] = brentq(residual, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    return roots


@lru_cache(maxsize=64)
def _grid_wavenumbers(grid: FrequencyGrid, n_ext: int) -> Tuple[np.ndarray, np.ndarray]:
    k = wavenumbers(grid.omega, grid.depth, grid.g)
    kappa = np.array([evanescent_wavenumbers(w, grid.depth, grid.g, n_ext) for w in grid.values])
    kappa = kappa.reshape(len(grid), n_ext)
    _readonly(kappa)
    return k, kappa


def _coupling(k: float, kappa: np.ndarray, lam: np.ndarray, b: float, h: float):
    """Projections L[m, n] of the normalized exterior modes on cos(lam_n u) over [0, b]."""
    sign = (-1.0) ** np.arange(len(lam))
    kh = k * h
    n0 = 0.5 * h * (1.0 + np.sinh(2 * kh) / (2 * kh))
    nm = 0.5 * h * (1.0 + np.sin(2 * kappa * h) / (2 * kappa * h))

    coupling = np.empty((1 + len(kappa), len(lam)))
    coupling[0] = sign * k * np.sinh(k * b) / (k ** 2 + lam ** 2) / np.sqrt(n0)

    kap = kappa[:, None]
    denom = kap ** 2 - lam[None, :] ** 2
    close = np.abs(denom) < 1e-10 * kap ** 2
    safe = np.where(close, 1.0, denom)
    inner = np.where(close, 0.5 * b, sign[None, :] * kap * np.sin(kap * b) / safe)
    coupling[1:] = inner / np.sqrt(nm)[:, None]
    return coupling, n0


def _cylinder_at_frequency(radius: float, draft: float, omega: float, k: float,
                           kappa: np.ndarray, grid: FrequencyGrid, n_int: int):
    """
    Solve radiation and m=0 diffraction for one frequency.

    Internally uses exp(-i omega t); returns dimensional added mass, damping,
    complex excitation (converted to exp(+i omega t)), diffracted far-field
    amplitude ratio and the Haskind excitation magnitude.
    """
    h, g, rho = grid.depth, grid.g, grid.rho
    a = radius
    b = h - draft
    if b <= 0:
        raise HydroSolveError(f"Draft {draft} m reaches the seabed at depth {h} m")

    lam = np.arange(n_int) * np.pi / b
    sign = (-1.0) ** np.arange(n_int)
    coupling, n0 = _coupling(k, kappa, lam, b, h)
    n_ext = coupling.shape[0]

    ka = k * a
    h0 = hankel1(0, ka)
    h1 = hankel1(1, ka)
    radial = np.empty(n_ext, dtype=complex)
    radial[0] = -k * h1 / h0
    radial[1:] = -kappa * kve(1, kappa * a) / kve(0, kappa * a)
    bessel_ratio = ive(1, lam[1:] * a) / ive(0, lam[1:] * a)

    size = n_ext + n_int
    system = np.zeros((size, size), dtype=complex)
    system[np.arange(n_ext), np.arange(n_ext)] = radial
    system[:n_ext, n_ext + 1:] = -(lam[1:] * bessel_ratio)[None, :] * coupling[:, 1:]
    system[n_ext:, :n_ext] = coupling.T
    scale = np.full(n_int, 0.5 * b)
    scale[0] = b
    system[n_ext + np.arange(n_int), n_ext + np.arange(n_int)] = -scale

    rhs = np.zeros((size, 2), dtype=complex)
    # heave radiation with unit velocity, particular solution ((u)^2 - r^2/2)/(2b)
    rhs[:n_ext, 0] = -(a / (2 * b)) * coupling[:, 0]
    rhs[n_ext, 0] = b ** 2 / 6 - a ** 2 / 4
    rhs[n_ext + 1:, 0] = sign[1:] / lam[1:] ** 2
    # diffraction of the axisymmetric part of a unit-amplitude incident wave
    incident = -1j * g / omega * np.sqrt(n0) / np.cosh(k * h)
    rhs[0, 1] = incident * k * j1(ka)
    rhs[n_ext:, 1] = -incident * j0(ka) * coupling[0]

    try:
        solution = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise HydroSolveError(f"Matching system singular at omega={omega}: {exc}") from exc
    if not np.all(np.isfinite(solution)):
        raise HydroSolveError(f"Matching system produced non-finite values at omega={omega}")

    interior = solution[n_ext:]
    disk = np.empty(n_int)
    disk[0] = np.pi * a ** 2
    disk[1:] = sign[1:] * 2 * np.pi * a * bessel_ratio / lam[1:]
    radiated = 2 * np.pi * (b * a ** 2 / 4 - a ** 4 / (16 * b)) + disk @ interior[:, 0]
    diffracted = disk @ interior[:, 1]

    amp_rad = solution[0, 0]
    amp_dif = solution[0, 1]
    added_mass = rho * radiated.real
    # radiated energy flux, nonnegative by construction
    damping = 4 * rho * omega * abs(amp_rad) ** 2 / abs(h0) ** 2
    excitation = np.conj(1j * omega * rho * diffracted)
    surface_mode = np.cosh(k * h) / np.sqrt(n0)
    far_field = abs(omega / g * amp_dif * surface_mode / h0)
    haskind = 4 * rho * g * abs(amp_rad) * np.sqrt(n0) / (abs(h0) * np.cosh(k * h))
    return added_mass, damping, excitation, far_field, haskind, omega * rho * radiated.imag


@lru_cache(maxsize=4096)
def _reference_single(geom: WecGeometry, grid: FrequencyGrid, modes: int, exterior_modes: int):
    k, kappa = _grid_wavenumbers(grid, exterior_modes)
    rows = [_cylinder_at_frequency(geom.radius, geom.draft, w, k_w, kappa_w, grid, modes)
            for w, k_w, kappa_w in zip(grid.values, k, kappa)]
    added_mass, damping, excitation, far_field, haskind, damping_pressure = (np.array(col) for col in zip(*rows))
    return added_mass, damping, excitation, far_field, haskind, damping_pressure


def reference_diagnostics(geom: WecGeometry, grid: FrequencyGrid, modes: int = DEFAULT_MODES,
                          exterior_modes: int = DEFAULT_EXTERIOR_MODES) -> pd.DataFrame:
    """Cross-checks of the reference solution: Haskind |Fe| and pressure-integral damping."""
    added_mass, damping, excitation, _, haskind, damping_pressure = _reference_single(
        geom, grid, modes, exterior_modes)
    return pd.DataFrame({
        "omega": grid.omega,
        "fe_abs": np.abs(excitation),
        "fe_abs_haskind": haskind,
        "damping_flux": damping,
        "damping_pressure": damping_pressure,
    })


def _toy_single(geom: WecGeometry, grid: FrequencyGrid):
    s = grid.omega * np.sqrt(geom.radius / grid.g)
    shape = 1.0 + 0.2 / geom.slenderness
    a = (0.4 + 0.3 / (1.0 + s ** 2)) * shape
    b = 0.8 * s * np.exp(-s ** 2) * shape
    fe_re = np.exp(-s ** 2) / geom.draft
    fe_im = -0.5 * s * np.exp(-s ** 2) / geom.draft
    sigma = 0.3 * s * np.exp(-s)
    return a, b, fe_re, fe_im, sigma


@lru_cache(maxsize=4096)
def _single_body_cached(geom: WecGeometry, grid: FrequencyGrid, backend: Backend,
                        modes: int, exterior_modes: int) -> OneBodyOutputs:
    omega = grid.omega
    if backend is Backend.TOY:
        a, b, fe_re, fe_im, sigma = _toy_single(geom, grid)
    else:
        added_mass, damping, excitation, far_field, _, _ = _reference_single(
            geom, grid, modes, exterior_modes)
        a, b, fe = normalize(added_mass, damping, excitation, geom, omega, grid.rho, grid.g)
        fe_re, fe_im = fe.real.copy(), fe.imag.copy()
        # scattered wave re-exciting a neighbour, in normalized force units
        sigma = far_field * np.abs(fe)
    omega = omega.copy()
    _readonly(omega, a, b, fe_re, fe_im, sigma)
    return OneBodyOutputs(omega, a, b, fe_re, fe_im, sigma)


def single_body(geom: WecGeometry, grid: FrequencyGrid, backend: Backend = Backend.REFERENCE,
                modes: int = DEFAULT_MODES,
                exterior_modes: int = DEFAULT_EXTERIOR_MODES) -> OneBodyOutputs:
    """
    Normalized coefficients of an isolated heaving cylinder.

    Args:
        geom: Cylinder geometry, must be within the plant bounds
        grid: Frequencies and fluid constants
        backend: Backend.REFERENCE or Backend.TOY
        modes: Interior (below body) truncation order
        exterior_modes: Number of evanescent exterior modes

    Returns:
        OneBodyOutputs with read-only arrays
    """
    geom.check_bounds()
    if modes < 1 or exterior_modes < 1:
        raise ValueError(f"Truncation orders must be positive, got {modes}, {exterior_modes}")
    return _single_body_cached(geom, grid, Backend(backend), int(modes), int(exterior_modes))


def _pair_from_isolated(one: OneBodyOutputs, k: np.ndarray, distance: float,
                        theta: float) -> PairOutputs:
    kl = k * distance
    a12 = -one.b * y0(kl)
    b12 = one.b * j0(kl)
    spreading = np.sqrt(2.0 / (np.pi * kl))
    scattered = one.sigma * spreading * np.exp(1j * (kl - 0.75 * np.pi)) * np.exp(-1j * kl * np.cos(theta))
    fe1 = one.fe + scattered
    return PairOutputs(one.omega, one.a.copy(), a12, one.b.copy(), b12, fe1.real, fe1.imag)


def pair_body(geom: WecGeometry, distance: float, theta: float, grid: FrequencyGrid,
              backend: Backend = Backend.REFERENCE, modes: int = DEFAULT_MODES,
              exterior_modes: int = DEFAULT_EXTERIOR_MODES) -> PairOutputs:
    """
    Normalized coefficients of body 1 at the origin with body 2 at (distance, theta).

    Radiation coupling follows the large-spacing Bessel form; the excitation
    adds the isotropic wave scattered by body 2 with the phase of its position.
    """
    if not distance > 0:
        raise ValueError(f"Pair distance must be positive, got {distance}")
    if not 0.0 <= theta <= np.pi:
        raise ValueError(f"Pair angle must lie in [0, pi], got {theta}")
    one = single_body(geom, grid, backend, modes, exterior_modes)
    k = wavenumbers(grid.omega, grid.depth, grid.g)
    return _pair_from_isolated(one, k, float(distance), float(theta))


def farm_direct(geom: WecGeometry, layout: FarmLayout, grid: FrequencyGrid,
                backend: Backend = Backend.REFERENCE, modes: int = DEFAULT_MODES,
                exterior_modes: int = DEFAULT_EXTERIOR_MODES) -> HydroTable:
    """Dimensional farm coefficients from isolated values and pairwise Bessel interactions."""
    one = single_body(geom, grid, backend, modes, exterior_modes)
    omega = grid.omega
    k = wavenumbers(omega, grid.depth, grid.g)
    a_iso, b_iso, fe_iso = denormalize(one.a, one.b, one.fe, geom, omega, grid.rho, grid.g)
    force_scale = grid.rho * grid.g * np.pi * geom.radius ** 2 * geom.draft
    sigma = one.sigma * force_scale

    n = layout.n_wec
    xy = layout.as_array()
    added_mass = np.zeros((len(omega), n, n))
    damping = np.zeros((len(omega), n, n))
    excitation = np.zeros((len(omega), n), dtype=complex)
    for p in range(n):
        added_mass[:, p, p] = a_iso
        damping[:, p, p] = b_iso
        total = fe_iso.astype(complex)
        for q in range(n):
            if q == p:
                continue
            distance, theta = pair_features(xy[p], xy[q])
            kl = k * distance
            added_mass[:, p, q] = -(b_iso / omega) * y0(kl)
            damping[:, p, q] = b_iso * j0(kl)
            total = total + sigma * np.sqrt(2.0 / (np.pi * kl)) * np.exp(
                1j * (kl - 0.75 * np.pi)) * np.exp(-1j * kl * np.cos(theta))
        excitation[:, p] = total * np.exp(-1j * k * xy[p, 0])
    table = HydroTable(omega, added_mass, damping, excitation, notes=[f"backend={Backend(backend).value}"])
    return table.symmetrized()


class OracleSource:
    """Coefficient source backed by a hydro backend."""

    def __init__(self, backend: Backend = Backend.REFERENCE, modes: int = DEFAULT_MODES,
                 exterior_modes: int = DEFAULT_EXTERIOR_MODES):
        self.backend = Backend(backend)
        self.modes = modes
        self.exterior_modes = exterior_modes
        self.extrapolations = 0
        self.name = f"oracle:{self.backend.value}"

    @classmethod
    def from_settings(cls, settings) -> "OracleSource":
        hydro = settings["hydro"]
        return cls(Backend(hydro["backend"]), hydro["modes"], hydro["exterior_modes"])

    def single(self, geom: WecGeometry, grid: FrequencyGrid) -> OneBodyOutputs:
        return single_body(geom, grid, self.backend, self.modes, self.exterior_modes)

    def pairs(self, geom: WecGeometry, distances: Sequence[float], thetas: Sequence[float],
              grid: FrequencyGrid) -> List[PairOutputs]:
        return [pair_body(geom, l, t, grid, self.backend, self.modes, self.exterior_modes)
                for l, t in zip(distances, thetas)]


def one_body_frame(geom: WecGeometry, grid: FrequencyGrid, backend: Backend = Backend.REFERENCE,
                   modes: int = DEFAULT_MODES,
                   exterior_modes: int = DEFAULT_EXTERIOR_MODES) -> pd.DataFrame:
    return single_body(geom, grid, backend, modes, exterior_modes).to_frame()


def pair_frame(geom: WecGeometry, distance: float, theta: float, grid: FrequencyGrid,
               backend: Backend = Backend.REFERENCE, modes: int = DEFAULT_MODES,
               exterior_modes: int = DEFAULT_EXTERIOR_MODES) -> pd.DataFrame:
    return pair_body(geom, distance, theta, grid, backend, modes, exterior_modes).to_frame()
