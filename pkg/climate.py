"""
Probabilistic wave climate.

Sea-state samples (year, Hs, Tp) are turned into a per-year joint probability
mass on a Gauss-Legendre tensor grid via a Gaussian kernel density estimate.
The module also evaluates the JONSWAP spectrum, solves the linear dispersion
relation and synthesizes irregular wave elevations.
"""

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial.legendre import leggauss
from scipy.integrate import trapezoid
from scipy.optimize import brentq

logger = logging.getLogger(__name__)

HS_BOX = (0.25, 10.0)
TP_BOX = (3.0, 17.0)
DEFAULT_N_GQ = 40
CLIMATE_CSV_COLUMNS = ["year", "hs_m", "tp_s"]
MIN_SAMPLES_PER_YEAR = 10

# Synthetic sites: lognormal medians, log standard deviations and the
# correlation of log(Hs) with log(Tp).
SITE_PRESETS = {
    "alaska_coast": {"hs_median": 2.6, "tp_median": 10.5, "hs_log_sigma": 0.45,
                     "tp_log_sigma": 0.22, "correlation": 0.55},
    "east_coast": {"hs_median": 1.1, "tp_median": 7.5, "hs_log_sigma": 0.40,
                   "tp_log_sigma": 0.25, "correlation": 0.45},
    "pacific_islands": {"hs_median": 1.7, "tp_median": 9.5, "hs_log_sigma": 0.30,
                        "tp_log_sigma": 0.20, "correlation": 0.35},
    "west_coast": {"hs_median": 2.0, "tp_median": 11.0, "hs_log_sigma": 0.40,
                   "tp_log_sigma": 0.20, "correlation": 0.50},
}


class ClimateFitError(ValueError):
    """Raised when samples cannot be turned into a climate model."""


@dataclass(frozen=True)
class SeaSample:
    year: int
    hs: float
    tp: float

    def __post_init__(self):
        if not self.hs > 0:
            raise ValueError(f"Hs must be positive, got {self.hs}")
        if not self.tp > 0:
            raise ValueError(f"Tp must be positive, got {self.tp}")


@dataclass(frozen=True)
class SyntheticSite:
    hs_median: float
    tp_median: float
    hs_log_sigma: float
    tp_log_sigma: float
    correlation: float = 0.0

    def __post_init__(self):
        if self.hs_median <= 0 or self.tp_median <= 0:
            raise ValueError("Site medians must be positive")
        if self.hs_log_sigma < 0 or self.tp_log_sigma < 0:
            raise ValueError("Log standard deviations must be nonnegative")
        if not -1.0 <= self.correlation <= 1.0:
            raise ValueError(f"Correlation must lie in [-1, 1], got {self.correlation}")


def get_site(name: str) -> SyntheticSite:
    if name not in SITE_PRESETS:
        raise ValueError(f"Unknown site: {name}. Must be one of {sorted(SITE_PRESETS)}")
    return SyntheticSite(**SITE_PRESETS[name])


@dataclass(frozen=True)
class SpectrumParams:
    gamma: float
    alpha_s: float
    beta_s: float
    omega_p: float


@dataclass(eq=False)
class ClimateModel:
    """Per-year probability masses of (Hs, Tp) on a Gauss-Legendre tensor grid.

    pdf and prob have shape (n_years, n_gq_hs, n_gq_tp); rows are Hs nodes and
    columns are Tp nodes.
    """
    years: Tuple[int, ...]
    hs_nodes: np.ndarray
    tp_nodes: np.ndarray
    hs_weights: np.ndarray
    tp_weights: np.ndarray
    pdf: np.ndarray
    prob: np.ndarray
    renormalized_mass: Tuple[float, ...] = ()
    _spectra: Dict[Tuple, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.hs_nodes) != len(self.hs_weights) or len(self.tp_nodes) != len(self.tp_weights):
            raise ValueError("Node and weight counts differ")
        expected = (len(self.years), len(self.hs_nodes), len(self.tp_nodes))
        if self.prob.shape != expected or self.pdf.shape != expected:
            raise ValueError(f"Probability arrays must have shape {expected}")
        if np.any(self.pdf < 0) or np.any(self.prob < 0):
            raise ValueError("Densities and masses must be nonnegative")

    @property
    def n_years(self) -> int:
        return len(self.years)

    def renormalized(self) -> "ClimateModel":
        """Copy with every year's masses rescaled to sum to one."""
        totals = self.prob.sum(axis=(1, 2), keepdims=True)
        if np.any(totals <= 0):
            raise ClimateFitError("A year carries no probability mass")
        return ClimateModel(self.years, self.hs_nodes, self.tp_nodes, self.hs_weights,
                            self.tp_weights, self.pdf, self.prob / totals,
                            tuple(float(t) for t in totals.ravel()))

    def scaled(self, factor: float) -> "ClimateModel":
        return ClimateModel(self.years, self.hs_nodes, self.tp_nodes, self.hs_weights,
                            self.tp_weights, self.pdf * factor, self.prob * factor)

    def sea_states(self) -> Tuple[np.ndarray, np.ndarray]:
        """Hs and Tp of every grid node, each of shape (n_gq_hs, n_gq_tp)."""
        return np.meshgrid(self.hs_nodes, self.tp_nodes, indexing="ij")

    def spectral_density(self, omega: np.ndarray) -> np.ndarray:
        """JONSWAP density at every node and frequency, shape (n_hs, n_tp, n_w)."""
        key = tuple(np.asarray(omega, dtype=float))
        if key not in self._spectra:
            hs, tp = self.sea_states()
            self._spectra[key] = jonswap(hs[..., None], tp[..., None], np.asarray(key)[None, None, :])
        return self._spectra[key]

    def marginal_hs(self) -> np.ndarray:
        return self.prob.sum(axis=2)

    def significant_height_check(self) -> np.ndarray:
        """4 sqrt(m0) of the JONSWAP spectrum at every node, shape (n_hs, n_tp)."""
        return np.array([[4.0 * np.sqrt(spectral_moment(h, t)) for t in self.tp_nodes]
                         for h in self.hs_nodes])

    def to_dict(self) -> Dict:
        return {
            "years": list(self.years),
            "hs_nodes": self.hs_nodes.tolist(),
            "tp_nodes": self.tp_nodes.tolist(),
            "hs_weights": self.hs_weights.tolist(),
            "tp_weights": self.tp_weights.tolist(),
            "pdf": self.pdf.tolist(),
            "prob": self.prob.tolist(),
            "renormalized_mass": list(self.renormalized_mass),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ClimateModel":
        return cls(
            years=tuple(int(y) for y in data["years"]),
            hs_nodes=np.asarray(data["hs_nodes"], dtype=float),
            tp_nodes=np.asarray(data["tp_nodes"], dtype=float),
            hs_weights=np.asarray(data["hs_weights"], dtype=float),
            tp_weights=np.asarray(data["tp_weights"], dtype=float),
            pdf=np.asarray(data["pdf"], dtype=float),
            prob=np.asarray(data["prob"], dtype=float),
            renormalized_mass=tuple(data.get("renormalized_mass", ())),
        )

    def to_json(self, path: str, meta: Optional[Dict] = None):
        payload = {"meta": meta or {}, "climate": self.to_dict()}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)

    @classmethod
    def from_json(cls, path: str) -> "ClimateModel":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls.from_dict(payload["climate"])


def gauss_legendre(n: int, a: float, b: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss-Legendre nodes and weights on [a, b].

    Args:
        n: Number of nodes
        a, b: Interval bounds, a < b

    Returns:
        (nodes, weights), nodes increasing, weights summing to b - a
    """
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError(f"Quadrature bounds must be finite, got [{a}, {b}]")
    if int(n) != n or n < 1:
        raise ValueError(f"Quadrature order must be a positive integer, got {n}")
    if not a < b:
        raise ValueError(f"Quadrature interval must satisfy a < b, got [{a}, {b}]")
    x, w = leggauss(int(n))
    half = 0.5 * (b - a)
    return half * x + 0.5 * (a + b), half * w


def silverman_bandwidth(values: np.ndarray) -> float:
    """Silverman's rule for one dimension of a 2-D product kernel."""
    n = len(values)
    std = float(np.std(values, ddof=1)) if n > 1 else 0.0
    return std * (4.0 / ((2 + 2) * n)) ** (1.0 / (2 + 4))


def _kde_on_grid(hs: np.ndarray, tp: np.ndarray, hs_nodes: np.ndarray, tp_nodes: np.ndarray,
                 bandwidth: Tuple[float, float]) -> np.ndarray:
    h_hs, h_tp = bandwidth
    k_hs = np.exp(-0.5 * ((hs_nodes[:, None] - hs[None, :]) / h_hs) ** 2) / (np.sqrt(2 * np.pi) * h_hs)
    k_tp = np.exp(-0.5 * ((tp_nodes[:, None] - tp[None, :]) / h_tp) ** 2) / (np.sqrt(2 * np.pi) * h_tp)
    # product kernel summed over samples: (n_hs, n) @ (n, n_tp)
    return k_hs @ k_tp.T / len(hs)


def fit_climate(samples: Sequence[SeaSample], n_gq: int = DEFAULT_N_GQ,
                bandwidth: Optional[Sequence[float]] = None,
                hs_box: Tuple[float, float] = HS_BOX, tp_box: Tuple[float, float] = TP_BOX,
                years: Optional[Sequence[int]] = None) -> ClimateModel:
    """
    Fit a per-year Gaussian kernel density and integrate it on the quadrature grid.

    Args:
        samples: Sea-state samples, at least MIN_SAMPLES_PER_YEAR per year
        n_gq: Gauss-Legendre nodes per dimension
        bandwidth: Optional (Hs, Tp) kernel widths; Silverman's rule per year when omitted
        hs_box, tp_box: Integration box
        years: Expected years; a listed year without samples is an error

    Returns:
        ClimateModel with masses renormalized to one per year
    """
    if n_gq < 2:
        raise ValueError(f"n_gq must be at least 2, got {n_gq}")
    if bandwidth is not None and (len(bandwidth) != 2 or min(bandwidth) <= 0):
        raise ValueError(f"Bandwidth must be two positive values, got {bandwidth}")

    frame = pd.DataFrame([(s.year, s.hs, s.tp) for s in samples], columns=CLIMATE_CSV_COLUMNS)
    if frame.empty:
        raise ClimateFitError("No sea-state samples given")
    study_years = sorted(frame["year"].unique()) if years is None else list(years)

    hs_nodes, hs_weights = gauss_legendre(n_gq, *hs_box)
    tp_nodes, tp_weights = gauss_legendre(n_gq, *tp_box)
    tensor_weights = np.outer(hs_weights, tp_weights)

    pdf = np.zeros((len(study_years), n_gq, n_gq))
    for idx, year in enumerate(study_years):
        group = frame[frame["year"] == year]
        if len(group) == 0:
            raise ClimateFitError(f"Year {year} has no samples")
        if len(group) < MIN_SAMPLES_PER_YEAR:
            raise ClimateFitError(
                f"Year {year} has {len(group)} samples, need at least {MIN_SAMPLES_PER_YEAR}")
        hs = group["hs_m"].to_numpy(dtype=float)
        tp = group["tp_s"].to_numpy(dtype=float)
        if bandwidth is None:
            widths = (silverman_bandwidth(hs), silverman_bandwidth(tp))
            if min(widths) <= 0:
                raise ClimateFitError(
                    f"Year {year} samples have zero variance; pass an explicit bandwidth")
        else:
            widths = (float(bandwidth[0]), float(bandwidth[1]))
        pdf[idx] = _kde_on_grid(hs, tp, hs_nodes, tp_nodes, widths)

    mass = pdf * tensor_weights[None, :, :]
    totals = mass.sum(axis=(1, 2))
    if np.any(totals <= 0):
        raise ClimateFitError("Kernel density has no mass inside the integration box")
    logger.info("Renormalizing truncated climate masses (in-box mass %s)",
                np.array2string(totals, precision=4))
    prob = mass / totals[:, None, None]
    return ClimateModel(tuple(int(y) for y in study_years), hs_nodes, tp_nodes, hs_weights,
                        tp_weights, pdf, prob, tuple(float(t) for t in totals))


def jonswap_parameters(hs: float, tp: float) -> SpectrumParams:
    """Shape parameters of the JONSWAP spectrum for one sea state."""
    if not (hs > 0 and tp > 0):
        raise ValueError(f"Hs and Tp must be positive, got Hs={hs}, Tp={tp}")
    omega_p = 2.0 * np.pi / tp
    gamma = float(peak_enhancement(hs, tp))
    beta_s = 1.25 * omega_p ** 4
    # gamma**r is frequency dependent and applied in jonswap()
    alpha_s = beta_s / 4.0 * hs ** 2 * (1.0 - 0.287 * np.log(gamma))
    return SpectrumParams(gamma=gamma, alpha_s=alpha_s, beta_s=beta_s, omega_p=omega_p)


def peak_enhancement(hs, tp):
    ratio = np.asarray(tp, dtype=float) / np.sqrt(np.asarray(hs, dtype=float))
    middle = np.minimum(np.exp(5.75 - 1.15 * ratio), 5.0)
    return np.where(ratio <= 3.6, 5.0, np.where(ratio > 5.0, 1.0, middle))


def jonswap(hs, tp, omega):
    """
    JONSWAP spectral density S(omega) in m^2 s/rad.

    Broadcasts over hs, tp and omega.
    """
    hs = np.asarray(hs, dtype=float)
    tp = np.asarray(tp, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if np.any(hs <= 0) or np.any(tp <= 0) or np.any(omega <= 0):
        raise ValueError("JONSWAP inputs must be positive")
    omega_p = 2.0 * np.pi / tp
    gamma = peak_enhancement(hs, tp)
    beta_s = 1.25 * omega_p ** 4
    sigma = np.where(omega <= omega_p, 0.07, 0.09)
    r = np.exp(-((omega / omega_p - 1.0) ** 2) / (2.0 * sigma ** 2))
    alpha_s = beta_s / 4.0 * hs ** 2 * (1.0 - 0.287 * np.log(gamma)) * gamma ** r
    return alpha_s * omega ** -5 * np.exp(-beta_s * omega ** -4)


def spectral_moment(hs: float, tp: float, order: int = 0,
                    omega_range: Tuple[float, float] = (0.01, 20.0), n: int = 20000) -> float:
    omega = np.linspace(omega_range[0], omega_range[1], n)
    return float(trapezoid(omega ** order * jonswap(hs, tp, omega), omega))


def dispersion(omega: float, h: float, g: float = 9.81) -> float:
    """Wavenumber k solving omega^2 = g k tanh(k h)."""
    if not (omega > 0 and h > 0 and g > 0):
        raise ValueError(f"omega, h and g must be positive, got {omega}, {h}, {g}")
    target = omega ** 2

    def residual(k):
        return g * k * np.tanh(k * h) - target

    k_deep = target / g
    # tanh is increasing, so the deep-water value divided by tanh brackets the root;
    # the ends are pushed apart since tanh(k_deep h) rounds to 1 in deep water
    k_low = k_deep * (1.0 - 1e-9)
    k_high = k_deep / np.tanh(k_deep * h) * (1.0 + 1e-9)
    try:
        k = brentq(residual, k_low, k_high, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    except (ValueError, RuntimeError) as exc:
        raise RuntimeError(f"Dispersion solve failed for omega={omega}, h={h}: {exc}") from exc
    if abs(residual(k)) > 1e-10 * target:
        raise RuntimeError(f"Dispersion residual too large for omega={omega}, h={h}")
    return float(k)


@lru_cache(maxsize=256)
def _wavenumbers(omega: Tuple[float, ...], h: float, g: float) -> np.ndarray:
    k = np.array([dispersion(w, h, g) for w in omega])
    k.setflags(write=False)
    return k


def wavenumbers(omega, h: float, g: float = 9.81) -> np.ndarray:
    return _wavenumbers(tuple(float(w) for w in np.atleast_1d(omega)), float(h), float(g))


def synth_elevation(hs: float, tp: float, n_r: int, seed: int, x, t,
                    band: Tuple[float, float] = (0.2, 3.0), depth: float = 50.0, g: float = 9.81,
                    heights: Optional[Sequence[float]] = None,
                    phases: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    Irregular long-crested wave elevation as a sum of n_r regular components.

    Component heights follow the JONSWAP band energy H_i = 2 sqrt(2 S(w_i) dw)
    and phases are uniform on [0, 2 pi) from `seed`, unless overridden.
    """
    if n_r < 1:
        raise ValueError(f"n_r must be at least 1, got {n_r}")
    if not band[0] < band[1]:
        raise ValueError(f"Invalid frequency band {band}")
    d_omega = (band[1] - band[0]) / n_r
    omega = band[0] + (np.arange(n_r) + 0.5) * d_omega
    if heights is None:
        heights = 2.0 * np.sqrt(2.0 * jonswap(hs, tp, omega) * d_omega)
    heights = np.asarray(heights, dtype=float)
    if phases is None:
        rng = np.random.default_rng(seed)
        phases = rng.uniform(0.0, 2.0 * np.pi, n_r)
    phases = np.asarray(phases, dtype=float)
    if heights.shape != (n_r,) or phases.shape != (n_r,):
        raise ValueError("heights and phases must have n_r entries")

    k = wavenumbers(omega, depth, g)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    x_b, t_b = np.broadcast_arrays(x, t)
    eta = np.zeros(x_b.shape)
    # accumulate component by component to keep memory flat for long records
    for h_i, k_i, w_i, p_i in zip(heights, k, omega, phases):
        eta += 0.5 * h_i * np.cos(k_i * x_b - w_i * t_b + p_i)
    return eta


def synth_climate(site: SyntheticSite, years: int, n: int, seed: int, start_year: int = 1,
                  hs_box: Tuple[float, float] = HS_BOX,
                  tp_box: Tuple[float, float] = TP_BOX) -> List[SeaSample]:
    """Correlated bivariate-lognormal sea states, clipped to the climate box."""
    if years < 1:
        raise ValueError(f"years must be at least 1, got {years}")
    if n < MIN_SAMPLES_PER_YEAR:
        raise ValueError(f"n must be at least {MIN_SAMPLES_PER_YEAR}, got {n}")
    rng = np.random.default_rng(seed)
    rho = site.correlation
    samples = []
    for year in range(start_year, start_year + years):
        z1 = rng.standard_normal(n)
        z2 = rho * z1 + np.sqrt(1.0 - rho ** 2) * rng.standard_normal(n)
        hs = np.clip(site.hs_median * np.exp(site.hs_log_sigma * z1), *hs_box)
        tp = np.clip(site.tp_median * np.exp(site.tp_log_sigma * z2), *tp_box)
        samples.extend(SeaSample(year, float(h), float(p)) for h, p in zip(hs, tp))
    return samples


def read_climate_csv(path: str) -> List[SeaSample]:
    frame = pd.read_csv(path, encoding="utf-8")
    if list(frame.columns) != CLIMATE_CSV_COLUMNS:
        raise ClimateFitError(
            f"Climate CSV header must be {','.join(CLIMATE_CSV_COLUMNS)}, got {','.join(frame.columns)}")
    return [SeaSample(int(row.year), float(row.hs_m), float(row.tp_s))
            for row in frame.itertuples(index=False)]


def write_climate_csv(samples: Sequence[SeaSample], path: str):
    frame = pd.DataFrame([(s.year, s.hs, s.tp) for s in samples], columns=CLIMATE_CSV_COLUMNS)
    frame.to_csv(path, index=False, encoding="utf-8")


def climate_from_settings(settings: Dict, seed: Optional[int] = None) -> ClimateModel:
    """Fit the configured climate: CSV samples when a path is set, else the synthetic site."""
    cfg = settings["climate"]
    if cfg["path"]:
        samples = read_climate_csv(cfg["path"])
    else:
        seed = settings["seeds"]["climate"] if seed is None else seed
        samples = synth_climate(get_site(cfg["site"]), cfg["years"], cfg["samples_per_year"],
                                seed, hs_box=tuple(cfg["hs_box"]), tp_box=tuple(cfg["tp_box"]))
    return fit_climate(samples, cfg["n_gq"], hs_box=tuple(cfg["hs_box"]),
                       tp_box=tuple(cfg["tp_box"]))
