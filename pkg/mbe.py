"""
Many-body expansion of farm hydrodynamics, truncated at two-body clusters.

Farm matrices are built from isolated-body outputs plus the additive effect
of every ordered pair (p, q): the pair model places p at the origin, so the
global excitation phase exp(-i k x_p) is applied when the farm is composed.

Any object with `single(geom, grid)` and `pairs(geom, distances, thetas, grid)`
methods can act as the coefficient source (hydro backend or surrogate).
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from climate import wavenumbers
from wec_types import FarmLayout, FrequencyGrid, HydroTable, WecGeometry, pair_geometry

logger = logging.getLogger(__name__)

MBE_ORDER = 2


@dataclass(frozen=True)
class PairTerms:
    """Additive two-body terms in normalized units, per frequency."""
    d_a11: np.ndarray
    d_a12: np.ndarray
    d_b11: np.ndarray
    d_b12: np.ndarray
    d_fe1: np.ndarray


def _scales(geom: WecGeometry, omega, rho: float, g: float):
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise ValueError("Damping normalization needs omega > 0")
    r3 = rho * np.pi * geom.radius ** 3
    force = rho * g * np.pi * geom.radius ** 2 * geom.draft
    return r3, omega * r3, force


def normalize(added_mass, damping, excitation, geom: WecGeometry, omega,
              rho: float = 1025.0, g: float = 9.81) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dimensional (A, B, Fe) to normalized (A~, B~, Fe~)."""
    mass_scale, damping_scale, force_scale = _scales(geom, omega, rho, g)
    return (np.asarray(added_mass) / mass_scale,
            np.asarray(damping) / damping_scale,
            np.asarray(excitation) / force_scale)


def denormalize(a, b, fe, geom: WecGeometry, omega,
                rho: float = 1025.0, g: float = 9.81) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalized (A~, B~, Fe~) back to dimensional (A, B, Fe)."""
    mass_scale, damping_scale, force_scale = _scales(geom, omega, rho, g)
    return (np.asarray(a) * mass_scale,
            np.asarray(b) * damping_scale,
            np.asarray(fe) * force_scale)


def pair_features(p, q) -> Tuple[float, float]:
    """Distance l and angle theta in [0, pi] of WEC q relative to WEC p."""
    return pair_geometry(p, q)


def additive_terms(one, pair, k=None, offset: float = 0.0) -> PairTerms:
    """
    Two-body additive effects of a pair relative to the isolated body.

    `offset` is the x-translation of body 1 used when the pair was
    evaluated; pairs evaluated with body 1 at the origin need no phase fix.
    """
    if not np.array_equal(one.omega, pair.omega):
        raise ValueError("One-body and pair outputs use different frequency grids")
    phase = 1.0
    if offset != 0.0:
        if k is None:
            raise ValueError("Wavenumbers are needed to undo a pair translation")
        phase = np.exp(1j * np.asarray(k) * offset)
    return PairTerms(
        d_a11=pair.a11 - one.a,
        d_a12=np.array(pair.a12, dtype=float),
        d_b11=pair.b11 - one.b,
        d_b12=np.array(pair.b12, dtype=float),
        d_fe1=(pair.fe - one.fe) * phase,
    )


def compose_farm(geom: WecGeometry, layout: FarmLayout, source, grid: FrequencyGrid,
                 order: int = MBE_ORDER) -> HydroTable:
    """
    Compose farm-level A, B and Fe from one- and two-body outputs.

    Args:
        geom: Uniform WEC geometry
        layout: WEC centers
        source: Coefficient source (oracle or surrogate)
        grid: Frequency grid
        order: Expansion order; only two-body clusters are available

    Returns:
        Symmetrized HydroTable in dimensional units
    """
    if order != MBE_ORDER:
        raise NotImplementedError(f"MBE order {order} is not available, only {MBE_ORDER}")
    omega = grid.omega
    n = layout.n_wec
    xy = layout.as_array()
    one = source.single(geom, grid)

    ordered = [(p, q) for p in range(n) for q in range(n) if p != q]
    features = [pair_features(xy[p], xy[q]) for p, q in ordered]
    pair_outputs = source.pairs(geom, [f[0] for f in features], [f[1] for f in features], grid) if ordered else []

    a_norm = np.zeros((len(omega), n, n))
    b_norm = np.zeros((len(omega), n, n))
    fe_norm = np.zeros((len(omega), n), dtype=complex)
    for p in range(n):
        a_norm[:, p, p] = one.a
        b_norm[:, p, p] = one.b
        fe_norm[:, p] = one.fe
    for (p, q), pair in zip(ordered, pair_outputs):
        terms = additive_terms(one, pair)
        a_norm[:, p, p] += terms.d_a11
        b_norm[:, p, p] += terms.d_b11
        a_norm[:, p, q] = terms.d_a12
        b_norm[:, p, q] = terms.d_b12
        fe_norm[:, p] += terms.d_fe1

    w = omega[:, None, None]
    added_mass, damping, _ = denormalize(a_norm, b_norm, 0.0, geom, w, grid.rho, grid.g)
    _, _, excitation = denormalize(0.0, 0.0, fe_norm, geom, omega[:, None], grid.rho, grid.g)
    k = wavenumbers(omega, grid.depth, grid.g)
    excitation = excitation * np.exp(-1j * k[:, None] * xy[None, :, 0])

    table = HydroTable(omega, added_mass, damping, excitation,
                       notes=[f"source={getattr(source, 'name', type(source).__name__)}",
                              f"mbe_order={MBE_ORDER}"])
    return table.symmetrized()
