"""
Shared domain types: cylinder geometry, frequency grid, farm layout and the
farm-level hydrodynamic table.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

# Plant bounds (radius, slenderness = radius/draft, draft)
RADIUS_BOUNDS = (0.5, 10.0)
SLENDERNESS_BOUNDS = (0.2, 10.0)
DRAFT_BOUNDS = (0.5, 20.0)


@dataclass(frozen=True)
class WecGeometry:
    """Uniform vertical cylinder. Draft is derived from radius/slenderness."""
    radius: float
    slenderness: float

    def __post_init__(self):
        if not np.isfinite(self.radius) or self.radius <= 0:
            raise ValueError(f"Radius must be positive, got {self.radius}")
        if not np.isfinite(self.slenderness) or self.slenderness <= 0:
            raise ValueError(f"Slenderness must be positive, got {self.slenderness}")

    @property
    def draft(self) -> float:
        return self.radius / self.slenderness

    @property
    def volume(self) -> float:
        return np.pi * self.radius ** 2 * self.draft

    @property
    def waterplane_area(self) -> float:
        return np.pi * self.radius ** 2

    def within_bounds(self, tol: float = 1e-9) -> bool:
        r_lo, r_hi = RADIUS_BOUNDS
        s_lo, s_hi = SLENDERNESS_BOUNDS
        d_lo, d_hi = DRAFT_BOUNDS
        return (r_lo - tol <= self.radius <= r_hi + tol
                and s_lo - tol <= self.slenderness <= s_hi + tol
                and d_lo - tol <= self.draft <= d_hi + tol)

    def check_bounds(self):
        if not self.within_bounds():
            raise ValueError(
                f"Geometry outside bounds: R={self.radius:.4g} m, RD={self.slenderness:.4g}, "
                f"D={self.draft:.4g} m"
            )


@dataclass(frozen=True)
class FrequencyGrid:
    """Wave frequencies (rad/s) and the fluid constants they are used with."""
    values: Tuple[float, ...]
    depth: float = 50.0
    g: float = 9.81
    rho: float = 1025.0
    bin_width: Optional[float] = None  # only used for single-frequency grids

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if len(values) == 0:
            raise ValueError("Frequency grid is empty")
        if any(v <= 0 for v in values):
            raise ValueError("Frequencies must be positive")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("Frequencies must be strictly increasing")
        if self.depth <= 0 or self.g <= 0 or self.rho <= 0:
            raise ValueError("Depth, gravity and density must be positive")

    @classmethod
    def uniform(cls, n: int = 100, omega_min: float = 0.3, omega_max: float = 2.0,
                depth: float = 50.0, g: float = 9.81, rho: float = 1025.0) -> "FrequencyGrid":
        return cls(tuple(np.linspace(omega_min, omega_max, n)), depth=depth, g=g, rho=rho)

    @classmethod
    def from_settings(cls, settings: Dict) -> "FrequencyGrid":
        hydro = settings["hydro"]
        return cls.uniform(hydro["n_omega"], hydro["omega_min"], hydro["omega_max"],
                           depth=hydro["depth_m"], g=hydro["g"], rho=hydro["rho"])

    @property
    def omega(self) -> np.ndarray:
        return np.asarray(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def bin_widths(self) -> np.ndarray:
        """Quadrature widths Δω for Riemann sums over the grid."""
        if len(self.values) == 1:
            return np.array([1.0 if self.bin_width is None else float(self.bin_width)])
        return np.gradient(self.omega)


def pair_geometry(p: Sequence[float], q: Sequence[float]) -> Tuple[float, float]:
    """Distance and angle of q seen from p, angle folded into [0, pi]."""
    dx = float(q[0]) - float(p[0])
    dy = float(q[1]) - float(p[1])
    distance = float(np.hypot(dx, dy))
    if distance == 0.0:
        raise ValueError(f"Coincident WEC centers at ({p[0]}, {p[1]})")
    # mirror symmetry about the wave direction
    theta = abs(float(np.arctan2(dy, dx)))
    return distance, theta


@dataclass(frozen=True)
class FarmLayout:
    """WEC centers in meters; WEC 1 sits at the origin in optimization problems."""
    centers: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        centers = tuple((float(x), float(y)) for x, y in self.centers)
        object.__setattr__(self, "centers", centers)
        if len(centers) == 0:
            raise ValueError("Layout needs at least one WEC")
        for p, q in self.pairs():
            if centers[p] == centers[q]:
                raise ValueError(f"WECs {p + 1} and {q + 1} share the same center")

    @classmethod
    def from_array(cls, xy) -> "FarmLayout":
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return cls(tuple(map(tuple, xy)))

    @property
    def n_wec(self) -> int:
        return len(self.centers)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=float).reshape(-1, 2)

    def pairs(self) -> Iterator[Tuple[int, int]]:
        n = len(self.centers)
        for p in range(n):
            for q in range(p + 1, n):
                yield p, q

    def distances(self) -> np.ndarray:
        xy = self.as_array()
        return np.array([np.hypot(*(xy[q] - xy[p])) for p, q in self.pairs()])

    def translated(self, dx: float, dy: float) -> "FarmLayout":
        return FarmLayout.from_array(self.as_array() + np.array([dx, dy]))

    def reflected(self) -> "FarmLayout":
        """Mirror image across the x-axis."""
        return FarmLayout.from_array(self.as_array() * np.array([1.0, -1.0]))

    def pinned(self) -> "FarmLayout":
        """Translate so the first WEC sits at the origin."""
        x0, y0 = self.centers[0]
        return self.translated(-x0, -y0)


@dataclass
class HydroTable:
    """Per-frequency farm coefficients: A, B (n_w x N x N) and Fe (n_w x N)."""
    omega: np.ndarray
    added_mass: np.ndarray
    damping: np.ndarray
    excitation: np.ndarray
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        n_w = len(self.omega)
        if self.added_mass.shape[0] != n_w or self.damping.shape[0] != n_w:
            raise ValueError("Coefficient arrays do not match the frequency grid")
        if self.excitation.shape[0] != n_w:
            raise ValueError("Excitation array does not match the frequency grid")

    @property
    def n_wec(self) -> int:
        return self.added_mass.shape[1]

    def symmetrized(self) -> "HydroTable":
        a = 0.5 * (self.added_mass + np.swapaxes(self.added_mass, 1, 2))
        b = 0.5 * (self.damping + np.swapaxes(self.damping, 1, 2))
        return HydroTable(self.omega, a, b, self.excitation, list(self.notes))

    def to_frame(self) -> pd.DataFrame:
        """Long-format export: omega, kind (A/B/Fe), row, col, real, imag."""
        rows = []
        n = self.n_wec
        for w_idx, w in enumerate(self.omega):
            for p in range(n):
                for q in range(n):
                    rows.append((w, "A", p + 1, q + 1, self.added_mass[w_idx, p, q], 0.0))
                    rows.append((w, "B", p + 1, q + 1, self.damping[w_idx, p, q], 0.0))
                fe = self.excitation[w_idx, p]
                rows.append((w, "Fe", p + 1, 0, fe.real, fe.imag))
        return pd.DataFrame(rows, columns=["omega", "kind", "row", "col", "real", "imag"])
