"""Plug-in level-set estimators on grid fields.

The fixed-probability level is found by bisection because the plug-in mass
``t -> int_{f_n >= t} f_n`` is a monotone step function on a grid.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .field_geometry import IndicatorField, ScalarField, connected_components, measure, threshold


class Source(enum.Enum):
    ESTIMATED = "estimated"
    ORACLE = "oracle"


class EmptyBandError(ValueError):
    pass


@dataclass(frozen=True)
class LevelSetEstimate:
    t: float
    indicator: IndicatorField
    source: Source = Source.ESTIMATED

    @property
    def volume(self) -> float:
        return measure(self.indicator)


@dataclass(frozen=True)
class QuantileSolution:
    p: float
    t_n: float
    mass_at_t: float
    iterations: int


@dataclass(frozen=True)
class ClusterResult:
    solution: QuantileSolution
    count: int
    labels: np.ndarray
    volumes: list[float]

    @property
    def t_n(self) -> float:
        return self.solution.t_n


def plugin_levelset(field: ScalarField, t: float, source: Source = Source.ESTIMATED) -> LevelSetEstimate:
    if t < 0:
        raise ValueError("level must be nonnegative")
    return LevelSetEstimate(float(t), threshold(field, t), source)


def level_mass(field: ScalarField, t: float) -> float:
    """Mass of the superlevel set under the field itself."""
    if t < 0:
        raise ValueError("level must be nonnegative")
    return measure(threshold(field, t), weight=field)


def quantile_level(field: ScalarField, p: float, tol: float = 1e-6,
                   max_iter: int = 200) -> QuantileSolution:
    """Level whose superlevel set carries mass ``p`` under the field.

    Returns the smallest t (to floating-point resolution) with
    ``level_mass(field, t) <= p + tol`` together with the mass achieved there;
    on a grid that mass may fall short of p by up to one cell's mass.
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    if p == 1.0:
        return QuantileSolution(p, 0.0, level_mass(field, 0.0), 0)
    target = p + tol
    lo = 0.0
    mass_lo = level_mass(field, lo)
    if mass_lo <= target:
        return QuantileSolution(p, 0.0, mass_lo, 0)
    hi = float(np.nextafter(field.values.max(), np.inf))
    mass_hi = 0.0
    it = 0
    while it < max_iter:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        it += 1
        m = level_mass(field, mid)
        if m <= target:
            hi, mass_hi = mid, m
        else:
            lo = mid
    return QuantileSolution(p, hi, mass_hi, it)


def band_set(field: ScalarField, t: float, alpha: float) -> IndicatorField:
    """Half-open band ``{t <= field < t + alpha}``."""
    return threshold(field, t) & ~threshold(field, t + alpha)


def beta_n(field: ScalarField, t_n: float, alpha_n: float) -> float:
    """Data-driven normalizer ``alpha_n / lambda({t_n <= f_n < t_n + alpha_n})``."""
    if not alpha_n > 0:
        raise ValueError("alpha_n must be positive")
    vol = measure(band_set(field, t_n, alpha_n))
    if vol == 0.0:
        raise EmptyBandError(
            f"band [{t_n}, {t_n + alpha_n}) holds no grid cell "
            f"(field max {field.values.max():.6g}); alpha_n too small for the grid or t_n too high"
        )
    return alpha_n / vol


def clusters_at_probability(field: ScalarField, p: float, tol: float = 1e-6) -> ClusterResult:
    """Connected components of the plug-in level set carrying mass p."""
    sol = quantile_level(field, p, tol)
    est = plugin_levelset(field, sol.t_n)
    count, labels = connected_components(est.indicator)
    counts = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    volumes = (counts * field.grid.cell_volume).tolist()
    return ClusterResult(sol, count, labels, volumes)


def write_labels_csv(path, result: ClusterResult) -> None:
    """Write ``cell,label`` rows for every labeled cell (row-major cell index)."""
    flat = result.labels.ravel()
    cells = np.flatnonzero(flat)
    np.savetxt(path, np.column_stack([cells, flat[cells]]), delimiter=",",
               header="cell,label", comments="", fmt="%d")
