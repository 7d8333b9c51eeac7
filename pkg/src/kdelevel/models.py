"""Analytic test densities with closed-form level-set oracles.

Each model declares an open interval ``theta`` of levels on which the
density is smooth with a nonvanishing gradient along the level boundary;
level-dependent oracles refuse levels outside ``(0, sup_f)`` and the
experiment harness refuses levels outside ``theta``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .field_geometry import GridSpec, ScalarField
from .kernels import sphere_area


class ModelError(ValueError):
    pass


class LevelOutOfRangeError(ModelError):
    pass


@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray
    seed: int
    model_name: str

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def k(self) -> int:
        return self.points.shape[1]

    def to_csv(self, path) -> None:
        write_points_csv(path, self.points)


def write_points_csv(path, points: np.ndarray) -> None:
    points = np.atleast_2d(points)
    header = ",".join(f"x{j + 1}" for j in range(points.shape[1]))
    np.savetxt(path, points, delimiter=",", header=header, comments="", fmt="%.17g")


class PointsFormatError(ValueError):
    pass


def read_points_csv(path) -> np.ndarray:
    """Read points written with a ``x1,...,xk`` header row, one point per line."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PointsFormatError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    k = len(header)
    if header != [f"x{j + 1}" for j in range(k)]:
        raise PointsFormatError(f"{path}: line 1: expected header x1,...,xk, got {rows[0]}")
    pts = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != k:
            raise PointsFormatError(f"{path}: line {lineno}: expected {k} columns, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise PointsFormatError(f"{path}: line {lineno}: non-numeric value in {row}") from None
        if not all(math.isfinite(v) for v in vals):
            raise PointsFormatError(f"{path}: line {lineno}: non-finite value in {row}")
        pts.append(vals)
    return np.array(pts, dtype=float).reshape(-1, k)


@dataclass(frozen=True)
class DensityModel:
    """Base class for analytic densities.

    Subclasses provide ``pdf``, ``grad``, ``_draw`` and the level oracles.
    ``boundary_integral(t, g)`` is the surface integral of ``g / |grad f|``
    over ``{f = t}``; ``g`` is ``"one"``, ``"f"`` or a callable on points.
    """

    name: str = field(init=False)
    k: int = field(init=False)

    # bounding box that carries all but a negligible fraction of the mass
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @property
    def theta(self) -> tuple[float, float]:
        raise NotImplementedError

    @property
    def sup_f(self) -> float:
        raise NotImplementedError

    @property
    def metadata(self) -> dict:
        return {}

    def pdf(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, n: int, seed: int) -> SampleSet:
        if n < 1:
            raise ValueError("sample size must be >= 1")
        rng = np.random.default_rng(seed)
        return SampleSet(self._draw(n, rng), seed, self.name)

    def _draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _check_level(self, t: float) -> None:
        if not 0.0 < t < self.sup_f:
            raise LevelOutOfRangeError(f"level {t} outside (0, sup f = {self.sup_f})")

    def check_theta(self, t: float) -> None:
        lo, hi = self.theta
        if not lo < t < hi:
            raise LevelOutOfRangeError(f"level {t} outside the declared interval Theta = ({lo}, {hi})")

    def rasterize(self, grid: GridSpec) -> ScalarField:
        return ScalarField.from_function(grid, self.pdf)

    def level_volume(self, t: float) -> float:
        raise NotImplementedError

    def level_mass(self, t: float) -> float:
        raise NotImplementedError

    def quantile_level(self, p: float) -> float:
        raise NotImplementedError

    def boundary_integral(self, t: float, g="one") -> float:
        raise NotImplementedError

    def _boundary_weight(self, t: float, g) -> float:
        """Reduce a weight tag to a constant on ``{f = t}`` where possible."""
        if g == "one":
            return 1.0
        if g == "f":
            return t
        if isinstance(g, (int, float)):
            return float(g)
        raise ModelError(f"closed-form boundary integral needs g in {{'one', 'f'}} or a constant, got {g!r}")


@dataclass(frozen=True)
class Gaussian2D(DensityModel):
    """Isotropic bivariate normal with standard deviation ``sigma``.

    The Gaussian tail violates the compact-support consequence of the
    no-flat-parts hypothesis; it is kept because every oracle is closed form.
    """

    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ModelError("sigma must be positive")
        object.__setattr__(self, "name", "gaussian2d")
        object.__setattr__(self, "k", 2)

    @property
    def _s2(self) -> float:
        return self.sigma ** 2

    @property
    def sup_f(self) -> float:
        return 1.0 / (2.0 * math.pi * self._s2)

    @property
    def theta(self) -> tuple[float, float]:
        return 0.02 / self._s2, 0.14 / self._s2

    @property
    def metadata(self) -> dict:
        return {"compact_support": False,
                "note": "unbounded support: lambda(f^-1(0, eps]) does not vanish"}

    def bounding_box(self):
        r = 6.0 * self.sigma
        return np.array([-r, -r]), np.array([r, r])

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        return np.exp(-r2 / (2.0 * self._s2)) / (2.0 * math.pi * self._s2)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return -x / self._s2 * self.pdf(x)[..., None]

    def _draw(self, n, rng):
        return self.sigma * rng.standard_normal((n, 2))

    def level_radius(self, t: float) -> float:
        self._check_level(t)
        return self.sigma * math.sqrt(-2.0 * math.log(2.0 * math.pi * self._s2 * t))

    def level_volume(self, t):
        return math.pi * self.level_radius(t) ** 2

    def level_mass(self, t):
        if t <= 0:
            return 1.0
        if t >= self.sup_f:
            return 0.0
        return 1.0 - 2.0 * math.pi * self._s2 * t

    def quantile_level(self, p):
        if not 0.0 <= p <= 1.0:
            raise ModelError(f"probability {p} outside [0, 1]")
        return (1.0 - p) / (2.0 * math.pi * self._s2)

    def boundary_integral(self, t, g="one"):
        self._check_level(t)
        if callable(g):
            r = self.level_radius(t)
            phi = np.linspace(0.0, 2.0 * math.pi, 4097)[:-1]
            pts = r * np.column_stack([np.cos(phi), np.sin(phi)])
            # integrand constant |grad f| = r t / sigma^2 on the circle
            return float(np.mean(g(pts))) * 2.0 * math.pi * r / (r * t / self._s2)
        return self._boundary_weight(t, g) * 2.0 * math.pi * self._s2 / t


@dataclass(frozen=True)
class BumpMixture(DensityModel):
    """Mixture of C^2 radial bumps ``(1 - |x - c|^2 / R^2)^3`` with disjoint supports."""

    centers: tuple = ((-1.5, 0.0), (1.5, 0.0))
    weights: tuple = (0.5, 0.5)
    radius: float = 1.0
    max_proposals_factor: int = 10 ** 6

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if centers.shape[0] != weights.size:
            raise ModelError("one weight per center is required")
        if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-12):
            raise ModelError("weights must be nonnegative and sum to 1")
        if not self.radius > 0:
            raise ModelError("radius must be positive")
        for i in range(len(centers)):
            for j in range(i):
                if np.linalg.norm(centers[i] - centers[j]) <= 2 * self.radius:
                    raise ModelError(f"bump supports {j} and {i} overlap (centers closer than 2R)")
        object.__setattr__(self, "centers", tuple(map(tuple, centers.tolist())))
        object.__setattr__(self, "weights", tuple(weights.tolist()))
        object.__setattr__(self, "name", "bump_mixture")
        object.__setattr__(self, "k", centers.shape[1])

    @property
    def _c(self) -> np.ndarray:
        return np.asarray(self.centers)

    @property
    def _w(self) -> np.ndarray:
        return np.asarray(self.weights)

    @property
    def unit_mass(self) -> float:
        """Integral of ``(1 - |x|^2/R^2)^3`` over R^k."""
        k = self.k
        return self.radius ** k * math.pi ** (k / 2) * math.gamma(4) / math.gamma(4 + k / 2)

    @property
    def peaks(self) -> np.ndarray:
        """Maximum value of each component."""
        return self._w / self.unit_mass

    @property
    def sup_f(self):
        return float(self.peaks.max())

    @property
    def theta(self):
        # levels below every active peak; a component whose peak sits inside
        # theta would have a vanishing gradient at its top
        active = self.peaks[self.peaks > 0]
        return 0.0, float(active.min())

    @property
    def metadata(self):
        return {"compact_support": True}

    def bounding_box(self):
        c = self._c
        return c.min(axis=0) - self.radius, c.max(axis=0) + self.radius

    def _profile_parts(self, x):
        x = np.asarray(x, dtype=float)
        d = x[..., None, :] - self._c
        s = np.sum(d * d, axis=-1) / self.radius ** 2
        return d, np.clip(1.0 - s, 0.0, None)

    def pdf(self, x):
        _, u = self._profile_parts(x)
        return np.sum(self.peaks * u ** 3, axis=-1)

    def grad(self, x):
        d, u = self._profile_parts(x)
        coef = self.peaks * 3.0 * u ** 2 * (-2.0 / self.radius ** 2)
        return np.sum(coef[..., None] * d, axis=-2)

    def _draw(self, n, rng):
        k = self.k
        comp = rng.choice(len(self.weights), size=n, p=self._w)
        out = np.empty((n, k))
        budget = self.max_proposals_factor * n
        used = 0
        for j in range(len(self.weights)):
            need = int(np.count_nonzero(comp == j))
            got = []
            while need > 0:
                batch = max(64, 5 * need)
                used += batch
                if used > budget:
                    raise ModelError("rejection sampler exceeded its proposal budget")
                direction = rng.standard_normal((batch, k))
                direction /= np.linalg.norm(direction, axis=1, keepdims=True)
                rad = rng.random(batch) ** (1.0 / k)
                accept = rng.random(batch) < (1.0 - rad ** 2) ** 3
                pts = direction[accept][:need] * (self.radius * rad[accept][:need, None])
                got.append(pts)
                need -= pts.shape[0]
            if got:
                out[comp == j] = self._c[j] + np.concatenate(got)
        return out

    def component_radius(self, t: float) -> np.ndarray:
        """Radius of ``{f_i >= t}`` for every component (0 when t exceeds its peak)."""
        peaks = self.peaks
        ratio = np.divide(t, peaks, out=np.full_like(peaks, np.inf), where=peaks > 0)
        s = np.where(ratio < 1.0, 1.0 - np.cbrt(np.minimum(ratio, 1.0)), 0.0)
        return self.radius * np.sqrt(s)

    def level_volume(self, t):
        # components whose peak lies below t contribute nothing, so t >= sup_f gives 0
        if not t > 0:
            raise LevelOutOfRangeError(f"level {t} must be positive")
        k = self.k
        ball = math.pi ** (k / 2) / math.gamma(k / 2 + 1)
        return float(np.sum(ball * self.component_radius(t) ** k))

    def level_mass(self, t):
        if t <= 0:
            return 1.0
        if t >= self.sup_f:
            return 0.0
        k, R = self.k, self.radius
        total = 0.0
        for peak, r in zip(self.peaks, self.component_radius(t)):
            if r > 0:
                val, _ = integrate.quad(lambda q: (1.0 - q * q / R ** 2) ** 3 * q ** (k - 1), 0.0, r,
                                        epsabs=1e-14, epsrel=1e-12)
                total += peak * sphere_area(k) * val
        return total

    def quantile_level(self, p):
        if not 0.0 <= p <= 1.0:
            raise ModelError(f"probability {p} outside [0, 1]")
        if p == 1.0:
            return 0.0
        if p == 0.0:
            return self.sup_f
        return optimize.brentq(lambda t: self.level_mass(t) - p, 0.0, self.sup_f, xtol=1e-15, rtol=1e-14)

    def boundary_integral(self, t, g="one"):
        self._check_level(t)
        if callable(g):
            raise ModelError("bump boundary integrals support g in {'one', 'f'} or constants")
        k, R = self.k, self.radius
        total = 0.0
        for peak, r in zip(self.peaks, self.component_radius(t)):
            if r > 0:
                u = 1.0 - r * r / R ** 2
                grad_norm = peak * 6.0 * u ** 2 * r / R ** 2
                total += sphere_area(k) * r ** (k - 1) / grad_norm
        return self._boundary_weight(t, g) * total

    def n_components_above(self, t: float) -> int:
        return int(np.count_nonzero(self.peaks > t))


_MODELS: dict[str, Callable[..., DensityModel]] = {
    "gaussian2d": Gaussian2D,
    "bump_mixture": BumpMixture,
}


def gaussian2d_oracles(sigma: float = 1.0) -> Gaussian2D:
    return Gaussian2D(sigma=sigma)


def bump_mixture_oracles(centers, weights, radius: float) -> BumpMixture:
    return BumpMixture(centers=tuple(map(tuple, centers)), weights=tuple(weights), radius=radius)


def make_model(name: str, **params) -> DensityModel:
    try:
        factory = _MODELS[name]
    except KeyError:
        raise ModelError(f"unknown model {name!r}; choose from {sorted(_MODELS)}") from None
    return factory(**params)


def sample(model: DensityModel, n: int, seed: int) -> SampleSet:
    return model.sample(n, seed)


def h2_min_gradient(model: DensityModel, t: float, spacing: float = 0.01) -> float:
    """Minimum of ``|grad f|`` at grid edges where ``f - t`` changes sign."""
    lo, hi = model.bounding_box()
    grid = GridSpec.covering(lo, hi, spacing)
    vals = model.rasterize(grid).as_array() - t
    best = math.inf
    nodes = grid.nodes().reshape(*grid.dims, grid.k)
    for axis in range(grid.k):
        a = np.take(vals, range(vals.shape[axis] - 1), axis=axis)
        b = np.take(vals, range(1, vals.shape[axis]), axis=axis)
        cross = (a >= 0) != (b >= 0)
        if not np.any(cross):
            continue
        pa = np.take(nodes, range(vals.shape[axis] - 1), axis=axis)[cross]
        pb = np.take(nodes, range(1, vals.shape[axis]), axis=axis)[cross]
        wa, wb = a[cross], b[cross]
        # linear interpolation of the crossing point
        lam = (wa / (wa - wb))[:, None]
        pts = pa + lam * (pb - pa)
        best = min(best, float(np.min(np.linalg.norm(model.grad(pts), axis=-1))))
    return best
