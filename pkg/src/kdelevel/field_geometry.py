"""Regular grids, scalar and indicator fields, and cell-counting measures.

Every grid node stands for its whole cell of volume ``spacing**k``; all
measures are midpoint sums over cells, with no sub-cell interpolation.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Nodes ``origin + index * spacing`` over a box of ``dims`` nodes per axis."""

    origin: tuple[float, ...]
    spacing: float
    dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.origin) != len(self.dims):
            raise ValueError("origin and dims must have the same length")
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        if any(d < 1 for d in self.dims):
            raise ValueError("grid dims must be positive")

    @classmethod
    def covering(cls, lower, upper, spacing: float) -> "GridSpec":
        """Smallest grid on the lattice ``spacing * Z^k`` whose nodes span [lower, upper]."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        start = np.floor(lower / spacing)
        stop = np.ceil(upper / spacing)
        return cls(tuple(start * spacing), spacing, tuple((stop - start).astype(int) + 1))

    @property
    def k(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.k

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(o + (d - 1) * self.spacing for o, d in zip(self.origin, self.dims))

    def axes(self) -> list[np.ndarray]:
        return [o + np.arange(d) * self.spacing for o, d in zip(self.origin, self.dims)]

    def node(self, index) -> np.ndarray:
        """Coordinates of the node with multi-index ``index``."""
        return np.array([o + i * self.spacing for o, i in zip(self.origin, index)])

    def nodes(self) -> np.ndarray:
        """All node coordinates, row-major, shape (size, k)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def contains_box(self, lower, upper) -> bool:
        return all(o <= lo and hi <= u for o, u, lo, hi in zip(self.origin, self.upper, lower, upper))


@dataclass(frozen=True)
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=float).ravel()
        if vals.size != self.grid.size:
            raise ValueError(f"field has {vals.size} values for a grid of {self.grid.size} nodes")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: GridSpec, func) -> "ScalarField":
        """Sample a vectorized function ``(m, k) -> (m,)`` at every node."""
        return cls(grid, func(grid.nodes()))

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.dims)

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class IndicatorField:
    grid: GridSpec
    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool).ravel()
        if bits.size != self.grid.size:
            raise ValueError(f"indicator has {bits.size} bits for a grid of {self.grid.size} nodes")
        object.__setattr__(self, "bits", bits)

    def as_array(self) -> np.ndarray:
        return self.bits.reshape(self.grid.dims)

    def _check(self, other: "IndicatorField") -> None:
        if other.grid != self.grid:
            raise GridMismatchError("indicator fields live on different grids")

    def __and__(self, other):
        self._check(other)
        return IndicatorField(self.grid, self.bits & other.bits)

    def __or__(self, other):
        self._check(other)
        return IndicatorField(self.grid, self.bits | other.bits)

    def __xor__(self, other):
        self._check(other)
        return IndicatorField(self.grid, self.bits ^ other.bits)

    def __invert__(self):
        return IndicatorField(self.grid, ~self.bits)

    def __le__(self, other):
        """Set inclusion."""
        self._check(other)
        return bool(np.all(~self.bits | other.bits))

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))


def threshold(field: ScalarField, t: float) -> IndicatorField:
    """Closed superlevel set ``{field >= t}``."""
    return IndicatorField(field.grid, field.values >= t)


def _weights(grid: GridSpec, weight: ScalarField | None) -> np.ndarray | None:
    if weight is None:
        return None
    if weight.grid != grid:
        raise GridMismatchError("weight field lives on a different grid")
    return weight.values


def measure(ind: IndicatorField, weight: ScalarField | None = None) -> float:
    """Lebesgue measure of the set, or its g-weighted measure when ``weight`` is given."""
    w = _weights(ind.grid, weight)
    if w is None:
        return ind.count() * ind.grid.cell_volume
    return float(np.sum(w[ind.bits])) * ind.grid.cell_volume


def symmetric_difference_measure(a: IndicatorField, b: IndicatorField,
                                 weight: ScalarField | None = None) -> float:
    return measure(a ^ b, weight)


def band_indicator(field: ScalarField, a: float, b: float) -> IndicatorField:
    if a > b:
        raise ValueError(f"empty band: a={a} > b={b}")
    return IndicatorField(field.grid, (field.values >= a) & (field.values <= b))


def band_measure(field: ScalarField, a: float, b: float,
                 weight: ScalarField | None = None) -> float:
    """Measure of the closed value band ``field^-1[a, b]``."""
    return measure(band_indicator(field, a, b), weight)


MIN_BAND_CELLS = 1000


def boundary_integral_band(field: ScalarField, t: float, eps: float,
                           weight: ScalarField | None = None,
                           min_cells: int = MIN_BAND_CELLS) -> float:
    """Estimate ``int_{field = t} g / |grad field| dH`` as a band-measure derivative.

    By the coarea formula the band ``[t - eps, t + eps]`` has g-measure
    ``int_{t-eps}^{t+eps} (surface integral at s) ds``; dividing by ``2 eps``
    recovers the surface integral as eps -> 0.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    lo, hi = float(field.values.min()), float(field.values.max())
    if t - eps < lo or t + eps > hi:
        raise ValueError(f"band [{t - eps}, {t + eps}] is not inside the field range [{lo}, {hi}]")
    band = band_indicator(field, t - eps, t + eps)
    if band.count() < min_cells:
        raise ValueError(
            f"band [{t - eps}, {t + eps}] covers only {band.count()} cells (< {min_cells}); "
            "use a larger eps or a finer grid spacing"
        )
    return measure(band, weight) / (2.0 * eps)


def min_band_eps(spacing: float, grad_sup: float, cells: float = 5.0) -> float:
    """Smallest band half-width spanning ``cells`` grid cells across the band."""
    return cells * spacing * grad_sup


def tie_count(field: ScalarField, t: float) -> int:
    """Number of nodes whose value equals ``t`` exactly."""
    return int(np.count_nonzero(field.values == t))


def connected_components(ind: IndicatorField) -> tuple[int, np.ndarray]:
    """Label face-connected components.

    Labels are 1..count, assigned in order of first appearance in a row-major
    scan; background is 0.  Returns ``(count, labels)`` with labels shaped
    like the grid.
    """
    structure = ndimage.generate_binary_structure(ind.grid.k, 1)
    raw, count = ndimage.label(ind.as_array(), structure=structure)
    if count:
        # enforce first-visit numbering regardless of the labeler's internals
        labels, first = np.unique(raw.ravel(), return_index=True)
        keep = labels > 0
        ordered = labels[keep][np.argsort(first[keep])]
        remap = np.zeros(count + 1, dtype=np.int64)
        remap[ordered] = np.arange(1, count + 1)
        raw = remap[raw]
    return int(count), raw.astype(np.int64)


# Binary layout: little-endian int64 k, int64 dims[k], float64 origin[k],
# float64 spacing, then the row-major payload (float64 values or uint8 bits).

def _header(grid: GridSpec) -> bytes:
    k = grid.k
    return struct.pack(f"<q{k}q{k}dd", k, *grid.dims, *grid.origin, grid.spacing)


def write_field(path, field: ScalarField | IndicatorField) -> None:
    if isinstance(field, ScalarField):
        payload = field.values.astype("<f8").tobytes()
    else:
        payload = field.bits.astype(np.uint8).tobytes()
    Path(path).write_bytes(_header(field.grid) + payload)


def read_field(path) -> ScalarField | IndicatorField:
    """Read a field written by :func:`write_field`; the payload size tells the kind."""
    data = Path(path).read_bytes()
    (k,) = struct.unpack_from("<q", data, 0)
    if k < 1 or 8 + 16 * k + 8 > len(data):
        raise ValueError(f"{path}: corrupt field header")
    dims = struct.unpack_from(f"<{k}q", data, 8)
    origin = struct.unpack_from(f"<{k}d", data, 8 + 8 * k)
    (spacing,) = struct.unpack_from("<d", data, 8 + 16 * k)
    grid = GridSpec(origin, spacing, dims)
    body = data[16 + 16 * k:]
    if len(body) == 8 * grid.size:
        return ScalarField(grid, np.frombuffer(body, dtype="<f8").astype(float))
    if len(body) == grid.size:
        return IndicatorField(grid, np.frombuffer(body, dtype=np.uint8).astype(bool))
    raise ValueError(f"{path}: payload of {len(body)} bytes does not match grid of {grid.size} nodes")


def write_field_csv(path, field: ScalarField | IndicatorField) -> None:
    """Write ``x,value`` or ``x,y,value`` rows for plotting (k <= 2)."""
    grid = field.grid
    if grid.k > 2:
        raise ValueError("CSV export is only supported for k <= 2")
    vals = field.values if isinstance(field, ScalarField) else field.bits.astype(int)
    cols = ["x", "y"][: grid.k] + ["value"]
    table = np.column_stack([grid.nodes(), vals])
    fmt = ["%.17g"] * grid.k + (["%.17g"] if isinstance(field, ScalarField) else ["%d"])
    np.savetxt(path, table, delimiter=",", header=",".join(cols), comments="", fmt=fmt)
