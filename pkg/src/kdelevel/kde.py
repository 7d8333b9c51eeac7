"""Kernel density estimate ``f_n(x) = (n h^k)^-1 sum_i K((x - X_i) / h)``.

Grid evaluation scatters each sample's compact footprint onto the nodes it
reaches.  Both the pointwise and the grid path add kernel contributions in
sample order with plain sequential float addition, so the two agree bit for
bit at every node.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .field_geometry import GridSpec, ScalarField
from .kernels import Kernel
from .models import SampleSet

_CHUNK = 4096


class GridTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class KdeSpec:
    kernel: Kernel
    h: float
    sample: SampleSet

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("bandwidth must be positive")
        if self.kernel.dimension != self.sample.k:
            raise ValueError(
                f"kernel dimension {self.kernel.dimension} != sample dimension {self.sample.k}"
            )

    @property
    def points(self) -> np.ndarray:
        return self.sample.points

    @property
    def norm(self) -> float:
        return self.sample.n * self.h ** self.kernel.dimension

    def required_box(self) -> tuple[np.ndarray, np.ndarray]:
        reach = self.h * self.kernel.support_radius
        return self.points.min(axis=0) - reach, self.points.max(axis=0) + reach


def _sq_radius(diffs: list[np.ndarray]) -> np.ndarray:
    # fixed left-to-right order over axes so every code path rounds identically
    r2 = diffs[0] * diffs[0]
    for d in diffs[1:]:
        r2 = r2 + d * d
    return r2


def evaluate(spec: KdeSpec, x) -> float | np.ndarray:
    """Exact KDE value at one point (shape (k,)) or many (shape (m, k))."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    if xs.shape[-1] != spec.kernel.dimension:
        raise ValueError("query dimension does not match the kernel")
    pts = spec.points
    out = np.empty(xs.shape[0])
    step = max(1, _CHUNK * 16 // max(1, pts.shape[0]))
    for s in range(0, xs.shape[0], step):
        q = xs[s:s + step]
        diffs = [(q[:, j, None] - pts[None, :, j]) / spec.h for j in range(q.shape[1])]
        vals = spec.kernel.radial(np.sqrt(_sq_radius(diffs)))
        out[s:s + step] = np.add.accumulate(vals, axis=1)[:, -1]
    out /= spec.norm
    return float(out[0]) if single else out


def _footprint(kernel: Kernel, h: float, spacing: float) -> np.ndarray:
    """Node offsets, relative to the cell holding a sample, that its kernel can reach."""
    k = kernel.dimension
    reach = h * kernel.support_radius
    m = int(np.ceil(reach / spacing))
    offsets = np.array(list(product(range(-m, m + 2), repeat=k)), dtype=np.int64)
    gap = np.maximum(0, np.maximum(-offsets, offsets - 1)) * spacing
    keep = np.sum(gap * gap, axis=1) <= reach * reach * (1 + 1e-12)
    return offsets[keep]


def evaluate_grid(spec: KdeSpec, grid: GridSpec) -> ScalarField:
    """KDE at every node of ``grid`` by scattering kernel footprints."""
    lo, hi = spec.required_box()
    if not grid.contains_box(lo, hi):
        raise GridTooSmallError(
            f"grid box {list(grid.origin)}..{list(grid.upper)} does not cover the "
            f"sample support dilated by h: need {lo.tolist()}..{hi.tolist()}"
        )
    k = grid.k
    origin = np.asarray(grid.origin)
    dims = np.asarray(grid.dims)
    strides = np.array([int(np.prod(grid.dims[j + 1:])) for j in range(k)], dtype=np.int64)
    offsets = _footprint(spec.kernel, spec.h, grid.spacing)
    acc = np.zeros(grid.size)
    pts = spec.points
    for s in range(0, pts.shape[0], _CHUNK):
        chunk = pts[s:s + _CHUNK]
        base = np.floor((chunk - origin) / grid.spacing).astype(np.int64)
        idx = base[:, None, :] + offsets[None, :, :]          # (c, m, k), sample-major
        inside = np.all((idx >= 0) & (idx < dims), axis=-1)
        diffs = [((origin[j] + idx[..., j] * grid.spacing) - chunk[:, None, j]) / spec.h
                 for j in range(k)]
        vals = spec.kernel.radial(np.sqrt(_sq_radius(diffs)))
        flat = idx @ strides
        use = inside & (vals > 0)
        # np.add.at applies updates in index order, preserving per-node sample order
        np.add.at(acc, flat[use], vals[use])
    return ScalarField(grid, acc / spec.norm)


def evaluate_grid_gather(spec: KdeSpec, grid: GridSpec) -> ScalarField:
    """Reference grid evaluation: pointwise ``evaluate`` at every node."""
    return ScalarField(grid, evaluate(spec, grid.nodes()))


def grid_for(spec: KdeSpec, spacing: float, lower=None, upper=None) -> GridSpec:
    """Lattice-aligned grid covering the dilated sample support and an optional box."""
    lo, hi = spec.required_box()
    if lower is not None:
        lo = np.minimum(lo, lower)
    if upper is not None:
        hi = np.maximum(hi, upper)
    return GridSpec.covering(lo, hi, spacing)


def gradient(spec: KdeSpec, x) -> np.ndarray:
    """Analytic gradient of the KDE at one point (k,) or many (m, k)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    pts = spec.points
    out = np.empty_like(xs)
    step = max(1, _CHUNK * 16 // max(1, pts.shape[0]))
    for s in range(0, xs.shape[0], step):
        u = (xs[s:s + step, None, :] - pts[None, :, :]) / spec.h
        r = np.sqrt(np.sum(u * u, axis=-1))
        dmu = spec.kernel.radial_derivative(r)
        coef = np.divide(dmu, r, out=np.zeros_like(r), where=r > 0)
        out[s:s + step] = np.sum(coef[..., None] * u, axis=1)
    out /= spec.norm * spec.h
    return out[0] if single else out
