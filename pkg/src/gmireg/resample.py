"""Interpolated sampling of the moving volume on the transformed fixed grid.

A physical point is *inside* a volume when its continuous voxel coordinate
lies in ``[-0.5, n - 0.5)`` on every axis, i.e. within the footprint of the
voxel grid. The rule is the same for all interpolators, so the overlap (and
therefore the pair count fed to the histogram) never depends on the
interpolator. Trilinear and Lanczos reads near the border replicate edge
voxels.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import EmptyOverlapError
from .volume import Volume

__all__ = [
    "InterpKind",
    "Interpolator",
    "PairSet",
    "sample",
    "sample_points",
    "transformed_pairs",
    "lanczos_kernel",
    "fast_lanczos_kernel",
    "fast_sin",
]

FAST_SIN_TABLE_SIZE = 4096


class InterpKind(str, enum.Enum):
    NEAREST = "nearest"
    TRILINEAR = "trilinear"
    LANCZOS = "lanczos"
    FAST_LANCZOS = "fastlanczos"


@dataclass(frozen=True)
class Interpolator:
    kind: InterpKind = InterpKind.NEAREST
    radius: int = 3

    def __post_init__(self):
        kind = self.kind
        if not isinstance(kind, InterpKind):
            try:
                kind = InterpKind(str(kind).lower().replace("_", "").replace("-", ""))
            except ValueError:
                raise ValueError(
                    f"unknown interpolator {self.kind!r}; expected one of {[k.value for k in InterpKind]}"
                ) from None
        object.__setattr__(self, "kind", kind)
        if int(self.radius) < 1:
            raise ValueError("Lanczos radius must be >= 1")
        object.__setattr__(self, "radius", int(self.radius))

    @classmethod
    def parse(cls, value) -> "Interpolator":
        if isinstance(value, Interpolator):
            return value
        return cls(value)

    def __str__(self):
        return self.kind.value


# sin over one period [0, 2*pi], endpoint included so interpolation never wraps.
_SIN_TABLE = np.sin(np.linspace(0.0, 2.0 * np.pi, FAST_SIN_TABLE_SIZE + 1))
_SIN_TABLE[[0, FAST_SIN_TABLE_SIZE // 2, FAST_SIN_TABLE_SIZE]] = 0.0


def fast_sin(x):
    """Table-driven sine: 4096 samples per period with linear interpolation."""
    x = np.asarray(x, dtype=np.float64)
    t = np.mod(x, 2.0 * np.pi) * (FAST_SIN_TABLE_SIZE / (2.0 * np.pi))
    i = np.minimum(t.astype(np.int64), FAST_SIN_TABLE_SIZE - 1)
    frac = t - i
    return _SIN_TABLE[i] + frac * (_SIN_TABLE[i + 1] - _SIN_TABLE[i])


def lanczos_kernel(x, a: int = 3, sin=np.sin):
    """Lanczos window ``sinc(x) * sinc(x / a)`` for ``|x| < a``, zero outside."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    small = np.abs(x) < 1e-12
    inside = (np.abs(x) < a) & ~small
    xi = x[inside]
    out[inside] = a * sin(np.pi * xi) * sin(np.pi * xi / a) / (np.pi * np.pi * xi * xi)
    out[small] = 1.0
    return out


def fast_lanczos_kernel(x, a: int = 3):
    return lanczos_kernel(x, a, sin=fast_sin)


def _continuous_index(v: Volume, pts: np.ndarray) -> np.ndarray:
    return (pts - np.asarray(v.origin)) / np.asarray(v.spacing)


def _inside(v: Volume, ci: np.ndarray) -> np.ndarray:
    dims = np.asarray(v.dims)
    return np.all((ci >= -0.5) & (ci < dims - 0.5), axis=1)


def _nearest(data: np.ndarray, ci: np.ndarray) -> np.ndarray:
    idx = np.floor(ci + 0.5).astype(np.int64)
    np.clip(idx, 0, np.asarray(data.shape) - 1, out=idx)
    return data[idx[:, 0], idx[:, 1], idx[:, 2]].astype(np.float64)


def _trilinear(data: np.ndarray, ci: np.ndarray) -> np.ndarray:
    dims = np.asarray(data.shape)
    c = np.clip(ci, 0.0, dims - 1)
    i0 = np.clip(np.floor(c).astype(np.int64), 0, np.maximum(dims - 2, 0))
    i1 = np.minimum(i0 + 1, dims - 1)
    w = c - i0
    out = np.zeros(len(ci))
    for bx in (0, 1):
        ix = i1[:, 0] if bx else i0[:, 0]
        wx = w[:, 0] if bx else 1.0 - w[:, 0]
        for by in (0, 1):
            iy = i1[:, 1] if by else i0[:, 1]
            wy = w[:, 1] if by else 1.0 - w[:, 1]
            for bz in (0, 1):
                iz = i1[:, 2] if bz else i0[:, 2]
                wz = w[:, 2] if bz else 1.0 - w[:, 2]
                out += wx * wy * wz * data[ix, iy, iz]
    return out


def _lanczos(data: np.ndarray, ci: np.ndarray, a: int, kernel) -> np.ndarray:
    dims = np.asarray(data.shape)
    base = np.floor(ci).astype(np.int64)
    offsets = np.arange(-a + 1, a + 1)
    taps, weights = [], []
    for ax in range(3):
        t = base[:, ax, None] + offsets[None, :]
        wt = kernel(ci[:, ax, None] - t, a)
        # Normalizing keeps constants exact; raw Lanczos weights sum to 1 only approximately.
        wt /= wt.sum(axis=1, keepdims=True)
        taps.append(np.clip(t, 0, dims[ax] - 1))
        weights.append(wt)
    out = np.zeros(len(ci))
    for jx in range(2 * a):
        wx = weights[0][:, jx]
        ix = taps[0][:, jx]
        for jy in range(2 * a):
            wxy = wx * weights[1][:, jy]
            iy = taps[1][:, jy]
            for jz in range(2 * a):
                out += wxy * weights[2][:, jz] * data[ix, iy, taps[2][:, jz]]
    return out


def _interpolate(v: Volume, ci: np.ndarray, interp: Interpolator) -> np.ndarray:
    data = v.data
    kind = interp.kind
    if kind is InterpKind.NEAREST:
        return _nearest(data, ci)
    if kind is InterpKind.TRILINEAR:
        return _trilinear(data, ci)
    kernel = lanczos_kernel if kind is InterpKind.LANCZOS else fast_lanczos_kernel
    return _lanczos(data, ci, interp.radius, kernel)


def sample_points(v: Volume, pts, interp=Interpolator()) -> tuple[np.ndarray, np.ndarray]:
    """Interpolate ``v`` at an (N, 3) array of physical points.

    Returns
    -------
    values : ndarray of float64, shape (M,)
        Interpolated intensities for the inside points, in input order.
    inside : ndarray of bool, shape (N,)
    """
    interp = Interpolator.parse(interp)
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    ci = _continuous_index(v, pts)
    inside = _inside(v, ci)
    return _interpolate(v, ci[inside], interp), inside


def sample(v: Volume, pt, interp=Interpolator()) -> float | None:
    """Intensity at one physical point, or ``None`` outside the volume."""
    values, inside = sample_points(v, np.asarray(pt, dtype=np.float64).reshape(1, 3), interp)
    return float(values[0]) if inside[0] else None


@lru_cache(maxsize=8)
def _grid_points(dims, spacing, origin) -> np.ndarray:
    idx = np.indices(dims, dtype=np.float64).reshape(3, -1).T
    pts = idx * np.asarray(spacing) + np.asarray(origin)
    pts.setflags(write=False)
    return pts


def fixed_grid_points(v: Volume) -> np.ndarray:
    """Physical coordinates of every voxel of ``v`` in C (data.ravel()) order."""
    return _grid_points(v.dims, v.spacing, v.origin)


@dataclass(frozen=True)
class PairSet:
    """Fixed/moving intensity pairs over the overlap of two volumes."""

    fixed: np.ndarray
    moving: np.ndarray

    @property
    def count(self) -> int:
        return int(len(self.fixed))

    def __len__(self):
        return self.count

    def __iter__(self):
        return zip(self.fixed.tolist(), self.moving.tolist())


def _separable_nearest_pairs(fixed: Volume, moving: Volume, m: np.ndarray) -> PairSet:
    # Diagonal linear part: each moving coordinate depends on one fixed index,
    # so the overlap is a box and the gather is an outer product of 1D indices.
    # Pair order matches the generic path (fixed voxels in C order).
    keep, take = [], []
    for ax in range(3):
        i = np.arange(fixed.dims[ax], dtype=np.float64)
        phys = fixed.origin[ax] + fixed.spacing[ax] * i
        ci = (m[ax, ax] * phys + m[ax, 3] - moving.origin[ax]) / moving.spacing[ax]
        inside = (ci >= -0.5) & (ci < moving.dims[ax] - 0.5)
        keep.append(np.flatnonzero(inside))
        take.append(np.floor(ci[inside] + 0.5).astype(np.int64))
    if any(len(k) == 0 for k in keep):
        raise EmptyOverlapError("transformed fixed grid does not overlap the moving volume")
    f = fixed.data[np.ix_(*keep)].ravel()
    mv = moving.data[np.ix_(*take)].ravel().astype(np.float64)
    return PairSet(f, mv)


def transformed_pairs(
    fixed: Volume,
    moving: Volume,
    m: np.ndarray,
    interp=Interpolator(),
    outside: str = "exclude",
) -> PairSet:
    """Pair every fixed voxel with the moving intensity at its mapped point.

    Parameters
    ----------
    m : ndarray, shape (4, 4)
        Fixed-to-moving physical transform.
    outside : {'exclude', 'zero'}
        Drop fixed voxels that map outside the moving volume (default), or
        pair them with intensity 0.

    Raises
    ------
    EmptyOverlapError
        When no pair survives (only possible with ``outside='exclude'``).
    """
    interp = Interpolator.parse(interp)
    m = np.asarray(m, dtype=np.float64)
    linear = m[:3, :3]
    if outside == "exclude" and interp.kind is InterpKind.NEAREST and not np.any(linear - np.diag(np.diag(linear))):
        return _separable_nearest_pairs(fixed, moving, m)
    pts = fixed_grid_points(fixed) @ linear.T + m[:3, 3]
    values, inside = sample_points(moving, pts, interp)
    fixed_values = fixed.data.ravel()
    if outside == "exclude":
        if not inside.any():
            raise EmptyOverlapError("transformed fixed grid does not overlap the moving volume")
        return PairSet(fixed_values[inside], values)
    if outside == "zero":
        full = np.zeros(len(pts))
        full[inside] = values
        return PairSet(fixed_values, full)
    raise ValueError(f"unknown outside policy {outside!r}")
