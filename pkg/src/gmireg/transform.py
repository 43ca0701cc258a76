"""Separable affine transform families and the metric-cube parameter mapping.

Each family owns three parameters. Translation parameters are millimetre
offsets; rotation, scale and skew parameters are *cube coordinates* in
[-1, 1] that are mapped to angles, factors or shear coefficients:

==========  =====================================================
Rotation    ``theta_i = 2 * asin(c_i)``, so c = +-1 is +-180 deg
Scale       ``f = 1 + c`` for c >= 0, ``f = 1 / (1 + |c|)`` for c < 0
Skew        shear coefficient equals the coordinate
==========  =====================================================

Linear parts act about a center (the fixed image's physical center), giving
``T(center) @ L @ T(-center)``; a translation is ``T(t)`` alone.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "TransformKind",
    "AffineParams",
    "cube_index_to_params",
    "params_to_matrix",
    "apply_point",
    "rotation_matrix",
    "scale_factor",
    "DEFAULT_TRANSLATION_RANGE",
]

DEFAULT_TRANSLATION_RANGE = 150.0


class TransformKind(str, enum.Enum):
    TRANSLATION = "translation"
    ROTATION = "rotation"
    SCALE = "scale"
    SKEW = "skew"

    @classmethod
    def parse(cls, value) -> "TransformKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown transform kind {value!r}; expected one of {[k.value for k in cls]}"
            ) from None


@dataclass(frozen=True)
class AffineParams:
    """Three parameters of one transform family."""

    kind: TransformKind
    p: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "kind", TransformKind.parse(self.kind))
        p = tuple(float(x) for x in self.p)
        if len(p) != 3:
            raise ValueError(f"AffineParams needs exactly 3 values, got {len(p)}")
        object.__setattr__(self, "p", p)

    @classmethod
    def identity(cls, kind) -> "AffineParams":
        return cls(kind, (0.0, 0.0, 0.0))

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "p": list(self.p)}

    @classmethod
    def from_json(cls, obj) -> "AffineParams":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(obj["kind"], obj["p"])


def cube_index_to_params(
    idx: Sequence[int],
    R: int = 51,
    kind=TransformKind.TRANSLATION,
    translation_range: float = DEFAULT_TRANSLATION_RANGE,
) -> AffineParams:
    """Map an integer cube voxel to transform parameters.

    Axis indices map linearly onto ``[-translation_range, translation_range]``
    mm for translations and onto ``[-1, 1]`` for the other families; the
    center index ``(R - 1) / 2`` is the identity.

    >>> cube_index_to_params((26, 27, 29), 51).p
    (6.0, 12.0, 24.0)
    """
    kind = TransformKind.parse(kind)
    R = int(R)
    if R < 1 or R % 2 == 0:
        raise ValueError(f"cube resolution must be odd and positive, got {R}")
    idx = [int(i) for i in idx]
    if len(idx) != 3 or any(i < 0 or i >= R for i in idx):
        raise IndexError(f"cube index {idx} outside [0, {R - 1}]^3")
    half = (R - 1) // 2
    extent = translation_range if kind is TransformKind.TRANSLATION else 1.0
    if half == 0:
        return AffineParams.identity(kind)
    # (i - half) * extent / half keeps integer mm exact for the default grid.
    return AffineParams(kind, tuple((i - half) * extent / half for i in idx))


def scale_factor(c: float) -> float:
    """Cube coordinate -> scale factor; reciprocal-symmetric, range [0.5, 2]."""
    c = float(c)
    return 1.0 + c if c >= 0 else 1.0 / (1.0 - c)


def _axis_rotation(axis: str, theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def rotation_matrix(coords: Sequence[float], order: str = "zyx") -> np.ndarray:
    """3x3 rotation for cube coordinates, composed left-to-right in ``order``.

    The default ``'zyx'`` gives ``Rz @ Ry @ Rx``.
    """
    order = order.lower()
    if sorted(order) != ["x", "y", "z"]:
        raise ValueError(f"rotation order must be a permutation of 'xyz', got {order!r}")
    thetas = dict(zip("xyz", (2.0 * np.arcsin(np.clip(c, -1.0, 1.0)) for c in coords)))
    R = np.eye(3)
    for axis in order:
        R = R @ _axis_rotation(axis, thetas[axis])
    return R


def linear_part(params: AffineParams, rotation_order: str = "zyx") -> np.ndarray:
    p = params.p
    if params.kind is TransformKind.TRANSLATION:
        return np.eye(3)
    if params.kind is TransformKind.ROTATION:
        return rotation_matrix(p, rotation_order)
    if params.kind is TransformKind.SCALE:
        return np.diag([scale_factor(c) for c in p])
    L = np.eye(3)
    L[0, 1], L[0, 2], L[1, 2] = p
    return L


def params_to_matrix(
    params: AffineParams,
    center: Sequence[float] = (0.0, 0.0, 0.0),
    rotation_order: str = "zyx",
) -> np.ndarray:
    """Homogeneous 4x4 matrix acting on physical (mm) points.

    The result maps a fixed-image point to where the moving image is sampled.
    """
    center = np.asarray(center, dtype=np.float64)
    m = np.eye(4)
    if params.kind is TransformKind.TRANSLATION:
        m[:3, 3] = params.p
        return m
    L = linear_part(params, rotation_order)
    m[:3, :3] = L
    # T(c) L T(-c): the translation column is c - L c.
    m[:3, 3] = center - L @ center
    return m


def apply_point(m: np.ndarray, pt: Sequence[float]) -> np.ndarray:
    """Apply a homogeneous matrix to one point or an (N, 3) array of points."""
    m = np.asarray(m, dtype=np.float64)
    pts = np.asarray(pt, dtype=np.float64)
    return pts @ m[:3, :3].T + m[:3, 3]
