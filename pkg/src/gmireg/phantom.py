"""Deterministic synthetic T1-like / T2-like volume pairs.

The geometry is a set of nested, randomly oriented and slightly off-center
ellipsoids; voxel labels count how deep a voxel sits (0 is background). Both
modalities share the geometry and differ only in the label -> intensity
lookup table: T1-like brightens with depth, T2-like reverses the tissue
order while keeping the background dark, so the two are related by a
non-monotone intensity map.

Noise is uniform, at most ``noise`` (default 1%) of the dynamic range, and
only touches tissue: the background stays exactly dark, as in skull-stripped
scans. It is drawn from a Philox counter stream keyed by ``(seed, modality)``: the
value added to voxel ``v`` is element ``v`` of that stream, independent of
generation order.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .volume import Volume, normalize_intensities

__all__ = ["Modality", "PhantomSpec", "generate_phantom", "phantom_labels", "intensity_table"]

MIN_SIZE = 8


class Modality(str, enum.Enum):
    T1LIKE = "t1like"
    T2LIKE = "t2like"

    @classmethod
    def parse(cls, value) -> "Modality":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "").replace("-", "")
        aliases = {"t1": "t1like", "t2": "t2like"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown modality {value!r}; expected t1like or t2like") from None


@dataclass(frozen=True)
class PhantomSpec:
    size: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0
    modality: Modality = Modality.T1LIKE
    structure_count: int = 4
    noise: float = 0.01

    def __post_init__(self):
        size = tuple(int(s) for s in self.size)
        if len(size) != 3:
            raise ValueError("phantom size needs three components")
        if min(size) < MIN_SIZE:
            raise ValueError(f"phantom size must be >= {MIN_SIZE} voxels per axis, got {size}")
        if int(self.structure_count) < 1:
            raise ValueError("structure_count must be positive")
        if not 0.0 <= float(self.noise) <= 0.02:
            raise ValueError("noise amplitude must lie in [0, 0.02] of the dynamic range")
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "modality", Modality.parse(self.modality))
        object.__setattr__(self, "structure_count", int(self.structure_count))
        object.__setattr__(self, "seed", int(self.seed))


def _geometry_rng(spec: PhantomSpec) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.seed & (2**64 - 1), 0])))


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def phantom_labels(spec: PhantomSpec) -> np.ndarray:
    """Integer label map (0 = background, k = inside k nested ellipsoids)."""
    rng = _geometry_rng(spec)
    # Physical-fraction coordinates in [-0.5, 0.5] so geometry scales with the grid.
    axes = [(np.arange(n) - (n - 1) / 2.0) / n for n in spec.size]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    labels = np.zeros(spec.size, dtype=np.int32)
    radii = np.array([0.36, 0.30, 0.26])
    center = np.zeros(3)
    for k in range(1, spec.structure_count + 1):
        if k > 1:
            radii = radii * rng.uniform(0.55, 0.8, size=3)
            center = center + rng.uniform(-0.25, 0.25, size=3) * radii
        else:
            radii = radii * rng.uniform(0.85, 1.0, size=3)
            center = rng.uniform(-0.04, 0.04, size=3)
        rot = _random_rotation(rng)
        local = (grid - center) @ rot
        inside = np.sum((local / radii) ** 2, axis=-1) <= 1.0
        labels[inside & (labels == k - 1)] = k
    return labels


def intensity_table(structure_count: int, modality) -> np.ndarray:
    """Noise-free intensity in [0, 1] for each label 0..structure_count."""
    modality = Modality.parse(modality)
    tissue = np.linspace(0.35, 1.0, structure_count)
    if modality is Modality.T2LIKE:
        tissue = tissue[::-1]
    return np.concatenate([[0.0], tissue])


def generate_phantom(spec: PhantomSpec, with_labels: bool = False):
    """Generate a normalized uint16 phantom volume.

    Returns the :class:`~gmireg.volume.Volume`, or ``(volume, labels)`` when
    ``with_labels`` is set. Same spec, same bits.
    """
    labels = phantom_labels(spec)
    clean = intensity_table(spec.structure_count, spec.modality)[labels]
    if spec.noise > 0:
        tag = 1 if spec.modality is Modality.T1LIKE else 2
        stream = np.random.Generator(
            np.random.Philox(np.random.SeedSequence([spec.seed & (2**64 - 1), tag]))
        )
        noise = spec.noise * (2.0 * stream.random(labels.size).reshape(labels.shape) - 1.0)
        clean = np.where(labels > 0, clean + noise, clean)
    v = Volume(clean, spec.spacing, (0.0, 0.0, 0.0))
    v = normalize_intensities(v)
    if with_labels:
        return v, labels
    return v
