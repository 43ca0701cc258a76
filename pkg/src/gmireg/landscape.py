"""Metric landscapes: the similarity metric sampled over an R^3 parameter cube.

Cube voxel ``(i, j, k)`` holds the metric at
``cube_index_to_params((i, j, k), R, kind)``; the center voxel is the
identity transform. Voxels whose transform leaves no overlap are flagged in
``empty`` and floored to the lowest value observed in the cube, so the
capture simulation stays well defined while the mask records what happened.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _parallel
from .errors import EmptyOverlapError, GmiRegError
from .metric import MetricSpec, histogram_at, mutual_information
from .transform import DEFAULT_TRANSLATION_RANGE, TransformKind, cube_index_to_params
from .volume import Volume, rawjson_paths

__all__ = [
    "MetricCube",
    "generate_cube",
    "generate_cubes",
    "probe_line",
    "probe_preset",
    "PROBE_PRESETS",
    "export_cube",
    "load_cube",
]

PROBE_PRESETS = ("axis-x", "axis-y", "axis-z", "plane-diagonal", "cube-diagonal")


@dataclass
class MetricCube:
    """Dense metric values over one transform family's parameter cube."""

    resolution: int
    kind: TransformKind
    spec: MetricSpec
    values: np.ndarray
    empty: np.ndarray
    translation_range: float = DEFAULT_TRANSLATION_RANGE
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        R = int(self.resolution)
        self.kind = TransformKind.parse(self.kind)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(R, R, R)
        self.empty = np.asarray(self.empty, dtype=bool).reshape(R, R, R)

    @property
    def center_index(self) -> tuple[int, int, int]:
        c = (self.resolution - 1) // 2
        return (c, c, c)

    def params_at(self, idx):
        return cube_index_to_params(idx, self.resolution, self.kind, self.translation_range)

    def axis_parameters(self) -> list[float]:
        """Parameter value of each index along one axis (all axes share it)."""
        R = self.resolution
        return [self.params_at((i, 0, 0)).p[0] for i in range(R)]


def _group_specs(specs: Sequence[MetricSpec]) -> dict:
    groups: dict = {}
    for n, spec in enumerate(specs):
        groups.setdefault((spec.bits, spec.interp, spec.outside), []).append(n)
    return groups


def _evaluate_chunk(flat_indices: list[int]) -> np.ndarray:
    fixed: Volume = _parallel.shared("fixed")
    moving: Volume = _parallel.shared("moving")
    specs: list[MetricSpec] = _parallel.shared("specs")
    R, kind, trange, order = (_parallel.shared(k) for k in ("R", "kind", "trange", "order"))
    groups = _group_specs(specs)
    out = np.full((len(flat_indices), len(specs)), np.nan)
    for row, flat in enumerate(flat_indices):
        params = cube_index_to_params(np.unravel_index(flat, (R, R, R)), R, kind, trange)
        for (bits, interp, outside), members in groups.items():
            try:
                h = histogram_at(fixed, moving, params, bits, interp, outside, order)
            except EmptyOverlapError:
                continue
            for n in members:
                out[row, n] = mutual_information(h, specs[n])
    return out


def generate_cubes(
    fixed: Volume,
    moving: Volume,
    kind,
    specs: Sequence[MetricSpec],
    R: int = 51,
    *,
    jobs: int | None = 1,
    translation_range: float = DEFAULT_TRANSLATION_RANGE,
    rotation_order: str = "zyx",
    fixed_id: str = "fixed",
    moving_id: str = "moving",
) -> list[MetricCube]:
    """Generate one cube per spec, sharing histograms between compatible specs.

    Specs with equal binning, interpolator and outside policy reuse the same
    joint histogram at every cube voxel. Output does not depend on ``jobs``.
    """
    kind = TransformKind.parse(kind)
    R = int(R)
    if R < 3 or R % 2 == 0:
        raise ValueError(f"cube resolution must be odd and >= 3, got {R}")
    specs = list(specs)
    if not specs:
        raise ValueError("need at least one metric spec")
    state = {
        "fixed": fixed, "moving": moving, "specs": specs,
        "R": R, "kind": kind, "trange": float(translation_range), "order": rotation_order,
    }
    n_jobs = _parallel.default_jobs() if jobs is None else max(1, int(jobs))
    # Several chunks per worker balances slabs that fall outside the overlap.
    chunks = _parallel.chunked(range(R**3), n_jobs * 8 if n_jobs > 1 else 1)
    parts = _parallel.ordered_map(_evaluate_chunk, chunks, n_jobs, state)
    table = np.concatenate(parts, axis=0)

    cubes = []
    for n, spec in enumerate(specs):
        values = table[:, n].reshape(R, R, R)
        empty = np.isnan(values)
        if empty.all():
            raise EmptyOverlapError("every cube voxel has an empty overlap")
        values = np.where(empty, np.nanmin(values), values)
        cubes.append(
            MetricCube(
                R, kind, spec, values, empty, float(translation_range),
                provenance={
                    "fixed_id": fixed_id,
                    "moving_id": moving_id,
                    "rotation_order": rotation_order,
                },
            )
        )
    return cubes


def generate_cube(fixed: Volume, moving: Volume, kind, spec: MetricSpec, R: int = 51, **kwargs) -> MetricCube:
    """Metric cube for a single spec; see :func:`generate_cubes`."""
    return generate_cubes(fixed, moving, kind, [spec], R, **kwargs)[0]


def _check_index(idx, R: int) -> np.ndarray:
    a = np.asarray(idx, dtype=np.int64)
    if a.shape != (3,) or np.any(a < 0) or np.any(a >= R):
        raise IndexError(f"probe endpoint {tuple(np.ravel(a))} outside [0, {R - 1}]^3")
    return a


def probe_line(cube: MetricCube, start, end, n: int | None = None) -> list[tuple[float, float]]:
    """Sample the cube along a straight segment between two voxel indices.

    Each of the ``n`` samples reads the nearest cube voxel. The arc position
    is the Euclidean distance from ``start`` in index units.
    """
    R = cube.resolution
    a, b = _check_index(start, R), _check_index(end, R)
    if n is None:
        n = int(np.max(np.abs(b - a))) + 1
    if n < 1:
        raise ValueError("need at least one probe sample")
    t = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    idx = np.floor(pts + 0.5).astype(np.int64)
    length = float(np.linalg.norm(b - a))
    return [(float(ti * length), float(cube.values[tuple(i)])) for ti, i in zip(t, idx)]


def probe_preset(cube: MetricCube, name: str, n: int | None = None):
    """Named probe lines through the cube center (or its main diagonal)."""
    R = cube.resolution
    c, last = (R - 1) // 2, R - 1
    endpoints = {
        "axis-x": ((0, c, c), (last, c, c)),
        "axis-y": ((c, 0, c), (c, last, c)),
        "axis-z": ((c, c, 0), (c, c, last)),
        "plane-diagonal": ((0, 0, c), (last, last, c)),
        "cube-diagonal": ((0, 0, 0), (last, last, last)),
    }
    if name not in endpoints:
        raise ValueError(f"unknown probe preset {name!r}; expected one of {PROBE_PRESETS}")
    start, end = endpoints[name]
    return probe_line(cube, start, end, n if n is not None else R)


def _sidecar(cube: MetricCube) -> dict:
    return {
        "type": "metric-cube",
        "resolution": cube.resolution,
        "kind": cube.kind.value,
        "spec": cube.spec.to_json(),
        "translation_range": cube.translation_range,
        "dtype": "f64",
        "byte_order": "little",
        "order": "x-fastest",
        "axis_parameters": cube.axis_parameters(),
        "empty_overlap": np.flatnonzero(cube.empty.ravel(order="F")).tolist(),
        "provenance": cube.provenance,
    }


def export_cube(cube: MetricCube, path, format: str = "rawjson") -> None:
    """Write the cube as rawjson (f64 payload + sidecar) or CSV.

    CSV rows are ``i, j, k, p0, p1, p2, value, empty`` with floats written in
    shortest round-trip form, so both formats reload exactly.
    """
    if format == "rawjson":
        sidecar, payload = rawjson_paths(path)
        payload.write_bytes(np.asarray(cube.values, dtype="<f8").tobytes(order="F"))
        sidecar.write_text(json.dumps(_sidecar(cube), indent=2) + "\n", encoding="utf-8")
        return
    if format == "csv":
        R = cube.resolution
        axis = cube.axis_parameters()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "k", "p0", "p1", "p2", "value", "empty"])
            for k in range(R):
                for j in range(R):
                    for i in range(R):
                        w.writerow([i, j, k, repr(axis[i]), repr(axis[j]), repr(axis[k]),
                                    repr(float(cube.values[i, j, k])), int(cube.empty[i, j, k])])
        meta = Path(str(path) + ".json")
        meta.write_text(json.dumps({k: v for k, v in _sidecar(cube).items()
                                    if k not in ("empty_overlap", "dtype", "byte_order")}, indent=2) + "\n",
                        encoding="utf-8")
        return
    raise ValueError(f"unknown cube format {format!r}; expected 'rawjson' or 'csv'")


def load_cube(path, format: str | None = None) -> MetricCube:
    """Re-read a cube written by :func:`export_cube`."""
    p = Path(path)
    if format is None:
        format = "csv" if p.suffix == ".csv" else "rawjson"
    try:
        if format == "rawjson":
            sidecar, payload = rawjson_paths(p)
            meta = json.loads(sidecar.read_text(encoding="utf-8"))
            R = int(meta["resolution"])
            raw = payload.read_bytes()
            if len(raw) != 8 * R**3:
                raise GmiRegError(f"{payload}: expected {8 * R**3} bytes for R={R}, got {len(raw)}")
            values = np.frombuffer(raw, dtype="<f8").reshape((R, R, R), order="F").astype(np.float64)
            empty = np.zeros(R**3, dtype=bool)
            empty[np.asarray(meta.get("empty_overlap", []), dtype=np.int64)] = True
            empty = empty.reshape((R, R, R), order="F")
        elif format == "csv":
            meta = json.loads(Path(str(p) + ".json").read_text(encoding="utf-8"))
            R = int(meta["resolution"])
            values = np.empty((R, R, R))
            empty = np.zeros((R, R, R), dtype=bool)
            with open(p, newline="", encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    i, j, k = int(row["i"]), int(row["j"]), int(row["k"])
                    values[i, j, k] = float(row["value"])
                    empty[i, j, k] = row["empty"] == "1"
        else:
            raise ValueError(f"unknown cube format {format!r}")
    except FileNotFoundError as exc:
        raise GmiRegError(f"missing cube file: {exc.filename}") from exc
    return MetricCube(
        R, meta["kind"], MetricSpec.from_json(meta["spec"]), values, empty,
        float(meta.get("translation_range", DEFAULT_TRANSLATION_RANGE)),
        provenance=meta.get("provenance", {}),
    )
