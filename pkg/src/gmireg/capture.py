"""Capture-range estimation by flood fill on a metric cube.

Starting from the cube center (the gold-standard transform), a voxel ``n``
joins the captured region when an adjacent captured voxel ``m`` is strictly
better than ``n``: a unit step from ``n`` toward the region improves the
metric, so a constant-step gradient method started at ``n`` walks into the
region. The captured set is the least fixpoint of that rule and does not
depend on visiting order. Plateaus do not propagate, and voxels flagged as
empty overlap are never captured.

This approximates gradient descent with a constant learning rate equal to
the cube spacing; a real optimizer with adaptive steps may do better or
worse.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .landscape import MetricCube
from .metric import MetricSpec
from .transform import TransformKind
from .volume import Volume, save_volume

__all__ = [
    "CaptureResult",
    "simulate_capture",
    "neighbor_offsets",
    "capture_report",
    "format_rate",
]


@dataclass(frozen=True)
class CaptureResult:
    captured: np.ndarray
    seed_index: tuple[int, int, int]
    connectivity: int = 26
    direction: str = "maximize"
    mode: str = "adjacent"

    @property
    def rate(self) -> float:
        return int(self.captured.sum()) / self.captured.size

    def to_json(self) -> dict:
        return {
            "rate": self.rate,
            "captured_count": int(self.captured.sum()),
            "total": int(self.captured.size),
            "seed_index": list(self.seed_index),
            "connectivity": self.connectivity,
            "direction": self.direction,
            "mode": self.mode,
        }

    def save_mask(self, path) -> None:
        save_volume(Volume(self.captured.astype(np.uint8)), path)


def neighbor_offsets(connectivity: int) -> list[tuple[int, int, int]]:
    if connectivity == 6:
        return [d for d in itertools.product((-1, 0, 1), repeat=3) if sum(map(abs, d)) == 1]
    if connectivity == 26:
        return [d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0)]
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def _shift_view(a: np.ndarray, d) -> tuple[tuple[slice, ...], tuple[slice, ...]]:
    """Slices so that ``a[dst]`` lines up with ``a[src]`` where src = dst + d."""
    dst, src = [], []
    for off, n in zip(d, a.shape):
        if off >= 0:
            dst.append(slice(0, n - off))
            src.append(slice(off, n))
        else:
            dst.append(slice(-off, n))
            src.append(slice(0, n + off))
    return tuple(dst), tuple(src)


def simulate_capture(
    cube: MetricCube,
    connectivity: int = 26,
    direction: str = "maximize",
    mode: str = "adjacent",
) -> CaptureResult:
    """Grow the captured region from the center voxel to its fixpoint.

    Parameters
    ----------
    connectivity : {6, 26}
    direction : {'maximize', 'minimize'}
    mode : {'adjacent', 'seed'}
        ``'adjacent'`` compares a candidate with its captured neighbor;
        ``'seed'`` compares it with the seed value instead (kept for
        comparison only; it does not model a gradient path).
    """
    if direction not in ("maximize", "minimize"):
        raise ValueError(f"direction must be 'maximize' or 'minimize', got {direction!r}")
    if mode not in ("adjacent", "seed"):
        raise ValueError(f"mode must be 'adjacent' or 'seed', got {mode!r}")
    offsets = neighbor_offsets(connectivity)
    v = np.asarray(cube.values, dtype=np.float64)
    if direction == "minimize":
        v = -v
    seed = cube.center_index
    allowed = ~np.asarray(cube.empty, dtype=bool)

    # better[d][n] is True when voxel n + d may pull n into the region.
    better = []
    for d in offsets:
        dst, src = _shift_view(v, d)
        b = np.zeros(v.shape, dtype=bool)
        b[dst] = (v[src] > v[dst]) if mode == "adjacent" else (v[seed] > v[dst])
        b &= allowed
        better.append(b)

    captured = np.zeros(v.shape, dtype=bool)
    captured[seed] = True
    frontier = captured.copy()
    while frontier.any():
        reach = np.zeros(v.shape, dtype=bool)
        for d, b in zip(offsets, better):
            dst, src = _shift_view(v, d)
            reach[dst] |= frontier[src] & b[dst]
        frontier = reach & ~captured
        captured |= frontier
    return CaptureResult(captured, seed, connectivity, direction, mode)


def format_rate(rate: float) -> str:
    """Percentage with two decimals, truncated so only a full capture reads 100%."""
    pct = np.floor(rate * 10000.0 + 1e-9) / 100.0
    return f"{pct:.2f}%"


_KIND_ORDER = [k.value for k in TransformKind]


def capture_report(results: Sequence[tuple[MetricSpec, object, CaptureResult | float]], fmt: str = "markdown") -> str:
    """Success-rate table: one row per metric setting, one column per transform kind.

    Each result is a :class:`CaptureResult` or a bare rate in [0, 1]. Kinds
    that have no result are omitted from the columns.
    """
    if not results:
        raise ValueError("capture_report needs at least one result")
    rows: dict = {}
    kinds_seen = set()
    for spec, kind, res in results:
        kind = TransformKind.parse(kind).value
        kinds_seen.add(kind)
        key = (spec.family.value, spec.q, spec.binning_bits)
        rows.setdefault(key, {})[kind] = float(res) if isinstance(res, (int, float)) else res.rate
    kinds = [k for k in _KIND_ORDER if k in kinds_seen]
    header = ["Metric", "Q", "Binning"] + [k.capitalize() for k in kinds]
    body = []
    for (family, q, bits), rates in rows.items():
        body.append(
            [family, f"{q:.1f}", "No" if bits is None else f"{bits} bit"]
            + [format_rate(rates[k]) if k in rates else "" for k in kinds]
        )
    return render_table(header, body, fmt)


def render_table(header: list[str], body: list[list[str]], fmt: str = "markdown") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown table format {fmt!r}")
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in body]
    return "\n".join(lines) + "\n"


def capture_to_json(spec: MetricSpec, kind, res: CaptureResult) -> str:
    obj = {"type": "capture", "spec": spec.to_json(), "kind": TransformKind.parse(kind).value}
    obj.update(res.to_json())
    return json.dumps(obj, indent=2) + "\n"
