"""Monte Carlo registration essays with randomized translation starts.

Every random quantity of trial ``i`` comes from a Philox generator keyed by
``(master_seed, i, stream)``, so a trial's start and subjects depend only on
its index. Essays are bit-reproducible whatever the worker count or order.

Volume identifiers are file paths (rawjson or NIfTI-1, normalized on load)
or phantom URIs such as ``phantom:seed=3,modality=t2like,size=64,spacing=2``.
The gold standard is the identity: a trial starts the optimizer at the drawn
translation and measures how far from zero it ends.
"""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _parallel
from .metric import MetricSpec
from .optimizer import OptimizerConfig, register
from .phantom import PhantomSpec, generate_phantom
from .transform import AffineParams, TransformKind
from .volume import Volume, load_volume, normalize_intensities

__all__ = [
    "Scenario",
    "Subject",
    "TrialConfig",
    "TrialRecord",
    "draw_start",
    "draw_subjects",
    "run_essay",
    "summarize",
    "export_plots_data",
    "write_records",
    "read_records",
    "resolve_volume",
]

_SUBJECT_STREAM = 3


class Scenario(str, enum.Enum):
    T1 = "T1"
    T2 = "T2"
    RANDOMIZED_T1 = "RandomizedT1"
    RANDOMIZED_T2 = "RandomizedT2"

    @classmethod
    def parse(cls, value) -> "Scenario":
        if isinstance(value, cls):
            return value
        key = str(value).replace(" ", "").replace("_", "").lower()
        for s in cls:
            if s.value.lower() == key:
                return s
        raise ValueError(f"unknown scenario {value!r}; expected one of {[s.value for s in cls]}")

    @property
    def randomized(self) -> bool:
        return self in (Scenario.RANDOMIZED_T1, Scenario.RANDOMIZED_T2)

    @property
    def moving_modality(self) -> str:
        return "t2" if self in (Scenario.T2, Scenario.RANDOMIZED_T2) else "t1"


@dataclass(frozen=True)
class Subject:
    id: str
    t1: str
    t2: str | None = None


@dataclass(frozen=True)
class TrialConfig:
    scenario: Scenario = Scenario.T1
    trials: int = 1000
    sigma: float = 50.0
    master_seed: int = 0
    spec: MetricSpec = field(default_factory=MetricSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    subject_pool: tuple[Subject, ...] = ()
    thresholds: tuple[float, ...] = (1.0, 3.0, 5.0)

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        pool = tuple(s if isinstance(s, Subject) else Subject(**s) for s in self.subject_pool)
        object.__setattr__(self, "subject_pool", pool)
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not pool:
            raise ValueError("subject_pool must name at least one subject")
        if self.scenario.moving_modality == "t2" and any(s.t2 is None for s in pool):
            raise ValueError(f"scenario {self.scenario.value} needs a t2 volume for every subject")

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "trials": self.trials,
            "sigma": self.sigma,
            "master_seed": self.master_seed,
            "spec": self.spec.to_json(),
            "optimizer": self.optimizer.to_json(),
            "subject_pool": [asdict(s) for s in self.subject_pool],
            "thresholds": list(self.thresholds),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrialConfig":
        kwargs = dict(obj)
        if "spec" in kwargs:
            kwargs["spec"] = MetricSpec.from_json(kwargs["spec"])
        if "optimizer" in kwargs:
            kwargs["optimizer"] = OptimizerConfig.from_json(kwargs["optimizer"])
        return cls(**kwargs)


@dataclass
class TrialRecord:
    trial_index: int
    start_params: list[float]
    end_params: list[float]
    start_distance: float
    end_distance: float
    fixed_id: str
    moving_id: str
    wall_time: float
    success_5mm: bool
    failure_reason: str | None = None
    iterations: int = 0
    accepted_metrics: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrialRecord":
        return cls(**obj)


def _generator(master_seed: int, trial_index: int, stream: int) -> np.random.Generator:
    key = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(trial_index), int(stream)])
    return np.random.Generator(np.random.Philox(key))


def draw_start(trial_index: int, master_seed: int, sigma: float) -> tuple[float, float, float]:
    """Start translation (mm) for one trial: three N(0, sigma^2) deviates, unclipped."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return tuple(float(_generator(master_seed, trial_index, axis).normal(0.0, sigma)) for axis in range(3))


def draw_subjects(trial_index: int, master_seed: int, pool_size: int) -> tuple[int, int]:
    """Independent (fixed, moving) subject indices for a randomized trial."""
    fixed, moving = _generator(master_seed, trial_index, _SUBJECT_STREAM).integers(0, pool_size, size=2)
    return int(fixed), int(moving)


_PHANTOM_KEYS = {"seed": int, "modality": str, "size": int, "spacing": float, "structures": int, "noise": float}


def _parse_phantom_uri(ident: str) -> PhantomSpec:
    body = ident.split(":", 1)[1]
    fields = {}
    for part in filter(None, body.split(",")):
        key, _, value = part.partition("=")
        key = key.strip()
        if key not in _PHANTOM_KEYS:
            raise ValueError(f"unknown phantom parameter {key!r} in {ident!r}")
        fields[key] = _PHANTOM_KEYS[key](value)
    size = fields.get("size", 64)
    spacing = fields.get("spacing", 1.0)
    return PhantomSpec(
        size=(size,) * 3,
        spacing=(spacing,) * 3,
        seed=fields.get("seed", 0),
        modality=fields.get("modality", "t1like"),
        structure_count=fields.get("structures", 4),
        noise=fields.get("noise", 0.01),
    )


@lru_cache(maxsize=16)
def resolve_volume(ident: str) -> Volume:
    """Load (and normalize) a volume from a path or a ``phantom:`` URI."""
    if ident.startswith("phantom:"):
        return generate_phantom(_parse_phantom_uri(ident))
    return normalize_intensities(load_volume(ident))


def _trial_volumes(cfg: TrialConfig, i: int) -> tuple[str, str]:
    pool = cfg.subject_pool
    if cfg.scenario.randomized:
        fi, mi = draw_subjects(i, cfg.master_seed, len(pool))
    else:
        fi = mi = 0
    fixed_id = pool[fi].t1
    moving_id = pool[mi].t2 if cfg.scenario.moving_modality == "t2" else pool[mi].t1
    return fixed_id, moving_id


def run_trial(cfg: TrialConfig, i: int) -> TrialRecord:
    start = draw_start(i, cfg.master_seed, cfg.sigma)
    start_distance = float(np.linalg.norm(start))
    fixed_id, moving_id = _trial_volumes(cfg, i)
    try:
        fixed, moving = resolve_volume(fixed_id), resolve_volume(moving_id)
        res = register(fixed, moving, AffineParams(TransformKind.TRANSLATION, start), cfg.spec,
                       cfg.optimizer, trace=True)
    except Exception as exc:  # per-trial isolation: record and carry on
        return TrialRecord(i, list(start), list(start), start_distance, start_distance,
                           fixed_id, moving_id, 0.0, False, f"{type(exc).__name__}: {exc}")
    end = list(res.final_params.p)
    end_distance = float(np.linalg.norm(end))
    failure = None if math.isfinite(res.final_metric) else res.reason
    return TrialRecord(
        i, list(start), end, start_distance, end_distance, fixed_id, moving_id,
        res.wall_time, end_distance <= 5.0, failure, res.iterations,
        [float(f) for _, f in (res.trajectory or [])],
    )


def _run_chunk(indices: list[int]) -> list[TrialRecord]:
    cfg = _parallel.shared("cfg")
    return [run_trial(cfg, i) for i in indices]


def run_essay(cfg: TrialConfig, jobs: int | None = 1) -> list[TrialRecord]:
    """Run every trial of an essay; records come back sorted by trial index."""
    n_jobs = _parallel.default_jobs() if jobs is None else max(1, int(jobs))
    chunks = _parallel.chunked(range(cfg.trials), n_jobs * 4 if n_jobs > 1 else 1)
    parts = _parallel.ordered_map(_run_chunk, chunks, n_jobs, {"cfg": cfg})
    records = [r for part in parts for r in part]
    records.sort(key=lambda r: r.trial_index)
    return records


def summarize(records: Sequence[TrialRecord], thresholds: Sequence[float] = (1.0, 3.0, 5.0)) -> dict:
    """Mean/deviation of final distances and success percentage per threshold.

    The deviation is the population standard deviation. Failed trials count
    as unsuccessful at every threshold.
    """
    if not records:
        raise ValueError("cannot summarize an empty essay")
    d = np.array([r.end_distance for r in records], dtype=np.float64)
    ok = np.array([r.failure_reason is None for r in records])
    within = {}
    for t in thresholds:
        within[_threshold_key(t)] = 100.0 * float(np.mean((d <= t) & ok))
    return {
        "type": "montecarlo-summary",
        "trials": len(records),
        "mean": float(d.mean()),
        "deviation": float(d.std()),
        "within": within,
        "failures": int((~ok).sum()),
    }


def _threshold_key(t: float) -> str:
    return f"{t:g}mm"


def export_plots_data(records: Sequence[TrialRecord], path, thresholds=(1.0, 3.0, 5.0), summary_path=None) -> dict:
    """Write per-trial (start, end) distances as CSV and the summary as JSON."""
    if not records:
        raise ValueError("no records to export")
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["trial_index", "start_distance", "end_distance", "success_5mm", "fixed_id", "moving_id"])
        for r in records:
            w.writerow([r.trial_index, repr(r.start_distance), repr(r.end_distance), int(r.success_5mm),
                        r.fixed_id, r.moving_id])
    summary = summarize(records, thresholds)
    summary_path = Path(summary_path) if summary_path else path.with_name(path.stem + "_summary.json")
    summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def write_records(records: Sequence[TrialRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def read_records(path) -> list[TrialRecord]:
    with open(path, encoding="utf-8") as fh:
        return [TrialRecord.from_json(json.loads(line)) for line in fh if line.strip()]
