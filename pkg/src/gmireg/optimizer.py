"""Regular-step gradient ascent over translation parameters.

Each iteration estimates the metric gradient by central differences, steps
``step`` millimetres along its unit direction, and accepts the move unless
the metric decreases. Ties are accepted so the search can cross the flat
cells a nearest-neighbour landscape is made of. A rejected move, or a
reversal of direction,
multiplies the step by ``relaxation``. The run converges once the step drops
below ``min_step``; a zero finite-difference gradient stops the run
unconverged (``reason='zero-gradient'``).
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyOverlapError, SingularMetricError
from .metric import MetricSpec, evaluate_metric
from .transform import AffineParams, TransformKind
from .volume import Volume

__all__ = ["OptimizerConfig", "RegistrationResult", "finite_diff_gradient", "register"]


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 500
    initial_step: float = 4.0
    relaxation: float = 0.5
    min_step: float = 0.05
    fd_delta: float = 1.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not 0 < self.relaxation < 1:
            raise ValueError("relaxation must lie in (0, 1)")
        if not 0 < self.min_step < self.initial_step:
            raise ValueError("need 0 < min_step < initial_step")
        if not self.fd_delta > 0:
            raise ValueError("fd_delta must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "OptimizerConfig":
        return cls(**obj)


@dataclass
class RegistrationResult:
    final_params: AffineParams
    final_metric: float
    iterations: int
    converged: bool
    wall_time: float
    reason: str = ""
    trajectory: list[tuple[tuple[float, float, float], float]] | None = field(default=None)

    def to_json(self, include_trajectory: bool = True) -> dict:
        out = {
            "final_params": self.final_params.to_json(),
            "final_metric": None if not math.isfinite(self.final_metric) else self.final_metric,
            "iterations": self.iterations,
            "converged": self.converged,
            "reason": self.reason,
            "wall_time": self.wall_time,
        }
        if include_trajectory and self.trajectory is not None:
            out["trajectory"] = [{"p": list(p), "metric": f} for p, f in self.trajectory]
        return out


def finite_diff_gradient(objective: Callable[[np.ndarray], float], p: Sequence[float], delta: float) -> np.ndarray:
    """Central-difference gradient ``(f(p + d e_i) - f(p - d e_i)) / (2 d)``.

    Errors raised by ``objective`` propagate.
    """
    p = np.asarray(p, dtype=np.float64)
    grad = np.zeros(len(p))
    for i in range(len(p)):
        e = np.zeros(len(p))
        e[i] = delta
        grad[i] = (objective(p + e) - objective(p - e)) / (2.0 * delta)
    return grad


def _safe_gradient(objective, p: np.ndarray, f0: float, delta: float) -> np.ndarray:
    # Near the overlap border one probe may fall outside; fall back to the
    # one-sided difference on that axis.
    try:
        return finite_diff_gradient(objective, p, delta)
    except EmptyOverlapError:
        pass
    grad = np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = delta
        hi = lo = None
        try:
            hi = objective(p + e)
        except EmptyOverlapError:
            pass
        try:
            lo = objective(p - e)
        except EmptyOverlapError:
            pass
        if hi is not None and lo is not None:
            grad[i] = (hi - lo) / (2.0 * delta)
        elif hi is not None:
            grad[i] = (hi - f0) / delta
        elif lo is not None:
            grad[i] = (f0 - lo) / delta
    return grad


def register(
    fixed: Volume,
    moving: Volume,
    init: AffineParams,
    spec: MetricSpec,
    cfg: OptimizerConfig = OptimizerConfig(),
    trace: bool = False,
) -> RegistrationResult:
    """Maximize the metric over translations starting from ``init``.

    An empty overlap at ``init`` yields an unconverged result with
    ``reason='empty-overlap'`` instead of raising.
    """
    if init.kind is not TransformKind.TRANSLATION:
        raise ValueError("register only optimizes translation parameters")
    t0 = time.perf_counter()

    def objective(p):
        return evaluate_metric(fixed, moving, AffineParams(TransformKind.TRANSLATION, p), spec)

    p = np.asarray(init.p, dtype=np.float64)
    trajectory = [] if trace else None
    try:
        f = objective(p)
    except (EmptyOverlapError, SingularMetricError) as exc:
        reason = "empty-overlap" if isinstance(exc, EmptyOverlapError) else "singular-metric"
        return RegistrationResult(init, float("nan"), 0, False, time.perf_counter() - t0, reason, trajectory)
    if trace:
        trajectory.append((tuple(p), f))

    step = cfg.initial_step
    grad = None
    prev_dir = None
    converged, reason = False, "max-iterations"
    iterations = 0
    while iterations < cfg.max_iterations:
        iterations += 1
        if grad is None:
            grad = _safe_gradient(objective, p, f, cfg.fd_delta)
        norm = float(np.linalg.norm(grad))
        if norm == 0.0:
            reason = "zero-gradient"
            break
        direction = grad / norm
        if prev_dir is not None and float(direction @ prev_dir) < 0.0:
            step *= cfg.relaxation
        prev_dir = direction
        if step < cfg.min_step:
            converged, reason = True, "min-step"
            break
        candidate = p + step * direction
        try:
            fc = objective(candidate)
        except EmptyOverlapError:
            fc = -math.inf
        if fc >= f:
            p, f = candidate, fc
            grad = None
            if trace:
                trajectory.append((tuple(p), f))
        else:
            step *= cfg.relaxation
            if step < cfg.min_step:
                converged, reason = True, "min-step"
                break
    return RegistrationResult(
        AffineParams(TransformKind.TRANSLATION, tuple(p)),
        f,
        iterations,
        converged,
        time.perf_counter() - t0,
        reason,
        trajectory,
    )
