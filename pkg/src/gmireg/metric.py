"""Joint histograms, Shannon/Tsallis entropies and mutual-information variants.

Entropies are in nats. Tsallis entropy uses the form whose ``q -> 1`` limit
is Shannon entropy::

    H_q(p) = (1 - sum_i p_i**q) / (q - 1)

and satisfies pseudo-additivity on independent systems,
``H_q(A, B) = H_q(A) + H_q(B) + (1 - q) H_q(A) H_q(B)``.

Five MI families are available. With ``X`` the fixed (row) marginal and ``Y``
the moving (column) marginal, and ``N = H(X) + H(Y) - H(X, Y)``:

================== ==========================================================
shannon            ``N`` with Shannon entropies
tsallis-nonadditive ``N`` with Tsallis entropies
tsallis-additive   ``N + (1 - q) H_q(X) H_q(Y)``; zero for independent images
yamano             ``[N + (q - 1) H_q(X) H_q(Y)] / [1 + (q - 1) H_q(X)]``
sparavigna         ``[N + (q - 1) H_q(X) H_q(Y)] / [1 + (1 - q) max(H_q(X), H_q(Y))]``
================== ==========================================================

The Yamano form depends on which image is called ``X`` and is therefore not
symmetric under swapping fixed and moving.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyOverlapError, SingularMetricError
from .resample import Interpolator, PairSet, transformed_pairs
from .transform import AffineParams, params_to_matrix
from .volume import U16_MAX, BinningMask, Volume

__all__ = [
    "MIFamily",
    "MetricSpec",
    "JointHistogram",
    "joint_histogram",
    "shannon_entropy",
    "tsallis_entropy",
    "mutual_information",
    "quantize",
    "histogram_at",
    "evaluate_metric",
]

SINGULAR_EPS = 1e-12
_NORMALIZATION_TOL = 1e-9


class MIFamily(str, enum.Enum):
    SHANNON = "shannon"
    TSALLIS_NONADDITIVE = "tsallis-nonadditive"
    TSALLIS_ADDITIVE = "tsallis-additive"
    YAMANO = "yamano"
    SPARAVIGNA = "sparavigna"

    @classmethod
    def parse(cls, value) -> "MIFamily":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "-")
        aliases = {"tsallis": "tsallis-nonadditive", "nonadditive": "tsallis-nonadditive",
                   "additive": "tsallis-additive"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(
                f"unknown metric family {value!r}; expected one of {[f.value for f in cls]}"
            ) from None

    @property
    def is_tsallis(self) -> bool:
        return self is not MIFamily.SHANNON


@dataclass(frozen=True)
class MetricSpec:
    """Which MI variant to compute and how the intensities are prepared.

    ``binning_bits=None`` keeps all 16 bits. ``outside`` selects the policy
    for fixed voxels mapped outside the moving image ('exclude' or 'zero').
    """

    family: MIFamily = MIFamily.SHANNON
    q: float = 1.0
    binning_bits: int | None = None
    interp: Interpolator = field(default_factory=Interpolator)
    outside: str = "exclude"

    def __post_init__(self):
        family = MIFamily.parse(self.family)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "interp", Interpolator.parse(self.interp))
        if family.is_tsallis:
            if not self.q > 0:
                raise ValueError(f"entropic index q must be positive, got {self.q}")
            if self.q == 1.0:
                raise ValueError("q = 1 is Shannon entropy; request family 'shannon' explicitly")
        if self.binning_bits is not None:
            object.__setattr__(self, "binning_bits", BinningMask(self.binning_bits).bits)
        if self.outside not in ("exclude", "zero"):
            raise ValueError(f"outside policy must be 'exclude' or 'zero', got {self.outside!r}")

    @property
    def bits(self) -> int:
        return 16 if self.binning_bits is None else self.binning_bits

    @property
    def label(self) -> str:
        if self.family is MIFamily.SHANNON:
            return "shannon"
        return f"{self.family.value}(q={self.q:g})"

    def to_json(self) -> dict:
        return {
            "family": self.family.value,
            "q": self.q,
            "bits": self.binning_bits,
            "interp": self.interp.kind.value,
            "outside": self.outside,
        }

    @classmethod
    def from_json(cls, obj) -> "MetricSpec":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(
            family=obj["family"],
            q=obj.get("q", 1.0) if obj.get("q") is not None else 1.0,
            binning_bits=obj.get("bits"),
            interp=obj.get("interp", "nearest"),
            outside=obj.get("outside", "exclude"),
        )


@dataclass(frozen=True)
class JointHistogram:
    """Integer joint histogram stored as its nonzero cells.

    A 16-bit x 16-bit histogram has 2**32 cells, so only occupied cells are
    kept: ``rows[k], cols[k]`` holds ``counts[k]`` samples. Normalization to
    probabilities is deferred to evaluation.
    """

    bins_fixed: int
    bins_moving: int
    rows: np.ndarray
    cols: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        for name in ("rows", "cols", "counts"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.rows) == len(self.cols) == len(self.counts)):
            raise ValueError("rows, cols and counts must have equal length")
        if np.any(self.counts < 0):
            raise ValueError("histogram counts must be nonnegative")
        if self.total <= 0:
            raise EmptyOverlapError("joint histogram is empty")

    @classmethod
    def from_dense(cls, counts) -> "JointHistogram":
        counts = np.asarray(counts)
        if counts.ndim != 2:
            raise ValueError("dense joint histogram must be 2D")
        r, c = np.nonzero(counts)
        return cls(counts.shape[0], counts.shape[1], r, c, counts[r, c])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return (self.bins_fixed, self.bins_moving)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.int64)
        np.add.at(out, (self.rows, self.cols), self.counts)
        return out

    @property
    def p(self) -> np.ndarray:
        """Joint probabilities of the stored cells."""
        return self.counts / self.total

    @property
    def p_fixed(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.counts, minlength=self.bins_fixed) / self.total

    @property
    def p_moving(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.counts, minlength=self.bins_moving) / self.total

    def transpose(self) -> "JointHistogram":
        return JointHistogram(self.bins_moving, self.bins_fixed, self.cols, self.rows, self.counts)

    def __add__(self, other: "JointHistogram") -> "JointHistogram":
        if self.shape != other.shape:
            raise ValueError(f"cannot merge histograms of shapes {self.shape} and {other.shape}")
        return _from_codes(
            np.concatenate([self.rows * self.bins_moving + self.cols,
                            other.rows * other.bins_moving + other.cols]),
            self.bins_fixed,
            self.bins_moving,
            np.concatenate([self.counts, other.counts]),
        )


def _from_codes(codes, bins_fixed, bins_moving, weights=None) -> JointHistogram:
    if weights is None:
        uniq, counts = np.unique(codes, return_counts=True)
    else:
        uniq, inverse = np.unique(codes, return_inverse=True)
        counts = np.bincount(inverse.ravel(), weights=weights).astype(np.int64)
    return JointHistogram(bins_fixed, bins_moving, uniq // bins_moving, uniq % bins_moving, counts)


def quantize(values, bits: int = 16) -> np.ndarray:
    """Round interpolated intensities to uint16 and keep the top ``bits`` bits."""
    v = np.asarray(values)
    if v.dtype != np.uint16:
        v = np.clip(np.rint(v), 0, U16_MAX).astype(np.uint16)
    if bits < 16:
        v = v & np.uint16(BinningMask(bits).mask)
    return v


def joint_histogram(pairs, bits: int = 16) -> JointHistogram:
    """Count intensity pairs into a ``2**bits x 2**bits`` joint histogram.

    Parameters
    ----------
    pairs : PairSet, (N, 2) array, or iterable of (fixed, moving) pairs
        Binned 16-bit intensities (multiples of ``2**(16 - bits)``).
    bits : int
        Significant bits kept per image; the cell index is ``value >> (16 - bits)``.

    Raises
    ------
    EmptyOverlapError
        No pairs.
    ValueError
        Values out of the 16-bit range or carrying bits below the binning mask.
    """
    mask = BinningMask(bits)
    if isinstance(pairs, PairSet):
        f, m = np.asarray(pairs.fixed), np.asarray(pairs.moving)
    else:
        arr = np.asarray(pairs if isinstance(pairs, np.ndarray) else list(pairs))
        if arr.size == 0:
            raise EmptyOverlapError("no intensity pairs to histogram")
        arr = arr.reshape(-1, 2)
        f, m = arr[:, 0], arr[:, 1]
    if len(f) == 0:
        raise EmptyOverlapError("no intensity pairs to histogram")
    f = _as_binned(f, mask)
    m = _as_binned(m, mask)
    nb = 1 << bits
    codes = (f >> mask.shift) * nb + (m >> mask.shift)
    return _from_codes(codes, nb, nb)


def _as_binned(v: np.ndarray, mask: BinningMask) -> np.ndarray:
    if v.dtype.kind == "f":
        if not np.all(v == np.rint(v)):
            raise ValueError("intensities must be integers; quantize interpolated values first")
    v = v.astype(np.int64)
    if v.min() < 0 or v.max() > U16_MAX:
        raise ValueError("intensities must lie in the 16-bit unsigned range")
    if np.any(v & ~mask.mask & U16_MAX):
        raise ValueError(f"intensities carry bits below the {mask.bits}-bit binning mask")
    return v


def _check_distribution(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > _NORMALIZATION_TOL:
        raise ValueError("expected a nonnegative probability vector summing to 1")
    return p


def _shannon(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def _tsallis(p: np.ndarray, q: float) -> float:
    nz = p[p > 0]
    return float((1.0 - np.sum(nz**q)) / (q - 1.0))


def shannon_entropy(p) -> float:
    """Shannon entropy in nats; zero-probability bins contribute nothing.

    >>> round(shannon_entropy([0.5, 0.5]), 6)
    0.693147
    """
    return _shannon(_check_distribution(p))


def tsallis_entropy(p, q: float) -> float:
    """Tsallis entropy ``(1 - sum p**q) / (q - 1)``.

    Raises
    ------
    ValueError
        ``q == 1`` (use :func:`shannon_entropy`) or ``q <= 0``.
    """
    q = float(q)
    if q == 1.0:
        raise ValueError("q = 1 is the Shannon limit; call shannon_entropy")
    if q <= 0:
        raise ValueError(f"entropic index must be positive, got {q}")
    return _tsallis(_check_distribution(p), q)


def _entropies(h: JointHistogram, spec: MetricSpec) -> tuple[float, float, float]:
    pxy = h.p
    px, py = h.p_fixed, h.p_moving
    if spec.family is MIFamily.SHANNON:
        return _shannon(px), _shannon(py), _shannon(pxy)
    q = spec.q
    return _tsallis(px, q), _tsallis(py, q), _tsallis(pxy, q)


def mutual_information(h: JointHistogram, spec: MetricSpec) -> float:
    """MI of a joint histogram under the family and ``q`` of ``spec``.

    Raises
    ------
    SingularMetricError
        Yamano/Sparavigna denominator within 1e-12 of zero.
    """
    hx, hy, hxy = _entropies(h, spec)
    base = hx + hy - hxy
    family, q = spec.family, spec.q
    if family in (MIFamily.SHANNON, MIFamily.TSALLIS_NONADDITIVE):
        return base
    if family is MIFamily.TSALLIS_ADDITIVE:
        return base + (1.0 - q) * hx * hy
    numerator = base + (q - 1.0) * hx * hy
    if family is MIFamily.YAMANO:
        denominator = 1.0 + (q - 1.0) * hx
    else:
        denominator = 1.0 + (1.0 - q) * max(hx, hy)
    if abs(denominator) <= SINGULAR_EPS:
        raise SingularMetricError(f"{family.value} denominator {denominator:.3e} is singular")
    return numerator / denominator


def histogram_at(
    fixed: Volume,
    moving: Volume,
    params: AffineParams,
    bits: int = 16,
    interp=Interpolator(),
    outside: str = "exclude",
    rotation_order: str = "zyx",
) -> JointHistogram:
    """Joint histogram of ``fixed`` against ``moving`` resampled under ``params``.

    Linear parts act about the fixed image's physical center.
    """
    m = params_to_matrix(params, fixed.center, rotation_order)
    pairs = transformed_pairs(fixed, moving, m, interp, outside)
    return joint_histogram(PairSet(quantize(pairs.fixed, bits), quantize(pairs.moving, bits)), bits)


def evaluate_metric(
    fixed: Volume,
    moving: Volume,
    params: AffineParams,
    spec: MetricSpec,
    rotation_order: str = "zyx",
) -> float:
    """Similarity of ``fixed`` and ``moving`` after transforming by ``params``."""
    h = histogram_at(fixed, moving, params, spec.bits, spec.interp, spec.outside, rotation_order)
    return mutual_information(h, spec)
