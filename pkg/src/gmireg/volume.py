"""Scalar 3D volumes: I/O, 16-bit intensity normalization and bitmask binning.

Voxel arrays are stored with shape ``dims`` and indexed ``data[i, j, k]``
with ``i`` along x. On disk the payload is x-fastest, which is numpy's
Fortran order for that shape.

Two on-disk formats are understood:

* ``rawjson``: a ``<name>.json`` sidecar plus a ``<name>.raw`` payload.
  This is the canonical format and the only one we write.
* ``nifti1``: uncompressed little-endian NIfTI-1, either single file
  (magic ``n+1``) or ``.hdr``/``.img`` pair (magic ``ni1``). Only int16,
  uint16 and float32 payloads are decoded; qform/sform are consulted for
  the origin and nothing else.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import SizeMismatchError, UnsupportedDatatypeError, VolumeReadError

__all__ = [
    "Volume",
    "BinningMask",
    "load_volume",
    "save_volume",
    "normalize_intensities",
    "apply_binning",
    "rawjson_paths",
]

U16_MAX = 65535

_RAW_DTYPES = {"u16": "<u2", "i16": "<i2", "f32": "<f4", "f64": "<f8", "u8": "u1"}
_NIFTI_DTYPES = {4: "<i2", 512: "<u2", 16: "<f4"}


@dataclass(frozen=True)
class Volume:
    """Immutable 3D scalar image with physical geometry (mm).

    Parameters
    ----------
    data : ndarray, shape (nx, ny, nz)
        Voxel values. Copied and frozen on construction.
    spacing : sequence of 3 floats
        Voxel size along each axis, strictly positive.
    origin : sequence of 3 floats
        Physical position of voxel (0, 0, 0).
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.array(self.data, copy=True)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or len(origin) != 3:
            raise ValueError("spacing and origin need three components")
        if not all(s > 0 for s in spacing):
            raise ValueError(f"spacing must be strictly positive, got {spacing}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def center(self) -> np.ndarray:
        """Physical (mm) position of the grid center."""
        return np.asarray(self.origin) + np.asarray(self.spacing) * (np.asarray(self.dims) - 1) / 2.0

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(data, self.spacing, self.origin)


@dataclass(frozen=True)
class BinningMask:
    """Keep the ``bits`` most significant bits of a 16-bit intensity."""

    bits: int

    def __post_init__(self):
        if not 1 <= int(self.bits) <= 16:
            raise ValueError(f"bits must lie in [1, 16], got {self.bits}")
        object.__setattr__(self, "bits", int(self.bits))

    @property
    def mask(self) -> int:
        return ((1 << self.bits) - 1) << (16 - self.bits)

    @property
    def shift(self) -> int:
        return 16 - self.bits


def rawjson_paths(path) -> tuple[Path, Path]:
    """Return the (sidecar, payload) pair for a rawjson path given either name."""
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".raw")


def _dtype_tag(dtype: np.dtype) -> str:
    for tag, code in _RAW_DTYPES.items():
        if np.dtype(code) == np.dtype(dtype).newbyteorder("<"):
            return tag
    raise UnsupportedDatatypeError(f"cannot store dtype {dtype} in rawjson")


def save_volume(v: Volume, path, format: str = "rawjson") -> None:
    """Write ``v`` as a rawjson sidecar/payload pair.

    The round trip through :func:`load_volume` is bit-exact.
    """
    if format != "rawjson":
        raise ValueError(f"unsupported output format {format!r}; only 'rawjson' is written")
    sidecar, payload = rawjson_paths(path)
    tag = _dtype_tag(v.data.dtype)
    header = {
        "dims": list(v.dims),
        "spacing": list(v.spacing),
        "origin": list(v.origin),
        "dtype": tag,
        "byte_order": "little",
    }
    raw = np.asarray(v.data, dtype=_RAW_DTYPES[tag]).tobytes(order="F")
    # OSError propagates unchanged: it is the I/O failure the caller sees.
    payload.write_bytes(raw)
    sidecar.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")


def load_volume(path, format: str | None = None) -> Volume:
    """Read a volume without normalizing it.

    Parameters
    ----------
    path : path-like
        rawjson sidecar or payload, or a NIfTI-1 ``.nii``/``.hdr`` file.
    format : {'rawjson', 'nifti1'}, optional
        Inferred from the suffix when omitted.

    Raises
    ------
    VolumeReadError
        File missing, unreadable or not parseable.
    UnsupportedDatatypeError
        Datatype code outside the supported subset.
    SizeMismatchError
        Header-declared voxel count disagrees with the payload length.
    """
    p = Path(path)
    if format is None:
        format = "nifti1" if p.suffix in (".nii", ".hdr", ".img") else "rawjson"
    if format == "rawjson":
        return _load_rawjson(p)
    if format == "nifti1":
        return _load_nifti1(p)
    raise ValueError(f"unknown volume format {format!r}")


def _read_bytes(p: Path) -> bytes:
    try:
        return p.read_bytes()
    except OSError as exc:
        raise VolumeReadError(f"cannot read {p}: {exc.strerror or exc}") from exc


def _load_rawjson(p: Path) -> Volume:
    sidecar, payload = rawjson_paths(p)
    try:
        header = json.loads(_read_bytes(sidecar).decode("utf-8"))
        dims = [int(n) for n in header["dims"]]
        spacing = [float(s) for s in header.get("spacing", (1, 1, 1))]
        origin = [float(o) for o in header.get("origin", (0, 0, 0))]
        tag = header.get("dtype", "u16")
        order = header.get("byte_order", "little")
    except (ValueError, KeyError, TypeError) as exc:
        raise VolumeReadError(f"malformed rawjson sidecar {sidecar}: {exc}") from exc
    if len(dims) != 3 or min(dims) < 1:
        raise VolumeReadError(f"sidecar {sidecar} declares invalid dims {dims}")
    if tag not in _RAW_DTYPES:
        raise UnsupportedDatatypeError(f"rawjson dtype {tag!r} not supported")
    if order != "little":
        raise UnsupportedDatatypeError(f"rawjson byte order {order!r} not supported")
    dtype = np.dtype(_RAW_DTYPES[tag])
    raw = _read_bytes(payload)
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) != expected:
        raise SizeMismatchError(
            f"{payload}: header declares {int(np.prod(dims))} voxels ({expected} bytes), "
            f"payload has {len(raw)} bytes"
        )
    data = np.frombuffer(raw, dtype=dtype).reshape(dims, order="F")
    return Volume(data.astype(dtype.newbyteorder("=")), spacing, origin)


def _load_nifti1(p: Path) -> Volume:
    blob = _read_bytes(p)
    if len(blob) < 348:
        raise VolumeReadError(f"{p}: file too short for a NIfTI-1 header")
    (sizeof_hdr,) = struct.unpack_from("<i", blob, 0)
    if sizeof_hdr != 348:
        if struct.unpack_from(">i", blob, 0)[0] == 348:
            raise UnsupportedDatatypeError(f"{p}: big-endian NIfTI is not supported")
        raise VolumeReadError(f"{p}: not a NIfTI-1 header (sizeof_hdr={sizeof_hdr})")
    magic = blob[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise VolumeReadError(f"{p}: bad NIfTI-1 magic {magic!r}")

    dim = struct.unpack_from("<8h", blob, 40)
    datatype, _bitpix = struct.unpack_from("<2h", blob, 70)
    pixdim = struct.unpack_from("<8f", blob, 76)
    (vox_offset,) = struct.unpack_from("<f", blob, 108)
    qform_code, sform_code = struct.unpack_from("<2h", blob, 252)
    qoffset = struct.unpack_from("<3f", blob, 268)
    srow = struct.unpack_from("<12f", blob, 280)

    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise VolumeReadError(f"{p}: invalid dim[0]={ndim}")
    dims = [max(int(d), 1) for d in dim[1:4]]
    if ndim > 3 and any(d > 1 for d in dim[4 : ndim + 1]):
        raise UnsupportedDatatypeError(f"{p}: only 3D volumes are supported, dim={dim[: ndim + 1]}")
    if datatype not in _NIFTI_DTYPES:
        raise UnsupportedDatatypeError(f"{p}: NIfTI datatype code {datatype} not supported")
    dtype = np.dtype(_NIFTI_DTYPES[datatype])
    spacing = [abs(float(s)) or 1.0 for s in pixdim[1:4]]
    if qform_code > 0:
        origin = [float(o) for o in qoffset]
    elif sform_code > 0:
        origin = [float(srow[3]), float(srow[7]), float(srow[11])]
    else:
        origin = [0.0, 0.0, 0.0]

    if magic == b"n+1\x00":
        raw = blob[int(vox_offset) :]
    else:
        raw = _read_bytes(p.with_suffix(".img"))[int(vox_offset) :]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) != expected:
        raise SizeMismatchError(
            f"{p}: header declares {int(np.prod(dims))} voxels ({expected} bytes), "
            f"payload has {len(raw)} bytes"
        )
    data = np.frombuffer(raw, dtype=dtype).reshape(dims, order="F")
    return Volume(data.astype(dtype.newbyteorder("=")), spacing, origin)


def normalize_intensities(v: Volume) -> Volume:
    """Affinely stretch intensities onto the full uint16 range.

    ``x' = round(65535 * (x - x_min) / (x_max - x_min))``. A constant
    volume maps to all zeros.
    """
    x = np.asarray(v.data, dtype=np.float64)
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        return v.with_data(np.zeros(v.dims, dtype=np.uint16))
    scaled = np.rint(U16_MAX * (x - lo) / (hi - lo))
    return v.with_data(np.clip(scaled, 0, U16_MAX).astype(np.uint16))


def apply_binning(v: Volume, mask: BinningMask | int) -> Volume:
    """Clear the low-order bits of every voxel (``voxel & mask``)."""
    if not isinstance(mask, BinningMask):
        mask = BinningMask(mask)
    data = np.asarray(v.data)
    if data.dtype != np.uint16:
        raise TypeError(f"binning expects normalized uint16 data, got {data.dtype}")
    return v.with_data(data & np.uint16(mask.mask))

