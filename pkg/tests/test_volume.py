import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gmireg.errors import SizeMismatchError, UnsupportedDatatypeError, VolumeReadError
from gmireg.volume import (
    BinningMask,
    Volume,
    apply_binning,
    load_volume,
    normalize_intensities,
    rawjson_paths,
    save_volume,
)


def nifti_bytes(data, spacing=(1.0, 1.0, 1.0), datatype=512, magic=b"n+1\x00", qoffset=None,
                srow=None, endian="<"):
    """Minimal NIfTI-1 single-file image (header, 4 extension bytes, payload)."""
    hdr = bytearray(348)
    struct.pack_into(endian + "i", hdr, 0, 348)
    dims = data.shape
    struct.pack_into(endian + "8h", hdr, 40, 3, *dims, 1, 1, 1, 1)
    bitpix = {4: 16, 512: 16, 16: 32, 2: 8}[datatype]
    struct.pack_into(endian + "2h", hdr, 70, datatype, bitpix)
    struct.pack_into(endian + "8f", hdr, 76, 1.0, *spacing, 0, 0, 0, 0)
    struct.pack_into(endian + "f", hdr, 108, 352.0)
    if qoffset is not None:
        struct.pack_into(endian + "h", hdr, 252, 1)
        struct.pack_into(endian + "3f", hdr, 268, *qoffset)
    if srow is not None:
        struct.pack_into(endian + "h", hdr, 254, 1)
        struct.pack_into(endian + "12f", hdr, 280, *srow)
    hdr[344:348] = magic
    code = {4: "<i2", 512: "<u2", 16: "<f4", 2: "u1"}[datatype]
    return bytes(hdr) + b"\x00" * 4 + np.asarray(data, dtype=code).tobytes(order="F")


def test_nifti_uint16_with_mri_dims(tmp_path):
    data = np.zeros((176, 256, 176), dtype=np.uint16)
    data[3, 200, 5] = 1234
    p = tmp_path / "brain.nii"
    p.write_bytes(nifti_bytes(data))
    v = load_volume(p)
    assert v.dims == (176, 256, 176)
    assert v.spacing == (1.0, 1.0, 1.0)
    assert v.data[3, 200, 5] == 1234 and v.data.sum() == 1234


@pytest.mark.parametrize("datatype, dtype", [(4, np.int16), (512, np.uint16), (16, np.float32)])
def test_nifti_datatypes_decoded(tmp_path, datatype, dtype):
    data = (np.arange(24).reshape(2, 3, 4) - 5).astype(dtype)
    if dtype is np.uint16:
        data = np.abs(data).astype(dtype)
    p = tmp_path / "x.nii"
    p.write_bytes(nifti_bytes(data, spacing=(0.7, 0.7, 0.7), datatype=datatype))
    v = load_volume(p)
    assert np.array_equal(v.data, data)
    assert v.spacing == pytest.approx((0.7, 0.7, 0.7))


def test_nifti_origin_from_qform_then_sform(tmp_path):
    data = np.zeros((2, 2, 2), dtype=np.uint16)
    p = tmp_path / "q.nii"
    p.write_bytes(nifti_bytes(data, qoffset=(-10.0, 5.0, 2.5)))
    assert load_volume(p).origin == (-10.0, 5.0, 2.5)
    p.write_bytes(nifti_bytes(data, srow=(1, 0, 0, 7, 0, 1, 0, 8, 0, 0, 1, 9)))
    assert load_volume(p).origin == (7.0, 8.0, 9.0)


def test_nifti_pair_files(tmp_path):
    data = np.arange(8, dtype=np.uint16).reshape(2, 2, 2)
    blob = nifti_bytes(data, magic=b"ni1\x00")
    (tmp_path / "a.hdr").write_bytes(blob[:348])
    (tmp_path / "a.img").write_bytes(blob[352:])
    hdr = bytearray(blob[:348])
    struct.pack_into("<f", hdr, 108, 0.0)
    (tmp_path / "a.hdr").write_bytes(bytes(hdr))
    assert np.array_equal(load_volume(tmp_path / "a.hdr").data, data)


def test_nifti_errors(tmp_path):
    data = np.zeros((2, 2, 2), dtype=np.uint16)
    p = tmp_path / "bad.nii"
    p.write_bytes(nifti_bytes(data, datatype=2))
    with pytest.raises(UnsupportedDatatypeError):
        load_volume(p)
    p.write_bytes(nifti_bytes(data)[:-2])
    with pytest.raises(SizeMismatchError):
        load_volume(p)
    p.write_bytes(nifti_bytes(data, magic=b"abcd"))
    with pytest.raises(VolumeReadError):
        load_volume(p)
    p.write_bytes(nifti_bytes(data, endian=">"))
    with pytest.raises(UnsupportedDatatypeError):
        load_volume(p)
    with pytest.raises(VolumeReadError):
        load_volume(tmp_path / "missing.nii")
    with pytest.raises(OSError):
        load_volume(tmp_path / "missing.nii")


@pytest.mark.parametrize("dtype", [np.uint16, np.int16, np.float32])
def test_rawjson_round_trip_is_bit_exact(tmp_path, dtype, rng):
    data = (rng.normal(size=(5, 6, 7)) * 1000).astype(dtype)
    v = Volume(data, (0.7, 0.7, 0.7), (-1.5, 2.0, 3.25))
    save_volume(v, tmp_path / "v")
    w = load_volume(tmp_path / "v.json")
    assert w.data.dtype == data.dtype
    assert w.data.tobytes() == data.tobytes()
    assert (w.dims, w.spacing, w.origin) == (v.dims, v.spacing, v.origin)


def test_rawjson_layout_is_x_fastest(tmp_path):
    data = np.arange(24, dtype=np.uint16).reshape(2, 3, 4)
    save_volume(Volume(data), tmp_path / "v")
    sidecar, payload = rawjson_paths(tmp_path / "v.raw")
    head = json.loads(sidecar.read_text())
    assert head == {"dims": [2, 3, 4], "spacing": [1.0, 1.0, 1.0], "origin": [0.0, 0.0, 0.0],
                    "dtype": "u16", "byte_order": "little"}
    raw = np.frombuffer(payload.read_bytes(), dtype="<u2")
    assert raw[:3].tolist() == [data[0, 0, 0], data[1, 0, 0], data[0, 1, 0]]


def test_rawjson_size_mismatch(tmp_path):
    save_volume(Volume(np.zeros((2, 2, 2), dtype=np.uint16)), tmp_path / "v")
    (tmp_path / "v.raw").write_bytes(b"\x00" * 10)
    with pytest.raises(SizeMismatchError):
        load_volume(tmp_path / "v")


def test_volume_validation():
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2)), spacing=(1, 0, 1))
    v = Volume(np.zeros((3, 5, 7)), spacing=(2, 1, 1), origin=(1, 0, 0))
    assert v.center.tolist() == [3.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1


volumes = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
                 elements=st.floats(-1e4, 1e4))


@settings(max_examples=100, deadline=None)
@given(volumes)
def test_normalization_maps_extremes(data):
    out = normalize_intensities(Volume(data)).data
    assert out.dtype == np.uint16
    if data.max() > data.min():
        assert out[np.unravel_index(np.argmin(data), data.shape)] == 0
        assert out[np.unravel_index(np.argmax(data), data.shape)] == 65535
    else:
        assert not out.any()


@settings(max_examples=100, deadline=None)
@given(arrays(np.uint16, (4, 4, 4)), st.integers(1, 16))
def test_binning_is_idempotent_and_masked(data, bits):
    v = Volume(data)
    once = apply_binning(v, bits)
    assert np.array_equal(apply_binning(once, bits).data, once.data)
    assert not np.any(once.data & ~np.uint16(BinningMask(bits).mask))


def test_binning_mask_values():
    assert BinningMask(6).mask == 0xFC00
    assert BinningMask(16).mask == 0xFFFF
    assert BinningMask(1).mask == 0x8000
    with pytest.raises(ValueError):
        BinningMask(0)
    with pytest.raises(TypeError):
        apply_binning(Volume(np.zeros((2, 2, 2))), 6)
