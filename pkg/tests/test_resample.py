import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmireg.errors import EmptyOverlapError
from gmireg.resample import (
    FAST_SIN_TABLE_SIZE,
    Interpolator,
    fast_lanczos_kernel,
    fast_sin,
    lanczos_kernel,
    sample,
    sample_points,
    transformed_pairs,
)
from gmireg.transform import AffineParams, params_to_matrix
from gmireg.volume import Volume

INTERPS = ["nearest", "trilinear", "lanczos", "fastlanczos"]


def ramp(shape=(8, 9, 10), spacing=(1.0, 1.0, 1.0)):
    i, j, k = np.indices(shape)
    return Volume((3 * i + 5 * j + 7 * k).astype(np.uint16), spacing)


@pytest.mark.parametrize("interp", INTERPS)
def test_grid_points_reproduce_voxels(interp):
    v = ramp()
    pts = np.array([[0, 0, 0], [3, 4, 5], [7, 8, 9]], dtype=float)
    values, inside = sample_points(v, pts, interp)
    assert inside.all()
    assert values == pytest.approx([v.data[0, 0, 0], v.data[3, 4, 5], v.data[7, 8, 9]], abs=1e-9)


def test_trilinear_is_exact_on_linear_ramp():
    v = ramp()
    assert sample(v, (2.5, 3.25, 4.75), "trilinear") == pytest.approx(3 * 2.5 + 5 * 3.25 + 7 * 4.75)


def test_nearest_rounds_half_up():
    v = ramp()
    assert sample(v, (2.5, 0, 0), "nearest") == v.data[3, 0, 0]
    assert sample(v, (2.49, 0, 0), "nearest") == v.data[2, 0, 0]


@pytest.mark.parametrize("interp", INTERPS)
def test_inside_rule_is_voxel_footprint(interp):
    v = ramp((4, 4, 4), spacing=(2.0, 2.0, 2.0))
    assert sample(v, (-1.0, 0, 0), interp) is not None
    assert sample(v, (-1.01, 0, 0), interp) is None
    assert sample(v, (6.99, 0, 0), interp) is not None
    assert sample(v, (7.0, 0, 0), interp) is None


@pytest.mark.parametrize("interp", ["lanczos", "fastlanczos", "trilinear"])
def test_constant_volume_stays_constant(interp):
    v = Volume(np.full((6, 6, 6), 1234, dtype=np.uint16))
    values, _ = sample_points(v, np.random.default_rng(0).uniform(-0.5, 5.49, size=(50, 3)), interp)
    assert values == pytest.approx(1234.0, abs=1e-9)


def test_lanczos_kernel_values():
    x = np.array([0.0, 1.0, 2.0, 3.0, 0.5, 3.5])
    k = lanczos_kernel(x, 3)
    assert k[0] == 1.0 and k[5] == 0.0
    assert k[1:4] == pytest.approx(0.0, abs=1e-15)
    assert k[4] == pytest.approx(3 * np.sin(np.pi / 2) * np.sin(np.pi / 6) / (np.pi**2 * 0.25))


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50))
def test_fast_sin_accuracy(x):
    # linear interpolation error bound h^2 / 8 with h = 2 pi / 4096
    h = 2 * np.pi / FAST_SIN_TABLE_SIZE
    assert abs(fast_sin(x) - np.sin(x)) <= h * h / 8 + 1e-12


def test_fast_lanczos_close_to_exact():
    x = np.linspace(-3, 3, 1001)
    assert np.max(np.abs(fast_lanczos_kernel(x) - lanczos_kernel(x))) < 1e-5


def test_interpolator_parse():
    assert Interpolator.parse("FastLanczos").kind.value == "fastlanczos"
    with pytest.raises(ValueError):
        Interpolator("cubic")
    with pytest.raises(ValueError):
        Interpolator("lanczos", radius=0)


def test_translation_overlap_pair_count():
    v = Volume(np.zeros((64, 64, 64), dtype=np.uint16))
    m = params_to_matrix(AffineParams("translation", (6, 0, 0)))
    assert transformed_pairs(v, v, m).count == 58 * 64 * 64


def test_zero_fill_keeps_every_voxel():
    v = ramp()
    m = params_to_matrix(AffineParams("translation", (3, 0, 0)))
    pairs = transformed_pairs(v, v, m, outside="zero")
    assert pairs.count == v.size
    assert np.count_nonzero(pairs.moving == 0) >= 3 * 9 * 10


def test_empty_overlap_raises():
    v = ramp()
    m = params_to_matrix(AffineParams("translation", (100, 0, 0)))
    with pytest.raises(EmptyOverlapError):
        transformed_pairs(v, v, m)
    with pytest.raises(ValueError):
        transformed_pairs(v, v, np.eye(4), outside="wrap")


@settings(max_examples=60, deadline=None)
@given(st.tuples(*[st.floats(-12, 12)] * 3), st.tuples(*[st.sampled_from([0.7, 1.0, 2.5])] * 3))
def test_separable_path_matches_generic(t, spacing):
    # A tiny off-diagonal term forces the generic path without moving any sample.
    rng = np.random.default_rng(1)
    v = Volume(rng.integers(0, 65535, size=(7, 8, 9)).astype(np.uint16), spacing, (1.0, -2.0, 0.5))
    m = params_to_matrix(AffineParams("translation", t))
    try:
        fast = transformed_pairs(v, v, m)
    except EmptyOverlapError:
        return
    pts = np.indices(v.dims).reshape(3, -1).T * np.asarray(spacing) + np.asarray(v.origin) + np.asarray(t)
    values, inside = sample_points(v, pts, "nearest")
    assert np.array_equal(fast.fixed, v.data.ravel()[inside])
    assert np.array_equal(fast.moving, values)


def test_identity_pairs_are_the_volume():
    v = ramp()
    for interp in INTERPS:
        pairs = transformed_pairs(v, v, np.eye(4), interp)
        assert np.allclose(pairs.fixed, pairs.moving)
