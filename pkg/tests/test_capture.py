import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gmireg.capture import (
    capture_report,
    format_rate,
    neighbor_offsets,
    simulate_capture,
)
from gmireg.landscape import MetricCube
from gmireg.metric import MetricSpec


def cube(values, empty=None):
    values = np.asarray(values, dtype=float)
    R = values.shape[0]
    empty = np.zeros(values.shape, bool) if empty is None else empty
    return MetricCube(R, "translation", MetricSpec("shannon"), values, empty)


def bfs_oracle(values, empty, connectivity, seed_order):
    """Queue-based flood fill visiting neighbours in a shuffled order."""
    R = values.shape[0]
    c = (R - 1) // 2
    captured = {(c, c, c)}
    queue = [(c, c, c)]
    offsets = neighbor_offsets(connectivity)
    rnd = random.Random(seed_order)
    while queue:
        m = queue.pop(rnd.randrange(len(queue)))
        shuffled = offsets[:]
        rnd.shuffle(shuffled)
        for d in shuffled:
            n = tuple(a + b for a, b in zip(m, d))
            if any(i < 0 or i >= R for i in n) or n in captured or empty[n]:
                continue
            if values[m] > values[n]:
                captured.add(n)
                queue.append(n)
    mask = np.zeros(values.shape, bool)
    for idx in captured:
        mask[idx] = True
    return mask


def test_single_peak_captures_everything():
    i, j, k = np.indices((7, 7, 7)) - 3
    c = cube(-(i**2 + j**2 + k**2))
    for conn in (6, 26):
        assert simulate_capture(c, conn).rate == 1.0


def test_corner_local_maximum_not_captured():
    i, j, k = np.indices((3, 3, 3)) - 1
    v = -(i**2 + j**2 + k**2).astype(float)
    v[2, 2, 2] = 10.0
    v[1, 1, 1] = 5.0
    res = simulate_capture(cube(v), 26)
    assert not res.captured[2, 2, 2]
    assert res.rate == 26 / 27


def test_constant_cube_only_seed():
    res = simulate_capture(cube(np.ones((5, 5, 5))))
    assert res.rate == 1 / 125
    assert res.captured[2, 2, 2]


def test_empty_voxels_never_captured():
    i, j, k = np.indices((5, 5, 5)) - 2
    empty = np.zeros((5, 5, 5), bool)
    empty[0, :, :] = True
    res = simulate_capture(cube(-(i**2 + j**2 + k**2), empty))
    assert not res.captured[empty].any()
    assert res.rate == 100 / 125


def test_minimize_direction():
    i, j, k = np.indices((5, 5, 5)) - 2
    assert simulate_capture(cube(i**2 + j**2 + k**2), direction="minimize").rate == 1.0
    assert simulate_capture(cube(i**2 + j**2 + k**2), direction="maximize").rate == 1 / 125


def test_seed_mode_compares_with_seed_value():
    v = np.zeros((3, 3, 3))
    v[1, 1, 1] = 1.0
    v[0, 1, 1] = 0.5
    v[0, 0, 1] = 0.9  # reaches the seed value only through seed mode
    adjacent = simulate_capture(cube(v), 6, mode="adjacent")
    seed = simulate_capture(cube(v), 6, mode="seed")
    assert not adjacent.captured[0, 0, 1]
    assert seed.captured[0, 0, 1]


def test_invalid_arguments():
    c = cube(np.zeros((3, 3, 3)))
    with pytest.raises(ValueError):
        simulate_capture(c, 18)
    with pytest.raises(ValueError):
        simulate_capture(c, direction="up")
    with pytest.raises(ValueError):
        simulate_capture(c, mode="global")


small_cubes = st.integers(1, 3).flatmap(
    lambda h: arrays(np.int8, (2 * h + 1,) * 3, elements=st.integers(-4, 4))
)


@settings(max_examples=150, deadline=None)
@given(small_cubes, st.integers(0, 10**6))
def test_matches_randomized_bfs_oracle(values, order_seed):
    values = values.astype(float)
    empty = np.zeros(values.shape, bool)
    empty.flat[order_seed % values.size] = True
    empty[(values.shape[0] - 1) // 2, (values.shape[0] - 1) // 2, (values.shape[0] - 1) // 2] = False
    for conn in (6, 26):
        expected = bfs_oracle(values, empty, conn, order_seed)
        got = simulate_capture(cube(values, empty), conn).captured
        assert np.array_equal(got, expected)


@settings(max_examples=150, deadline=None)
@given(small_cubes)
def test_six_connectivity_is_subset_of_26(values):
    c = cube(values)
    six = simulate_capture(c, 6).captured
    all26 = simulate_capture(c, 26).captured
    assert not np.any(six & ~all26)


@settings(max_examples=100, deadline=None)
@given(small_cubes)
def test_rate_is_popcount_over_volume(values):
    res = simulate_capture(cube(values))
    assert res.rate == res.captured.sum() / values.size
    assert res.captured[res.seed_index]


def test_format_rate_truncates():
    assert format_rate(0.9999) == "99.99%"
    assert format_rate(0.99999) == "99.99%"
    assert format_rate(1.0) == "100.00%"
    assert format_rate(0.8614) == "86.14%"


def test_report_layout():
    a = MetricSpec("tsallis-nonadditive", 1.5)
    b = MetricSpec("tsallis-additive", 1.5)
    table = capture_report([(a, "translation", 0.9999), (a, "rotation", 0.5), (b, "translation", 0.8614)])
    lines = table.strip().splitlines()
    assert lines[0] == "| Metric | Q | Binning | Translation | Rotation |"
    assert lines[2] == "| tsallis-nonadditive | 1.5 | No | 99.99% | 50.00% |"
    assert lines[3] == "| tsallis-additive | 1.5 | No | 86.14% |  |"
    csv = capture_report([(a, "scale", 0.25)], "csv")
    assert csv.splitlines() == ["Metric,Q,Binning,Scale", "tsallis-nonadditive,1.5,No,25.00%"]
    with pytest.raises(ValueError):
        capture_report([])
