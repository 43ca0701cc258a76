import numpy as np
import pytest

from gmireg.phantom import Modality, PhantomSpec, generate_phantom, intensity_table, phantom_labels


def spec(**kw):
    base = dict(size=(24, 24, 24), spacing=(2, 2, 2), seed=3)
    base.update(kw)
    return PhantomSpec(**base)


def test_same_spec_same_bits():
    a = generate_phantom(spec())
    b = generate_phantom(spec())
    assert a.data.tobytes() == b.data.tobytes()


def test_different_seeds_differ():
    assert not np.array_equal(generate_phantom(spec(seed=3)).data, generate_phantom(spec(seed=4)).data)


def test_normalized_uint16_with_dark_background():
    v, labels = generate_phantom(spec(), with_labels=True)
    assert v.data.dtype == np.uint16
    assert v.data.min() == 0 and v.data.max() == 65535
    assert not v.data[labels == 0].any()
    assert v.spacing == (2.0, 2.0, 2.0)


def test_every_structure_present_and_nested():
    labels = phantom_labels(spec(structure_count=4))
    assert set(np.unique(labels).tolist()) == {0, 1, 2, 3, 4}
    assert labels[0, 0, 0] == 0


def test_modalities_share_geometry_with_reversed_tissue_order():
    _, l1 = generate_phantom(spec(modality="t1like"), with_labels=True)
    _, l2 = generate_phantom(spec(modality="t2like"), with_labels=True)
    assert np.array_equal(l1, l2)
    t1 = intensity_table(4, Modality.T1LIKE)
    t2 = intensity_table(4, Modality.T2LIKE)
    assert t1[0] == t2[0] == 0.0
    assert np.all(np.diff(t1[1:]) > 0) and np.all(np.diff(t2[1:]) < 0)


def test_noise_stays_within_amplitude():
    clean = generate_phantom(spec(noise=0.0))
    noisy = generate_phantom(spec(noise=0.02))
    diff = np.abs(clean.data.astype(float) - noisy.data.astype(float))
    # normalization stretches by at most 1 / (1 - 2 * noise)
    assert diff.max() <= 65535 * (0.02 + 0.02 * 2) + 1


def test_noise_free_tissue_is_piecewise_constant():
    v, labels = generate_phantom(spec(noise=0.0), with_labels=True)
    for k in range(5):
        assert len(np.unique(v.data[labels == k])) == 1


@pytest.mark.parametrize("bad", [dict(size=(4, 24, 24)), dict(noise=0.05), dict(structure_count=0),
                                 dict(size=(24, 24))])
def test_invalid_specs(bad):
    with pytest.raises(ValueError):
        spec(**bad)


def test_modality_aliases():
    assert Modality.parse("t2") is Modality.T2LIKE
    assert Modality.parse("T1like") is Modality.T1LIKE
    with pytest.raises(ValueError):
        Modality.parse("pd")
