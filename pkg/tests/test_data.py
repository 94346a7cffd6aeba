import numpy as np
import pytest

from stosign.learning import data


def test_heterogeneous_quadratic():
    ds, w_star = data.synth_heterogeneous_quadratic([-3.0, 1.0, 1.0])
    assert w_star[0] == pytest.approx(-1 / 3)
    np.testing.assert_array_equal(ds.X[:, 0], [-3, 1, 1])
    with pytest.raises(ValueError):
        data.synth_heterogeneous_quadratic([1.0, 2.0])


def test_single_label_workers():
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(10), 100)
    part = data.partition_by_label(labels, 31, 1, rng)
    assert part.num_workers == 31
    for idx, labs in zip(part.indices, part.label_sets):
        assert len(labs) == 1 and set(labels[idx]) == set(labs)


@pytest.mark.parametrize("seed", range(5))
def test_partition_structure(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 6, 600)
    part = data.partition_by_label(labels, 7, 3, rng)
    seen = np.concatenate(part.indices)
    assert seen.size == np.unique(seen).size
    for idx, labs in zip(part.indices, part.label_sets):
        assert len(labs) == 3 and set(labels[idx]) <= set(labs)


def test_all_labels_per_worker_is_near_homogeneous():
    rng = np.random.default_rng(1)
    labels = np.repeat(np.arange(4), 200)
    part = data.partition_by_label(labels, 4, 4, rng)
    for idx in part.indices:
        np.testing.assert_array_equal(np.bincount(labels[idx], minlength=4), 50)  # 800 // (4 * 4) per label


def test_partition_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        data.partition_by_label(np.zeros(10, dtype=int), 2, 2, rng)
    with pytest.raises(ValueError):
        data.partition_by_label(np.arange(4), 3, 2, rng)


def test_split_and_iid():
    rng = np.random.default_rng(2)
    ds = data.gaussian_mixture(100, 3, 4, 2.0, rng)
    tr, te = data.train_test_split(ds, rng)
    assert len(tr) == 80 and len(te) == 20
    part = data.iid_partition(80, 3, rng)
    assert sorted(np.concatenate(part.indices).tolist()) == list(range(80))
