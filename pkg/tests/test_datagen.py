import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedcgd import datagen as dg
from fedcgd import fltrain as fl


def make(c=10, d=5, per_class=200, seed=0, **kw):
    task = dg.SyntheticTask.random(c, d, rng=np.random.default_rng(seed), train_per_class=per_class, **kw)
    return task, *dg.gen_synthetic(task, np.random.default_rng(seed + 1))


def test_task_validation():
    with pytest.raises(ValueError):
        dg.SyntheticTask(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        dg.SyntheticTask(np.zeros((2, 3)), noise_std=0.0)


def test_separable_limit_is_learnable():
    task = dg.SyntheticTask(np.array([[1.0, 0.0], [-1.0, 0.0]]), noise_std=1e-6, test_per_class=100)
    train, test = dg.gen_synthetic(task, np.random.default_rng(0))
    model = np.zeros((2, 3))
    model[0, 0], model[1, 0] = 1.0, -1.0
    assert fl.evaluate(model, test) == 1.0
    # and a trained model gets there too
    w = fl.init_model(2, 2)
    for _ in range(50):
        _, g = fl.loss_and_grad(w, train.features, train.labels)
        w -= 0.5 * g
    assert fl.evaluate(w, test) == 1.0


def test_generation_is_deterministic_and_exact():
    _, a, _ = make(seed=4)
    _, b, _ = make(seed=4)
    assert a.features.tobytes() == b.features.tobytes()
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.distribution(), np.full(10, 0.1))
    assert np.array_equal(a.class_counts(), np.full(10, 200))


def test_imbalance_counts():
    assert list(dg.imbalance_counts(np.full(10, 200), 9)) == [22] * 5 + [198] * 5
    assert list(dg.imbalance_counts(np.full(10, 200), 1)) == [200] * 10
    assert list(dg.imbalance_counts(np.full(2, 200), 9)) == [22, 198]
    with pytest.raises(ValueError):
        dg.imbalance_counts(np.full(10, 5), 100)
    with pytest.raises(ValueError):
        dg.imbalance_counts(np.full(10, 5), 0)


def test_sort_partition_one_class_per_device():
    _, train, _ = make(c=10)
    devs = dg.sort_and_partition(train, 10, 1, 1, np.random.default_rng(0))
    assert all(np.count_nonzero(d.label_dist) == 1 for d in devs)
    union = dg.union_distribution(devs)
    assert np.abs(union - 0.1).sum() == pytest.approx(0.0, abs=1e-12)


def test_sort_partition_imbalance_two_classes():
    _, train, _ = make(c=2)
    devs = dg.sort_and_partition(train, 4, 1, 9, np.random.default_rng(0))
    assert np.allclose(dg.union_distribution(devs), [0.1, 0.9])


def test_sort_partition_two_shards_at_most_two_classes():
    _, train, _ = make(c=10)
    devs = dg.sort_and_partition(train, 50, 2, 1, np.random.default_rng(1))
    assert all(np.count_nonzero(d.label_dist) <= 2 for d in devs)


@given(st.integers(1, 40), st.integers(1, 3), st.sampled_from([1, 3, 9]), st.integers(0, 100))
def test_sort_partition_is_exact_cover(v, l, r, seed):
    _, train, _ = make(c=4, per_class=60)
    counts = dg.imbalance_counts(train.class_counts(), r)
    if counts.sum() < v * l:
        with pytest.raises(ValueError):
            dg.sort_and_partition(train, v, l, r, np.random.default_rng(seed))
        return
    devs = dg.sort_and_partition(train, v, l, r, np.random.default_rng(seed))
    idx = np.concatenate([d.indices for d in devs])
    assert idx.size == counts.sum() == np.unique(idx).size
    assert np.array_equal(np.bincount(train.labels[idx], minlength=4), counts)
    for d in devs:
        assert d.label_dist.sum() == pytest.approx(1.0)
        assert np.array_equal(d.labels, train.labels[d.indices])


def test_sort_partition_last_shard_takes_remainder():
    _, train, _ = make(c=2, per_class=10)  # 20 samples, 3 shards -> 6, 6, 8
    devs = dg.sort_and_partition(train, 3, 1, 1, np.random.default_rng(0))
    assert sorted(d.size for d in devs) == [6, 6, 8]


def test_largest_remainder():
    assert list(dg.largest_remainder([0.5, 0.25, 0.25], 3)) == [1, 1, 1]
    assert list(dg.largest_remainder([0.625, 0.25, 0.125], 4)) == [3, 1, 0]
    assert dg.largest_remainder(np.random.default_rng(0).dirichlet(np.ones(7)), 101).sum() == 101


def test_dirichlet_concentration_limit():
    _, train, _ = make()
    devs = dg.dirichlet_partition(train, 20, 1e6, np.random.default_rng(0))
    p = train.distribution()
    assert all(np.abs(d.label_dist - p).sum() <= 0.02 for d in devs)


def test_dirichlet_small_alpha_is_skewed():
    _, train, _ = make()
    shares = []
    for seed in range(5):
        devs = dg.dirichlet_partition(train, 64, 0.1, np.random.default_rng(seed))
        shares.extend(d.label_dist.max() for d in devs)
    assert np.mean(shares) > 0.5


@given(st.integers(1, 64), st.floats(0.05, 100), st.integers(0, 100))
def test_dirichlet_equal_sizes_and_valid_labels(v, alpha, seed):
    _, train, _ = make(c=5, per_class=40)
    devs = dg.dirichlet_partition(train, v, alpha, np.random.default_rng(seed))
    assert len({d.size for d in devs}) == 1
    for d in devs:
        assert np.array_equal(d.labels, train.labels[d.indices])
        assert d.label_dist.sum() == pytest.approx(1.0, abs=1e-9)


def test_dirichlet_no_reuse_when_pools_suffice():
    _, train, _ = make()
    devs = dg.dirichlet_partition(train, 8, 1e6, np.random.default_rng(0), samples_per_device=100)
    assert dg.reused_samples(devs) == 0


def test_dirichlet_reuse_is_reported():
    _, train, _ = make()
    devs = dg.dirichlet_partition(train, 64, 0.1, np.random.default_rng(0))
    idx = np.concatenate([d.indices for d in devs])
    assert dg.reused_samples(devs) == idx.size - np.unique(idx).size


def test_partitions_are_seeded():
    _, train, _ = make()
    for part in (
        lambda rng: dg.dirichlet_partition(train, 16, 0.5, rng),
        lambda rng: dg.sort_and_partition(train, 16, 2, 3, rng),
    ):
        a, b = part(np.random.default_rng(9)), part(np.random.default_rng(9))
        assert all(np.array_equal(x.indices, y.indices) for x, y in zip(a, b))


def test_dirichlet_validation():
    _, train, _ = make()
    with pytest.raises(ValueError):
        dg.dirichlet_partition(train, 4, 0.0, np.random.default_rng(0))
