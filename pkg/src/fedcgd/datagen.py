"""Synthetic classification data and the two non-IID splits.

The task is a mixture of isotropic Gaussian bumps, one per class. It is a
desk-scale stand-in for an image benchmark: cheap enough to train hundreds
of federated rounds on a CPU, yet non-trivially overlapping at the default
noise level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SyntheticTask:
    class_means: np.ndarray
    noise_std: float = 1.0
    train_per_class: int = 200
    test_per_class: int = 50

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.class_means, dtype=float))
        object.__setattr__(self, "class_means", means)
        if means.shape[0] < 2 or means.shape[1] < 1:
            raise ValueError("need at least 2 classes and 1 feature")
        if not self.noise_std > 0:
            raise ValueError("noise_std must be > 0")

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.class_means.shape[1]

    @classmethod
    def random(
        cls,
        num_classes: int = 10,
        feature_dim: int = 20,
        separation: float = 1.0,
        rng: np.random.Generator | None = None,
        **kwargs,
    ) -> "SyntheticTask":
        """Class means with i.i.d. N(0, separation^2) coordinates."""
        rng = np.random.default_rng(0) if rng is None else rng
        means = rng.standard_normal((num_classes, feature_dim)) * separation
        return cls(means, **kwargs)


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def distribution(self) -> np.ndarray:
        return self.class_counts() / len(self)


@dataclass
class DeviceDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    # positions in the source pool, for exact-cover checks and manifests
    indices: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.labels) < 1:
            raise ValueError("a device needs at least one sample")

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def label_dist(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes) / self.size


def gen_synthetic(task: SyntheticTask, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Draw train and test sets, grouped by class in label order."""

    def draw(per_class: int) -> Dataset:
        labels = np.repeat(np.arange(task.num_classes), per_class)
        noise = rng.standard_normal((labels.size, task.feature_dim)) * task.noise_std
        return Dataset(task.class_means[labels] + noise, labels, task.num_classes)

    return draw(task.train_per_class), draw(task.test_per_class)


def imbalance_counts(available: np.ndarray, ratio: float) -> np.ndarray:
    """Per-class sample counts giving second-half / first-half total = ``ratio``.

    The minority half is sized first (floored) and the majority half derived
    from it, so integer ratios are met exactly whenever the halves are equal.
    """
    if not ratio > 0:
        raise ValueError("imbalance ratio must be > 0")
    available = np.asarray(available)
    c = available.size
    k1, k2 = c // 2, c - c // 2
    cap = int(available.min())
    scale = ratio * k1 / k2  # m2 / m1
    if scale >= 1:
        m1 = int(np.floor(cap / scale))
        m2 = int(round(m1 * scale))
    else:
        m2 = int(np.floor(cap * scale))
        m1 = int(round(m2 / scale))
    if m1 < 1 or m2 < 1:
        raise ValueError(f"not enough samples per class ({cap}) for imbalance ratio {ratio}")
    return np.array([m1] * k1 + [m2] * k2)


def sort_and_partition(
    dataset: Dataset,
    num_devices: int,
    shards_per_device: int,
    ratio: float,
    rng: np.random.Generator,
) -> list[DeviceDataset]:
    """Imbalance-subsample, sort by label, cut into shards, deal shards out.

    Shards are equal-sized except the last, which absorbs the remainder.
    """
    counts = imbalance_counts(dataset.class_counts(), ratio)
    keep = []
    for c, m in enumerate(counts):
        idx = np.flatnonzero(dataset.labels == c)
        keep.append(np.sort(rng.choice(idx, size=m, replace=False)))
    pool = np.concatenate(keep)  # already sorted by label
    n_shards = num_devices * shards_per_device
    shard_size = pool.size // n_shards
    if shard_size < 1:
        raise ValueError(f"{pool.size} samples cannot fill {n_shards} shards")
    bounds = [i * shard_size for i in range(n_shards)] + [pool.size]
    shards = [pool[bounds[i]:bounds[i + 1]] for i in range(n_shards)]
    order = rng.permutation(n_shards)
    devices = []
    for v in range(num_devices):
        mine = order[v * shards_per_device:(v + 1) * shards_per_device]
        idx = np.concatenate([shards[s] for s in sorted(mine)])
        devices.append(
            DeviceDataset(dataset.features[idx], dataset.labels[idx], dataset.num_classes, idx)
        )
    return devices


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer apportionment of ``total`` proportional to ``weights``."""
    raw = np.asarray(weights, dtype=float) * total
    base = np.floor(raw).astype(int)
    short = total - base.sum()
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def dirichlet_partition(
    dataset: Dataset,
    num_devices: int,
    alpha: float,
    rng: np.random.Generator,
    samples_per_device: int | None = None,
) -> list[DeviceDataset]:
    """Each device draws p_v ~ Dir(alpha * p) and holds the same number of samples.

    Samples are taken from per-class shuffled pools; a class that runs dry is
    reshuffled and reused (see :func:`reused_samples`).
    """
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    p = dataset.distribution()
    quota = samples_per_device or len(dataset) // num_devices
    support = np.flatnonzero(p > 0)
    pools = {c: rng.permutation(np.flatnonzero(dataset.labels == c)) for c in support}
    cursor = dict.fromkeys(support, 0)
    devices = []
    for _ in range(num_devices):
        pv = np.zeros(dataset.num_classes)
        pv[support] = rng.dirichlet(alpha * p[support])
        counts = largest_remainder(pv, quota)
        picks = []
        for c in np.flatnonzero(counts):
            need = int(counts[c])
            while need:
                pool = pools[c]
                if cursor[c] == pool.size:
                    pools[c] = pool = rng.permutation(pool)
                    cursor[c] = 0
                take = min(need, pool.size - cursor[c])
                picks.append(pool[cursor[c]:cursor[c] + take])
                cursor[c] += take
                need -= take
        idx = np.concatenate(picks)
        devices.append(
            DeviceDataset(dataset.features[idx], dataset.labels[idx], dataset.num_classes, idx)
        )
    return devices


def reused_samples(devices: list[DeviceDataset]) -> int:
    """Number of sample slots that repeat an index already handed out."""
    idx = np.concatenate([d.indices for d in devices])
    return int(idx.size - np.unique(idx).size)


def union_distribution(devices: list[DeviceDataset]) -> np.ndarray:
    counts = sum(np.bincount(d.labels, minlength=d.num_classes) for d in devices)
    return counts / counts.sum()
