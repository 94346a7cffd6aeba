"""Synthetic datasets and their assignment to workers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray | None = None

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], None if self.y is None else self.y[idx])


@dataclass(frozen=True)
class WorkerPartition:
    """Per-worker index arrays into a training set, plus each worker's assigned labels."""

    indices: list[np.ndarray]
    label_sets: list[tuple[int, ...]] | None = None

    @property
    def num_workers(self) -> int:
        return len(self.indices)


def quadratic_targets(a) -> Dataset:
    """Worker ``m`` holds the single target ``a_m`` (scalar or vector)."""
    a = np.asarray(a, dtype=np.float64)
    return Dataset(a[:, None] if a.ndim == 1 else a)


def synth_heterogeneous_quadratic(a):
    """Per-worker objectives ``f_m(w) = ||w - a_m||^2 / 2`` and the global minimizer ``mean(a)``."""
    ds = quadratic_targets(a)
    if len(ds) % 2 == 0:
        raise ValueError("use an odd number of workers")
    return ds, ds.X.mean(axis=0)


def gaussian_mixture(n: int, features: int, classes: int, separation: float,
                     rng: np.random.Generator) -> Dataset:
    """Isotropic unit-variance blobs around random class means scaled by ``separation``."""
    means = rng.normal(0.0, separation, (classes, features))
    y = rng.integers(0, classes, n)
    X = means[y] + rng.normal(0.0, 1.0, (n, features))
    return Dataset(X, y)


def linear_regression_data(n: int, features: int, noise: float, rng: np.random.Generator) -> Dataset:
    coef = rng.normal(0.0, 1.0, features)
    X = rng.normal(0.0, 1.0, (n, features))
    y = X @ coef + 0.5 + noise * rng.normal(0.0, 1.0, n)
    return Dataset(X, y)


def train_test_split(ds: Dataset, rng: np.random.Generator, train_fraction: float = 0.8):
    perm = rng.permutation(len(ds))
    cut = int(round(train_fraction * len(ds)))
    return ds.subset(np.sort(perm[:cut])), ds.subset(np.sort(perm[cut:]))


def iid_partition(n: int, M: int, rng: np.random.Generator) -> WorkerPartition:
    if n < M:
        raise ValueError(f"cannot give {M} workers a sample each from {n} samples")
    perm = rng.permutation(n)
    return WorkerPartition([np.sort(part) for part in np.array_split(perm, M)])


def partition_by_label(labels, M: int, n: int, rng: np.random.Generator) -> WorkerPartition:
    """Give each worker samples from exactly ``n`` labels, without replacement.

    Label sets are drawn at random, preferring the least-used labels so that
    demand spreads evenly. Each of a worker's labels contributes up to
    ``floor(N / (M n))`` samples; a label that runs out yields fewer.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if n < 1 or n > classes.size:
        raise ValueError(f"need 1 <= labels_per_worker <= {classes.size}, got {n}")
    target = len(labels) // (M * n)
    if target < 1:
        raise ValueError(f"{len(labels)} samples cannot fill {M} workers x {n} labels")

    pools = {}
    for c in classes:
        idx = np.flatnonzero(labels == c)
        pools[int(c)] = list(rng.permutation(idx))
    usage = {int(c): 0 for c in classes}

    indices, label_sets = [], []
    for _ in range(M):
        order = sorted(usage, key=lambda c: (usage[c], rng.random()))
        chosen = tuple(sorted(order[:n]))
        for c in chosen:
            usage[c] += 1
        taken = []
        for c in chosen:
            take = min(target, len(pools[c]))
            taken.extend(pools[c][:take])
            del pools[c][:take]
        if not taken:
            raise ValueError(f"labels {chosen} are exhausted; lower M or labels_per_worker")
        indices.append(np.sort(np.asarray(taken, dtype=np.int64)))
        label_sets.append(chosen)
    return WorkerPartition(indices, label_sets)
