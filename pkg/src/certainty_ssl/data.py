"""Synthetic datasets, semi-supervised label masking, label corruption, CSV I/O."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Dataset:
    """Features and labels with a labeled/unlabeled split of the training rows.

    ``labels`` holds the label the learner is allowed to see for labeled
    rows (possibly corrupted) and the true label everywhere else; ``-1``
    means unknown. Trainers must read labels through :meth:`visible_labels`;
    :meth:`diagnostic_labels` exposes the clean ground truth for reporting.
    """

    features: np.ndarray
    labels: np.ndarray
    labeled: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    n_classes: int
    clean_labels: np.ndarray | None = None
    corrupted_idx: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.labeled = np.asarray(self.labeled, dtype=bool)
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        n = self.features.shape[0]
        if self.labels.shape != (n,) or self.labeled.shape != (n,):
            raise ValueError("labels and labeled flags must have one entry per row")
        if np.intersect1d(self.train_idx, self.test_idx).size:
            raise ValueError("train and test splits overlap")
        if np.any(self.labeled[self.test_idx]):
            raise ValueError("test rows cannot be flagged labeled")
        lab = self.labels[self.labeled]
        if np.any((lab < 0) | (lab >= self.n_classes)):
            raise ValueError("every labeled row needs a class index in [0, n_classes)")

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_labeled(self) -> int:
        return int(self.labeled.sum())

    def visible_labels(self) -> np.ndarray:
        """Labels of labeled rows, ``-1`` everywhere else."""
        return np.where(self.labeled, self.labels, -1)

    def diagnostic_labels(self) -> np.ndarray:
        """Clean ground truth for every row. Never feed this into a loss."""
        return (self.clean_labels if self.clean_labels is not None else self.labels).copy()

    def test_set(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[self.test_idx], self.diagnostic_labels()[self.test_idx]

    def replace(self, **changes) -> "Dataset":
        return dataclasses.replace(self, **changes)


def _balanced_counts(n: int, n_classes: int) -> np.ndarray:
    counts = np.full(n_classes, n // n_classes)
    counts[: n % n_classes] += 1
    return counts


def _assemble(parts, n_train: int, n_test: int, n_classes: int, standardize: bool) -> Dataset:
    """Stack (features, labels) for train then test and standardize on train statistics."""
    x = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    if standardize:
        train = x[:n_train]
        x = (x - train.mean(axis=0)) / train.std(axis=0)
    n = n_train + n_test
    return Dataset(features=x, labels=y, labeled=np.arange(n) < n_train,
                   train_idx=np.arange(n_train), test_idx=np.arange(n_train, n),
                   n_classes=n_classes)


def _check_size(n: int, n_classes: int) -> None:
    if n < 2 * n_classes:
        raise ValueError(f"n={n} too small; need at least {2 * n_classes} samples for {n_classes} classes")


def _moons(n: int, noise: float, rng: np.random.Generator):
    counts = _balanced_counts(n, 2)
    t0 = rng.uniform(0.0, np.pi, counts[0])
    t1 = rng.uniform(0.0, np.pi, counts[1])
    outer = np.column_stack([np.cos(t0), np.sin(t0)])
    inner = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.concatenate([outer, inner])
    if noise > 0:
        x = x + noise * rng.standard_normal(x.shape)
    y = np.repeat([0, 1], counts)
    perm = rng.permutation(n)
    return x[perm], y[perm]


def gen_two_moons(n: int, noise: float = 0.1, seed: int = 0, n_test: int | None = None,
                  standardize: bool = True) -> Dataset:
    """Two interleaved half circles. ``n`` training rows, then ``n_test`` test rows (default ``n``).

    All rows come back flagged labeled; use :func:`split_semi_supervised`.
    """
    n_test = n if n_test is None else n_test
    _check_size(n, 2)
    rng = np.random.default_rng(seed)
    parts = [_moons(n, noise, rng)] + ([_moons(n_test, noise, rng)] if n_test else [])
    return _assemble(parts, n, n_test, 2, standardize)


def _blobs(n: int, n_classes: int, spread: float, rng: np.random.Generator):
    counts = _balanced_counts(n, n_classes)
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    centers = np.column_stack([np.cos(angles), np.sin(angles)])
    y = np.repeat(np.arange(n_classes), counts)
    x = centers[y] + spread * rng.standard_normal((n, 2))
    perm = rng.permutation(n)
    return x[perm], y[perm]


def gen_blobs(n: int, n_classes: int = 4, spread: float = 0.3, seed: int = 0,
              n_test: int | None = None, standardize: bool = True) -> Dataset:
    """Isotropic Gaussian blobs centred evenly on the unit circle."""
    n_test = n if n_test is None else n_test
    _check_size(n, n_classes)
    rng = np.random.default_rng(seed)
    parts = [_blobs(n, n_classes, spread, rng)] + ([_blobs(n_test, n_classes, spread, rng)] if n_test else [])
    return _assemble(parts, n, n_test, n_classes, standardize)


def _circles(n: int, noise: float, factor: float, rng: np.random.Generator):
    counts = _balanced_counts(n, 2)
    t = rng.uniform(0.0, 2 * np.pi, n)
    y = np.repeat([0, 1], counts)
    radius = np.where(y == 0, 1.0, factor)
    x = np.column_stack([radius * np.cos(t), radius * np.sin(t)])
    if noise > 0:
        x = x + noise * rng.standard_normal(x.shape)
    perm = rng.permutation(n)
    return x[perm], y[perm]


def gen_circles(n: int, noise: float = 0.05, seed: int = 0, n_test: int | None = None,
                factor: float = 0.5, standardize: bool = True) -> Dataset:
    """Two concentric circles; class 1 is the inner one."""
    n_test = n if n_test is None else n_test
    _check_size(n, 2)
    rng = np.random.default_rng(seed)
    parts = [_circles(n, noise, factor, rng)] + ([_circles(n_test, noise, factor, rng)] if n_test else [])
    return _assemble(parts, n, n_test, 2, standardize)


def split_semi_supervised(ds: Dataset, n_labeled: int, seed: int = 0) -> Dataset:
    """Flag a class-balanced random subset of the training rows as labeled."""
    c = ds.n_classes
    if n_labeled < c:
        raise ValueError(f"n_labeled={n_labeled} < n_classes={c}")
    if n_labeled > ds.train_idx.size:
        raise ValueError(f"n_labeled={n_labeled} exceeds train size {ds.train_idx.size}")
    rng = np.random.default_rng(seed)
    truth = ds.diagnostic_labels()
    by_class = [ds.train_idx[truth[ds.train_idx] == k] for k in range(c)]
    # larger per-class quotas go to randomly chosen classes
    quotas = np.full(c, n_labeled // c)
    quotas[rng.permutation(c)[: n_labeled % c]] += 1
    for k, (members, quota) in enumerate(zip(by_class, quotas)):
        if quota > members.size:
            raise ValueError(f"class {k} has {members.size} training rows, cannot label {quota}")
    labeled = np.zeros(ds.features.shape[0], dtype=bool)
    for members, quota in zip(by_class, quotas):
        labeled[rng.choice(members, size=quota, replace=False)] = True
    return ds.replace(labeled=labeled)


def corrupt_labels(ds: Dataset, fraction: float, seed: int = 0) -> Dataset:
    """Replace ``round(fraction * N_l)`` labeled labels with a different, random class."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    n_bad = int(round(fraction * ds.n_labeled))
    if n_bad == 0:
        return ds
    rng = np.random.default_rng(seed)
    candidates = np.flatnonzero(ds.labeled)
    idx = np.sort(rng.choice(candidates, size=n_bad, replace=False))
    labels = ds.labels.copy()
    # shift by 1..C-1 so the new label is uniform over the other classes
    labels[idx] = (labels[idx] + rng.integers(1, ds.n_classes, size=n_bad)) % ds.n_classes
    clean = ds.diagnostic_labels()
    return ds.replace(labels=labels, clean_labels=clean,
                      corrupted_idx=np.union1d(ds.corrupted_idx, idx))


def save_csv(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    header = [f"f{j}" for j in range(ds.n_features)] + ["label", "labeled"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row, label, flag in zip(ds.features, ds.labels, ds.labeled):
            writer.writerow([format(v, ".17g") for v in row] + [int(label), int(flag)])


def load_csv(path: str | Path, n_classes: int | None = None) -> Dataset:
    """Read a ``f0,...,label,labeled`` file; every row lands in the training split."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    header, body = rows[0], rows[1:]
    if len(header) < 3 or header[-2:] != ["label", "labeled"] or \
            header[:-2] != [f"f{j}" for j in range(len(header) - 2)]:
        raise ValueError(f"{path}: line 1: bad header {header}")
    if not body:
        raise ValueError(f"{path}: no data rows")
    d = len(header) - 2
    feats, labels, flags = [], [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != d + 2:
            raise ValueError(f"{path}: line {lineno}: expected {d + 2} fields, got {len(row)}")
        try:
            feats.append([float(v) for v in row[:d]])
            label, flag = int(row[d]), int(row[d + 1])
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
        if flag not in (0, 1):
            raise ValueError(f"{path}: line {lineno}: labeled must be 0 or 1, got {flag}")
        if label < -1 or (flag == 1 and label < 0):
            raise ValueError(f"{path}: line {lineno}: invalid label {label}")
        labels.append(label)
        flags.append(bool(flag))
    x = np.array(feats, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{path}: non-finite feature values")
    y = np.array(labels, dtype=np.int64)
    c = int(y.max()) + 1 if n_classes is None else n_classes
    return Dataset(features=x, labels=y, labeled=np.array(flags), train_idx=np.arange(len(y)),
                   test_idx=np.empty(0, dtype=np.int64), n_classes=max(c, 1))
