"""Synthetic datasets, heterogeneous client partitions and CSV ingestion."""
import csv
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, ContractError, ParseError
from .numerics import Batch


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ContractError(f"dataset shapes disagree: X {X.shape}, y {y.shape}")
        if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.X.shape[0]

    @property
    def feature_dim(self):
        return self.X.shape[1]

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.num_classes)

    def batch(self, indices=None):
        if indices is None:
            return Batch(self.X, self.y)
        return Batch(self.X[indices], self.y[indices])


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str  # "dirichlet" | "pathological"
    num_clients: int
    seed: int = 0
    u: float = 0.1
    c: int = 2

    def __post_init__(self):
        if self.scheme not in ("dirichlet", "pathological"):
            raise ConfigError(f"unknown partition scheme {self.scheme!r}")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if self.scheme == "dirichlet" and not self.u > 0:
            raise ConfigError("dirichlet u must be > 0")
        if self.scheme == "pathological" and self.c < 1:
            raise ConfigError("pathological c must be >= 1")


@dataclass(frozen=True, eq=False)
class ClientShard:
    client_id: int
    indices: np.ndarray

    def __len__(self):
        return len(self.indices)


def gen_synthetic_classification(seed, n_samples, feature_dim, num_classes, class_sep):
    """Gaussian mixture with unit covariance and class means on a sphere.

    When ``num_classes <= feature_dim`` the means are a random orthonormal
    frame scaled by ``class_sep``; otherwise independent random directions.
    Class sizes differ by at most one.
    """
    if num_classes < 2 or n_samples < num_classes or feature_dim < 1:
        raise ContractError("need n_samples >= num_classes >= 2 and feature_dim >= 1")
    if not class_sep > 0:
        raise ContractError("class_sep must be positive")
    g = rngmod.stream(seed, rngmod.DATA)
    if num_classes <= feature_dim:
        q, r = np.linalg.qr(g.standard_normal((feature_dim, num_classes)))
        dirs = (q * np.sign(np.diag(r))).T
    else:
        dirs = g.standard_normal((num_classes, feature_dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = class_sep * dirs
    y = g.permutation(np.arange(n_samples) % num_classes)
    X = means[y] + g.standard_normal((n_samples, feature_dim))
    return Dataset(X, y, num_classes)


def train_test_split(dataset, seed, test_fraction=0.2):
    perm = rngmod.stream(seed, rngmod.SPLIT).permutation(len(dataset))
    n_test = int(round(test_fraction * len(dataset)))
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


def _largest_remainder(total, weights):
    w = np.asarray(weights, dtype=np.float64)
    s = w.sum()
    if s <= 0:
        w = np.ones_like(w)
        s = w.sum()
    quota = total * w / s
    counts = np.floor(quota).astype(np.int64)
    short = total - counts.sum()
    if short > 0:
        # stable sort keeps ties deterministic (lowest index wins)
        order = np.argsort(-(quota - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def check_partition(shards, n):
    """Raise if the shards are not a disjoint, exhaustive cover of ``range(n)``."""
    all_idx = np.concatenate([s.indices for s in shards]) if shards else np.zeros(0, np.int64)
    if len(all_idx) != n or not np.array_equal(np.sort(all_idx), np.arange(n)):
        raise AssertionError("shards do not partition the index set")


def _ensure_nonempty(assigned):
    """Move one sample into each empty client from the currently largest one."""
    sizes = [len(a) for a in assigned]
    for i in range(len(assigned)):
        if sizes[i] == 0:
            donor = int(np.argmax(sizes))
            if sizes[donor] < 2:
                raise ConfigError("not enough samples to give every client one")
            assigned[i].append(assigned[donor].pop())
            sizes[i] += 1
            sizes[donor] -= 1


def dirichlet_partition(dataset, spec):
    if len(dataset) == 0:
        raise ContractError("cannot partition an empty dataset")
    N, C = spec.num_clients, dataset.num_classes
    g = rngmod.stream(spec.seed, rngmod.PARTITION)
    props = g.dirichlet(np.full(C, spec.u), size=N)  # (N, C)
    assigned = [[] for _ in range(N)]
    for c in range(C):
        idx = np.flatnonzero(dataset.y == c)
        idx = idx[g.permutation(len(idx))]
        counts = _largest_remainder(len(idx), props[:, c])
        start = 0
        for i in range(N):
            assigned[i].extend(idx[start:start + counts[i]].tolist())
            start += counts[i]
    _ensure_nonempty(assigned)
    shards = [ClientShard(i, np.array(sorted(a), dtype=np.int64)) for i, a in enumerate(assigned)]
    check_partition(shards, len(dataset))
    return shards


def pathological_partition(dataset, spec):
    N, C, c = spec.num_clients, dataset.num_classes, spec.c
    if c > C:
        raise ConfigError(f"pathological c={c} exceeds num_classes={C}")
    if N * c < C:
        raise ConfigError(f"infeasible pathological split: N*c = {N * c} < num_classes = {C}")
    g = rngmod.stream(spec.seed, rngmod.PARTITION)
    perm = g.permutation(C)
    # consecutive windows of length c on the cyclic sequence hold distinct classes
    classes_of = [[int(perm[(i * c + j) % C]) for j in range(c)] for i in range(N)]
    owners = {k: [] for k in range(C)}
    for i, cls in enumerate(classes_of):
        for k in cls:
            owners[k].append(i)
    assigned = [[] for _ in range(N)]
    for k in range(C):
        idx = np.flatnonzero(dataset.y == k)
        idx = idx[g.permutation(len(idx))]
        if len(idx) < len(owners[k]):
            raise ConfigError(
                f"class {k} has {len(idx)} samples for {len(owners[k])} clients")
        for i, part in zip(owners[k], np.array_split(idx, len(owners[k]))):
            assigned[i].extend(part.tolist())
    shards = [ClientShard(i, np.array(sorted(a), dtype=np.int64)) for i, a in enumerate(assigned)]
    check_partition(shards, len(dataset))
    return shards


def partition(dataset, spec):
    if spec.scheme == "dirichlet":
        return dirichlet_partition(dataset, spec)
    return pathological_partition(dataset, spec)


def load_csv(path):
    """Read ``f1,...,fd,label`` rows (header required) into a Dataset."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("missing header", line=1) from None
        d = len(header) - 1
        if d < 1:
            raise ParseError("header needs at least one feature column and a label", line=1)
        X, y = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != d + 1:
                raise ParseError(f"expected {d + 1} fields, got {len(row)}", line=line)
            try:
                feats = [float(v) for v in row[:-1]]
            except ValueError:
                raise ParseError("non-numeric feature", line=line) from None
            try:
                label = int(row[-1].strip())
            except ValueError:
                raise ParseError(f"label {row[-1]!r} is not an integer", line=line) from None
            if label < 0:
                raise ParseError(f"negative label {label}", line=line)
            if not all(np.isfinite(feats)):
                raise ParseError("non-finite feature", line=line)
            X.append(feats)
            y.append(label)
    if not y:
        raise ParseError("no samples")
    return Dataset(np.array(X, dtype=np.float64), np.array(y, dtype=np.int64), max(y) + 1)


class BatchSampler:
    """Mini-batches without replacement, reshuffling after each pass over the shard."""

    def __init__(self, data, batch_size, rng):
        self.data = data
        self.batch_size = batch_size
        self.rng = rng
        self._order = None
        self._pos = 0

    def next(self):
        n = len(self.data)
        if n == 0:
            return self.data
        if self._order is None or self._pos >= n:
            self._order = self.rng.permutation(n)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += len(idx)
        return Batch(self.data.inputs[idx], self.data.labels[idx])
