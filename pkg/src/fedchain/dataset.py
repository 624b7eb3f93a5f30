"""Datasets, IID/non-IID partitioning and partition-to-node assignment."""

from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractViolation, FormatError, PartitionError, TruncatedFileError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

ASSIGNMENT_STRATEGIES = ("one-to-one", "random-with-replacement")


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise FormatError("features must be a 2-D matrix")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise FormatError("features and labels must have the same number of rows")
        if features.shape[0] < 1:
            raise FormatError("a dataset needs at least one sample")
        if self.num_classes < 1 or labels.min() < 0 or labels.max() >= self.num_classes:
            raise FormatError(f"labels must lie in [0, {self.num_classes})")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices, name=None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, name or self.name)

    def class_counts(self, indices=None) -> np.ndarray:
        labels = self.labels if indices is None else self.labels[np.asarray(indices, dtype=np.int64)]
        return np.bincount(labels, minlength=self.num_classes)

    def to_csv(self, path) -> None:
        """Header ``f0..f{d-1},label``; floats written with ``repr`` precision."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"f{i}" for i in range(self.dim)] + ["label"])
            for row, label in zip(self.features, self.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])


def read_csv(path, num_classes=None, name=None) -> Dataset:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    labels = data[:, -1].astype(np.int64)
    c = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(data[:, :-1], labels, c, name or Path(path).stem)


def generate_blobs(num_classes: int, per_class: int, dim: int, spread: float, seed: int) -> Dataset:
    """Gaussian clusters around centers spaced evenly on a radius-5 circle.

    The circle lives in the first two feature axes; with ``dim == 1`` only the
    cosine coordinate is used.
    """
    if num_classes < 1 or per_class < 1 or dim < 1:
        raise ContractViolation("num_classes, per_class and dim must all be >= 1")
    if not spread > 0:
        raise ContractViolation("spread must be > 0")
    rng = np.random.default_rng(seed)
    centers = np.zeros((num_classes, dim))
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    centers[:, 0] = 5.0 * np.cos(angles)
    if dim > 1:
        centers[:, 1] = 5.0 * np.sin(angles)
    labels = np.repeat(np.arange(num_classes), per_class)
    features = centers[labels] + rng.normal(0.0, spread, size=(labels.size, dim))
    return Dataset(features, labels, num_classes, "blobs")


# -- IDX ---------------------------------------------------------------------


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def _read_idx(path, expected_magic):
    with _open_maybe_gzip(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise TruncatedFileError(f"{path}: truncated IDX header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header_len])
    count = math.prod(dims)
    if len(raw) - header_len < count:
        raise TruncatedFileError(f"{path}: expected {count} data bytes, found {len(raw) - header_len}")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_len)
    return dims, data


def load_idx(images_path, labels_path, num_classes=None, name="mnist") -> Dataset:
    """Read an IDX image/label pair (plain or gzipped).

    Pixels are scaled to ``[0, 1]`` by ``/255`` and each image is flattened
    row-major. ``num_classes`` defaults to ``max(label) + 1``, but at least 10
    when the data has 784 features (MNIST).
    """
    img_dims, pixels = _read_idx(images_path, IDX_IMAGES_MAGIC)
    lab_dims, labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if img_dims[0] != lab_dims[0]:
        raise FormatError(f"image count {img_dims[0]} does not match label count {lab_dims[0]}")
    n = img_dims[0]
    d = math.prod(img_dims[1:])
    features = pixels.reshape(n, d).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if n else 1
        if d == 784:
            num_classes = max(num_classes, 10)
    return Dataset(features, labels, num_classes, name)


def write_idx(dataset: Dataset, images_path, labels_path, image_shape=None) -> None:
    """Write ``dataset`` as an IDX pair, quantizing features to ``round(255 * x)``.

    ``image_shape`` defaults to a square when ``dim`` is a perfect square,
    else ``(1, dim)``. Paths ending in ``.gz`` are gzipped.
    """
    if dataset.num_classes > 256:
        raise FormatError("IDX labels are single bytes")
    d = dataset.dim
    if image_shape is None:
        side = math.isqrt(d)
        image_shape = (side, side) if side * side == d else (1, d)
    if math.prod(image_shape) != d:
        raise FormatError(f"image shape {image_shape} does not hold {d} features")
    pixels = np.clip(np.rint(dataset.features * 255.0), 0, 255).astype(np.uint8)
    n = len(dataset)
    images = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, *image_shape) + pixels.tobytes()
    labels = struct.pack(">II", IDX_LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    for path, payload in ((images_path, images), (labels_path, labels)):
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "wb") as fh:
            fh.write(payload)


# -- partitioning ----------------------------------------------------------------


@dataclass(frozen=True)
class PartitionPlan:
    num_partitions: int
    iid_fraction: float = 1.0
    non_iid_alpha: float = 0.5
    assignment: str = "one-to-one"
    seed: int = 0
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.num_partitions < 1:
            raise ConfigurationError("num_partitions must be >= 1")
        if not 0.0 <= self.iid_fraction <= 1.0:
            raise ConfigurationError("iid_fraction must lie in [0, 1]")
        if not self.non_iid_alpha > 0:
            raise ConfigurationError("non_iid_alpha must be > 0")
        if self.assignment not in ASSIGNMENT_STRATEGIES:
            raise ConfigurationError(f"assignment must be one of {ASSIGNMENT_STRATEGIES}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigurationError("holdout_fraction must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class Partition:
    indices: np.ndarray
    holdout_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def size(self) -> int:
        return int(self.indices.size + self.holdout_indices.size)


def _split_holdout(indices, fraction, rng, number):
    n = indices.size
    holdout = max(1, math.floor(fraction * n)) if fraction > 0 else 0
    if n - holdout < 1:
        raise PartitionError(f"partition {number} would have no training samples ({n} samples total)")
    shuffled = rng.permutation(indices)
    return Partition(np.sort(shuffled[holdout:]), np.sort(shuffled[:holdout]))


def _dirichlet_take(buckets, size, alpha, rng):
    """Take ``size`` indices from class ``buckets`` following Dirichlet(alpha) proportions."""
    num_classes = len(buckets)
    props = rng.dirichlet(np.full(num_classes, alpha))
    available = np.array([len(b) for b in buckets])
    counts = np.minimum(rng.multinomial(size, props), available)
    short = size - int(counts.sum())
    while short > 0:
        room = available - counts
        weights = props * (room > 0)
        if weights.sum() <= 0:
            weights = room.astype(np.float64)
        extra = np.minimum(rng.multinomial(short, weights / weights.sum()), room)
        counts += extra
        short -= int(extra.sum())
    taken = []
    for c in range(num_classes):
        k = int(counts[c])
        taken.append(buckets[c][:k])
        buckets[c] = buckets[c][k:]
    return np.concatenate(taken) if taken else np.zeros(0, dtype=np.int64)


def partition(dataset: Dataset, plan: PartitionPlan) -> list[Partition]:
    """Split every row of ``dataset`` into ``plan.num_partitions`` disjoint partitions.

    The first ``floor(iid_fraction * P)`` partitions are uniform random splits of
    a proportional share of the rows. The rest draw per-partition class
    proportions from Dirichlet(``non_iid_alpha``) and fill from the remaining
    rows. Each partition then reserves ``holdout_fraction`` (at least one
    sample) as its local validation split.
    """
    n = len(dataset)
    p = plan.num_partitions
    if p > n:
        raise PartitionError(f"{p} partitions requested for only {n} samples")
    rng = np.random.default_rng(plan.seed)
    n_iid = math.floor(plan.iid_fraction * p)
    order = rng.permutation(n)
    iid_rows = round(n * n_iid / p)
    groups = [np.asarray(g, dtype=np.int64) for g in np.array_split(order[:iid_rows], n_iid)] if n_iid else []
    if p > n_iid:
        pool = order[iid_rows:]
        sizes = [len(s) for s in np.array_split(np.arange(pool.size), p - n_iid)]
        pool_labels = dataset.labels[pool]
        buckets = [pool[pool_labels == c] for c in range(dataset.num_classes)]
        for size in sizes:
            groups.append(_dirichlet_take(buckets, size, plan.non_iid_alpha, rng))
    out = []
    for number, g in enumerate(groups):
        if g.size == 0:
            raise PartitionError(f"partition {number} would be empty")
        out.append(_split_holdout(g, plan.holdout_fraction, rng, number))
    return out


def assign(partitions, node_ids, strategy: str, seed: int) -> dict:
    """Map every node id to a partition."""
    node_ids = list(node_ids)
    rng = np.random.default_rng(seed)
    if strategy == "one-to-one":
        if len(partitions) != len(node_ids):
            raise ConfigurationError(
                f"one-to-one assignment needs as many partitions ({len(partitions)}) as nodes ({len(node_ids)})"
            )
        perm = rng.permutation(len(partitions))
        return {node: partitions[int(k)] for node, k in zip(node_ids, perm)}
    if strategy == "random-with-replacement":
        if not partitions:
            raise ConfigurationError("no partitions to assign")
        picks = rng.integers(0, len(partitions), size=len(node_ids))
        return {node: partitions[int(k)] for node, k in zip(node_ids, picks)}
    raise ConfigurationError(f"unknown assignment strategy {strategy!r}")


def split_holdout_sets(dataset: Dataset, test_fraction: float, shared_fraction: float, seed: int):
    """Carve a test set and a shared validation set off ``dataset``.

    Returns ``(train_pool, shared, test)``; ``shared`` is ``None`` when
    ``shared_fraction`` is 0.
    """
    n = len(dataset)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_test = max(1, math.floor(test_fraction * n))
    n_shared = math.floor(shared_fraction * n)
    if n_shared == 0 and shared_fraction > 0:
        n_shared = 1
    if n - n_test - n_shared < 1:
        raise PartitionError("test and shared splits leave no training data")
    test = dataset.subset(np.sort(order[:n_test]), f"{dataset.name}-test")
    shared = dataset.subset(np.sort(order[n_test : n_test + n_shared]), f"{dataset.name}-shared") if n_shared else None
    pool = dataset.subset(np.sort(order[n_test + n_shared :]), f"{dataset.name}-train")
    return pool, shared, test


def label_histograms(dataset: Dataset, partitions) -> list[np.ndarray]:
    return [dataset.class_counts(np.concatenate([p.indices, p.holdout_indices])) for p in partitions]
