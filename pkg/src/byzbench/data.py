"""Datasets, non-IID client partitions, clean shards, and IDX ingestion."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptySelection, FormatError, InfeasiblePartition

_MAX_PARTITION_ATTEMPTS = 10000


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix (n, d) with integer labels in [0, n_classes)."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise FormatError("features must be (n, d) and labels (n,)")
        if self.features.shape[0] != self.labels.shape[0]:
            raise FormatError(
                f"{self.features.shape[0]} samples but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise FormatError("labels outside [0, n_classes)")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def take(dataset: LabeledDataset, indices) -> LabeledDataset:
    idx = np.asarray(indices, dtype=np.int64)
    return LabeledDataset(dataset.features[idx], dataset.labels[idx], dataset.n_classes)


def synth_classification(
    n: int,
    dim: int,
    n_classes: int,
    class_separation: float,
    rng: np.random.Generator,
) -> LabeledDataset:
    """Gaussian-cluster classification data.

    Class centers are drawn at random and rescaled so the closest pair sits
    exactly class_separation apart; samples add unit-variance isotropic noise.
    Class counts are balanced within one sample. Sample order is shuffled.
    """
    if n < n_classes or n_classes < 1:
        raise InfeasiblePartition(f"cannot build {n_classes} classes from {n} samples")
    if n_classes == 1:
        centers = rng.standard_normal((1, dim))  # separation is moot for one class
    else:
        while True:
            centers = rng.standard_normal((n_classes, dim))
            deltas = centers[:, None, :] - centers[None, :, :]
            dist = np.linalg.norm(deltas, axis=2)
            closest = dist[np.triu_indices(n_classes, k=1)].min()
            if closest > 0.0:
                break
        centers *= class_separation / closest

    counts = np.full(n_classes, n // n_classes)
    counts[: n % n_classes] += 1
    labels = np.repeat(np.arange(n_classes), counts)
    features = centers[labels] + rng.standard_normal((n, dim))
    order = rng.permutation(n)
    return LabeledDataset(features[order], labels[order].astype(np.int64), n_classes)


def stratified_holdout(
    dataset: LabeledDataset, fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Split indices into (train, test), taking `fraction` of every class."""
    if not 0.0 < fraction < 1.0:
        raise InfeasiblePartition(f"holdout fraction {fraction} outside (0, 1)")
    test_parts = []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == c)
        k = int(fraction * idx.size + 0.5)
        test_parts.append(rng.permutation(idx)[:k])
    test_idx = np.sort(np.concatenate(test_parts))
    mask = np.ones(dataset.n, dtype=bool)
    mask[test_idx] = False
    return np.flatnonzero(mask), test_idx


@dataclass(frozen=True)
class CleanShard:
    """Clean data the server can lean on.

    Either a server-held shard of sample indices (kind "server") or a set of
    client ids known to be honest (kind "trusted"). Trusted clients are
    excluded from Byzantine selection; a server shard is excluded from the
    client partition and counts toward the weight denominator.
    """

    kind: str
    indices: np.ndarray | None = None
    clients: tuple[int, ...] | None = None

    @property
    def size(self) -> int:
        return 0 if self.indices is None else int(self.indices.size)


def carve_clean_shard(
    dataset: LabeledDataset,
    *,
    fraction: float | None = None,
    trusted: tuple[int, ...] | None = None,
    rng: np.random.Generator | None = None,
) -> CleanShard:
    """Pick the clean-data source: a stratified server shard or trusted clients.

    Exactly one of fraction/trusted must be given. A server shard samples
    round(fraction * count) indices per class, so its size is within one
    rounding per class of fraction * n. An empty carve raises EmptySelection.
    """
    if (fraction is None) == (trusted is None):
        raise EmptySelection("pass exactly one of fraction or trusted")
    if trusted is not None:
        if len(trusted) == 0:
            raise EmptySelection("trusted client set is empty")
        return CleanShard("trusted", clients=tuple(sorted(int(c) for c in trusted)))
    if not 0.0 < fraction < 1.0:
        raise EmptySelection(f"shard fraction {fraction} outside (0, 1)")
    parts = []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == c)
        k = int(fraction * idx.size + 0.5)
        if k:
            parts.append(rng.permutation(idx)[:k])
    if not parts:
        raise EmptySelection(f"fraction {fraction} rounds to an empty shard")
    return CleanShard("server", indices=np.sort(np.concatenate(parts)))


@dataclass(frozen=True)
class ClientPartition:
    client_id: int
    indices: np.ndarray
    weight: float

    @property
    def size(self) -> int:
        return int(self.indices.size)


def dirichlet_partition(
    dataset: LabeledDataset,
    n_clients: int,
    beta: float,
    min_size: int,
    rng: np.random.Generator,
    exclude: np.ndarray | None = None,
) -> list[ClientPartition]:
    """Non-IID split: per class, client shares follow Dirichlet(beta * 1_M).

    Small beta concentrates each class on few clients; large beta approaches
    uniform. Indices in `exclude` (e.g. a server shard) never reach a client.
    Whole partitions are redrawn until every client holds at least min_size
    samples; weights are the exact size ratios S_m / sum(S).
    """
    if n_clients < 1 or beta <= 0.0 or min_size < 0:
        raise InfeasiblePartition("need n_clients >= 1, beta > 0, min_size >= 0")
    mask = np.ones(dataset.n, dtype=bool)
    if exclude is not None:
        mask[np.asarray(exclude, dtype=np.int64)] = False
    pool = np.flatnonzero(mask)
    if min_size * n_clients > pool.size:
        raise InfeasiblePartition(
            f"{n_clients} clients x min_size {min_size} exceeds {pool.size} samples"
        )
    class_pools = []
    for c in range(dataset.n_classes):
        idx = pool[dataset.labels[pool] == c]
        if idx.size == 0:
            raise InfeasiblePartition(f"class {c} has no samples to partition")
        class_pools.append(idx)

    for _ in range(_MAX_PARTITION_ATTEMPTS):
        shards: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
        for idx in class_pools:
            shuffled = rng.permutation(idx)
            proportions = rng.dirichlet(np.full(n_clients, beta))
            cuts = (np.cumsum(proportions) * idx.size).astype(np.int64)[:-1]
            for m, piece in enumerate(np.split(shuffled, cuts)):
                shards[m].append(piece)
        sizes = np.array([sum(p.size for p in pieces) for pieces in shards])
        if np.all(sizes >= min_size):
            total = int(sizes.sum())
            return [
                ClientPartition(m, np.sort(np.concatenate(shards[m])), sizes[m] / total)
                for m in range(n_clients)
            ]
    raise InfeasiblePartition(
        f"no partition with min_size {min_size} found in {_MAX_PARTITION_ATTEMPTS} draws"
    )


_IMAGES_MAGIC = 0x00000803
_LABELS_MAGIC = 0x00000801


def _read_exact(buf: bytes, offset: int, count: int, path: Path) -> bytes:
    if offset + count > len(buf):
        raise FormatError(f"{path}: truncated, wanted {offset + count} bytes, have {len(buf)}")
    return buf[offset : offset + count]


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Load an IDX image/label file pair (big-endian, MNIST-style layout).

    Pixels are scaled to [0, 1] floats and flattened row-major; labels stay
    integers. Bad magic numbers, mismatched counts, or truncated payloads
    raise FormatError.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    img_buf = images_path.read_bytes()
    magic, n_images, rows, cols = struct.unpack(">IIII", _read_exact(img_buf, 0, 16, images_path))
    if magic != _IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad image magic 0x{magic:08x}")
    pixels = np.frombuffer(
        _read_exact(img_buf, 16, n_images * rows * cols, images_path), dtype=np.uint8
    )

    lbl_buf = labels_path.read_bytes()
    magic, n_labels = struct.unpack(">II", _read_exact(lbl_buf, 0, 8, labels_path))
    if magic != _LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad label magic 0x{magic:08x}")
    if n_labels != n_images:
        raise FormatError(f"{labels_path}: {n_labels} labels for {n_images} images")
    labels = np.frombuffer(_read_exact(lbl_buf, 8, n_labels, labels_path), dtype=np.uint8)

    features = pixels.astype(np.float64).reshape(n_images, rows * cols) / 255.0
    n_classes = int(labels.max()) + 1 if labels.size else 0
    return LabeledDataset(features, labels.astype(np.int64), n_classes)
