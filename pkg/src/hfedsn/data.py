"""Datasets: IDX ingestion, synthetic blobs, normalization and non-IID label partitioning."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetError(Exception):
    """Unreadable, malformed or unpartitionable data."""


@dataclass
class LabeledDataset:
    samples: np.ndarray  # (N, C, H, W) float64
    labels: np.ndarray  # (N,) int64
    num_classes: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 4:
            raise DatasetError(f"samples must be (N, C, H, W), got {self.samples.shape}")
        if len(self.samples) != len(self.labels):
            raise DatasetError("sample and label counts differ")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError(f"labels outside [0, {self.num_classes})")
        if not np.isfinite(self.samples).all():
            raise DatasetError("non-finite sample values")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.samples.shape[1:])

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.samples[idx], self.labels[idx], self.num_classes)


# --------------------------------------------------------------------------- IDX


def _read_bytes(path) -> bytes:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise DatasetError(f"{path}: truncated header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise DatasetError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DatasetError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise DatasetError(f"{path}: truncated payload ({len(raw) - header} of {size} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int | None = None) -> LabeledDataset:
    """Read an IDX image/label pair; pixels map to [-1, 1] via x/127.5 - 1."""
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if len(images) != len(labels):
        raise DatasetError(f"{len(images)} images but {len(labels)} labels")
    x = images.astype(np.float64)[:, None, :, :] / 127.5 - 1.0
    y = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(y.max()) + 1 if y.size else 1
    return LabeledDataset(x, y, num_classes)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (N, H, W) and labels (N,) in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(
        struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


# --------------------------------------------------------------------------- synthetic


def synthetic_blobs(num_classes: int, shape=(1, 4, 4), samples_per_class: int = 100,
                    spread: float = 0.2, seed: int = 0, spacing: float = 1.0) -> LabeledDataset:
    """Gaussian clusters, one per class.

    Centers sit on ``spacing`` times distinct basis vectors when the input has
    at least ``num_classes`` dimensions, otherwise they are drawn at random.
    """
    if spread <= 0:
        raise ValueError("spread must be positive")
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    shape = (1, 1, shape[0]) if len(shape) == 1 else shape
    dim = int(np.prod(shape))
    rng = np.random.default_rng(seed)
    if dim >= num_classes:
        centers = spacing * np.eye(num_classes, dim)
    else:
        centers = spacing * rng.normal(size=(num_classes, dim))
    y = np.repeat(np.arange(num_classes), samples_per_class)
    x = centers[y] + spread * rng.normal(size=(len(y), dim))
    return LabeledDataset(x.reshape(len(y), *shape), y, num_classes)


def normalize(dataset: LabeledDataset, scheme: str = "zscore_per_dim") -> LabeledDataset:
    x = dataset.samples
    if scheme == "minmax_pm1":
        lo, hi = x.min(), x.max()
        out = np.zeros_like(x) if hi == lo else 2.0 * (x - lo) / (hi - lo) - 1.0
    elif scheme == "zscore_per_dim":
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        out = x - mu
        ok = sd > 1e-12
        out = np.where(ok, out / np.where(ok, sd, 1.0), out)
    else:
        raise ValueError(f"unknown normalization scheme {scheme!r}")
    return LabeledDataset(out, dataset.labels, dataset.num_classes)


# --------------------------------------------------------------------------- partitioning


@dataclass
class PartitionPlan:
    client_labels: list[list[int]]
    train_indices: list[np.ndarray]
    test_indices: list[np.ndarray]

    @property
    def num_clients(self) -> int:
        return len(self.client_labels)


def assign_labels(num_clients: int, num_classes: int, n: int, rng: np.random.Generator,
                  max_tries: int = 100) -> list[list[int]]:
    if not 1 <= n <= num_classes:
        raise DatasetError(f"labels per client n={n} must be in [1, {num_classes}]")
    for _ in range(max_tries):
        labels = [sorted(int(v) for v in rng.choice(num_classes, n, replace=False))
                  for _ in range(num_clients)]
        owned = {c for ls in labels for c in ls}
        if len(owned) == num_classes:
            return labels
    raise DatasetError(f"could not give every label an owner in {max_tries} draws "
                       f"({num_clients} clients x {n} labels for {num_classes} classes)")


def _split_by_label(labels, client_labels, num_classes, rng):
    out = [[] for _ in client_labels]
    for c in range(num_classes):
        owners = [k for k, ls in enumerate(client_labels) if c in ls]
        idx = rng.permutation(np.flatnonzero(labels == c))
        for k, part in zip(owners, np.array_split(idx, len(owners))):
            out[k].append(part)
    return [np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=np.int64) for p in out]


def quantity_label_partition(train: LabeledDataset, num_clients: int, n: int, seed: int,
                             test: LabeledDataset | None = None) -> PartitionPlan:
    """Give each client ``n`` labels, then split each label's samples equally among its owners.

    The same label assignment governs train and test; the index draws differ.
    """
    if num_clients < 1:
        raise DatasetError("need at least one client")
    rng = np.random.default_rng([seed, 0])
    client_labels = assign_labels(num_clients, train.num_classes, n, rng)
    train_idx = _split_by_label(train.labels, client_labels, train.num_classes,
                                np.random.default_rng([seed, 1]))
    test_idx = []
    if test is not None:
        test_idx = _split_by_label(test.labels, client_labels, test.num_classes,
                                   np.random.default_rng([seed, 2]))
    return PartitionPlan(client_labels, train_idx, test_idx)


def train_test_split(dataset: LabeledDataset, test_fraction: float, seed: int):
    """Stratified split so every class appears in both halves."""
    rng = np.random.default_rng(seed)
    test = []
    for c in range(dataset.num_classes):
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        test.append(idx[:int(round(test_fraction * len(idx)))])
    test = np.sort(np.concatenate(test))
    train = np.setdiff1d(np.arange(len(dataset)), test)
    return dataset.subset(train), dataset.subset(test)
