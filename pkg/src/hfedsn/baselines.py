"""Dense comparison algorithms: hierarchical FedAvg and top-k sparsified updates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .comm import topk_count
from .data import LabeledDataset
from .masknet import ArchitectureSpec, loss_and_param_grad


@dataclass
class DenseClientState:
    client_id: int
    edge_id: int
    train: LabeledDataset
    test: LabeledDataset | None
    weights: np.ndarray
    rng_seed: int
    tau: int = 20
    eta: float = 0.001
    batch_size: int = 128

    @property
    def num_samples(self) -> int:
        return len(self.train)


def local_sgd(state: DenseClientState, start: np.ndarray, arch: ArchitectureSpec, t: int):
    """Run ``tau`` epochs of minibatch SGD from ``start``; returns (weights, epoch losses)."""
    rng = np.random.default_rng([state.rng_seed, 1, t])
    w = np.array(start, dtype=np.float64)
    x, y = state.train.samples, state.train.labels
    losses = []
    for _ in range(state.tau):
        total = 0.0
        order = rng.permutation(len(y))
        for i in range(0, len(y), state.batch_size):
            idx = order[i:i + state.batch_size]
            loss, g = loss_and_param_grad(arch, w, x[idx], y[idx])
            w -= state.eta * g
            total += loss * len(idx)
        losses.append(total / len(y))
    state.weights = w
    return w, losses


def weighted_average(vectors, counts) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if vectors.ndim != 2 or len(vectors) != len(counts):
        raise ValueError("need one count per vector and equal-length vectors")
    if counts.sum() <= 0:
        raise ValueError("sample counts must sum to a positive number")
    return (counts[:, None] * vectors).sum(axis=0) / counts.sum()


def hierarchical_average(edge_groups) -> np.ndarray:
    """Two-tier sample-weighted mean.

    ``edge_groups`` is a list (one per edge) of ``(vectors, counts)``; each
    edge averages its clients, then the cloud averages edges weighted by
    their total sample counts.
    """
    edge_vecs, edge_counts = [], []
    for vecs, counts in edge_groups:
        edge_vecs.append(weighted_average(vecs, counts))
        edge_counts.append(float(np.sum(counts)))
    return weighted_average(edge_vecs, edge_counts)


def topk_sparsify(delta, fraction: float = 0.03125, k: int | None = None):
    """Keep the ``k`` largest-magnitude entries (ties to the lower index).

    Returns ``(indices, values)`` with indices ascending.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if k is None:
        k = topk_count(delta.size, fraction)
    # stable sort on -|x| keeps lower indices first among equal magnitudes
    order = np.argsort(-np.abs(delta), kind="stable")[:k]
    idx = np.sort(order)
    return idx, delta[idx]


def densify(indices, values, d: int) -> np.ndarray:
    out = np.zeros(d)
    out[np.asarray(indices, dtype=np.int64)] = values
    return out
