"""Client side of the mask-learning loop: local epochs, upload split, final model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .masknet import (
    ArchitectureSpec,
    LayerPartition,
    apply_mask,
    backward_score_grad,
    init_scores,
    logit,
    predict,
    sample_binary_mask,
    sgd_step,
    sigmoid,
)

# RNG stream tags (second entry of the seed sequence key)
TRAIN_STREAM = 1
EVAL_STREAM = 2
INIT_STREAM = 3


@dataclass
class ClientHyper:
    tau: int = 20
    eta: float = 0.01
    batch_size: int = 128
    ste: str = "identity"


@dataclass
class ClientState:
    client_id: int
    edge_id: int
    train: LabeledDataset
    test: LabeledDataset | None
    scores: np.ndarray
    private_theta: np.ndarray
    rng_seed: int
    hyper: ClientHyper = field(default_factory=ClientHyper)

    @classmethod
    def create(cls, client_id, edge_id, train, test, partition: LayerPartition, rng_seed: int,
               hyper: ClientHyper | None = None) -> "ClientState":
        if len(train) == 0:
            raise ValueError(f"client {client_id} has an empty local dataset")
        rng = np.random.default_rng([rng_seed, INIT_STREAM])
        scores = init_scores(partition.dim, rng)
        return cls(client_id, edge_id, train, test, scores,
                   sigmoid(scores[partition.private_idx]), rng_seed, hyper or ClientHyper())


@dataclass
class ClientRoundResult:
    shared_mask: np.ndarray
    epoch_losses: list[float]


def compose_probability_mask(theta_g, theta_p, partition: LayerPartition) -> np.ndarray:
    """Place shared values on the shared coordinates and private values on the rest."""
    theta_g = np.asarray(theta_g, dtype=np.float64)
    theta_p = np.asarray(theta_p, dtype=np.float64)
    if theta_g.shape != (partition.shared_dim,):
        raise ValueError(f"shared mask length {theta_g.shape} != {partition.shared_dim}")
    if theta_p.shape != (partition.private_dim,):
        raise ValueError(f"private mask length {theta_p.shape} != {partition.private_dim}")
    out = np.empty(partition.dim)
    out[partition.shared_idx] = theta_g
    out[partition.private_idx] = theta_p
    return out


def split_mask(values, partition: LayerPartition) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values)
    if values.shape != (partition.dim,):
        raise ValueError(f"mask length {values.shape} != {partition.dim}")
    return values[partition.shared_idx], values[partition.private_idx]


def _minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def client_round(state: ClientState, theta_g, t: int, arch: ArchitectureSpec,
                 w_init: np.ndarray, partition: LayerPartition) -> ClientRoundResult:
    """Run one round of local mask training and return the shared bits to upload.

    Mutates ``state.scores`` and ``state.private_theta``. The result depends
    only on the state, the broadcast mask, ``t`` and the client's seed.
    """
    if t < 1:
        raise ValueError("rounds are numbered from 1")
    if len(state.train) == 0:
        raise ValueError(f"client {state.client_id} has an empty local dataset")
    hp = state.hyper
    if t > 1:
        state.scores = logit(compose_probability_mask(theta_g, state.private_theta, partition))
    rng = np.random.default_rng([state.rng_seed, TRAIN_STREAM, t])
    x, y = state.train.samples, state.train.labels
    scores = state.scores
    losses = []
    for _ in range(hp.tau):
        total, count = 0.0, 0
        for idx in _minibatches(len(y), hp.batch_size, rng):
            theta = sigmoid(scores)
            m = sample_binary_mask(theta, rng)
            loss, grad = backward_score_grad(arch, w_init, scores, theta, m, x[idx], y[idx], ste=hp.ste)
            scores = sgd_step(scores, grad, hp.eta)
            total += loss * len(idx)
            count += len(idx)
        losses.append(total / count)
    state.scores = scores
    theta = sigmoid(scores)
    m = sample_binary_mask(theta, rng)
    shared, _ = split_mask(m, partition)
    state.private_theta = theta[partition.private_idx]
    return ClientRoundResult(shared, losses)


def final_mask(theta_g, state: ClientState, partition: LayerPartition, t: int = 0,
               deterministic: bool = False) -> np.ndarray:
    """Mask for evaluation: threshold at 0.5 or sample from a dedicated evaluation stream."""
    theta = compose_probability_mask(theta_g, state.private_theta, partition)
    if deterministic:
        return (theta > 0.5).astype(np.uint8)
    rng = np.random.default_rng([state.rng_seed, EVAL_STREAM, t])
    return sample_binary_mask(theta, rng)


def finalize_model(theta_g, state: ClientState, w_init: np.ndarray, partition: LayerPartition,
                   t: int = 0, deterministic: bool = False):
    """Return ``(masked_weights, mask)`` for the client's personalized final network."""
    m = final_mask(theta_g, state, partition, t, deterministic)
    return apply_mask(w_init, m), m


def evaluate(arch: ArchitectureSpec, params: np.ndarray, dataset: LabeledDataset) -> float:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(arch, params, dataset.samples) == dataset.labels))
