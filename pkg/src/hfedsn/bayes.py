"""Cumulative Beta-Bernoulli aggregation of binary masks at edge and cloud tiers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masknet import sample_binary_mask


def reset_due(t: int, period: int = 10, phase: int = 1) -> bool:
    """True for rounds whose update starts from fresh priors (t = 11, 21, ... by default)."""
    return t > 1 and period > 0 and (t - phase) % period == 0


@dataclass
class BetaState:
    alpha: np.ndarray
    beta: np.ndarray
    lambda0: float = 1.0
    reset_period: int = 10
    reset_phase: int = 1
    owner: str = "cloud"

    @classmethod
    def fresh(cls, dim: int, lambda0: float = 1.0, **kw) -> "BetaState":
        return cls(np.full(dim, float(lambda0)), np.full(dim, float(lambda0)), lambda0, **kw)

    @property
    def dim(self) -> int:
        return int(self.alpha.size)

    def reset_priors(self) -> "BetaState":
        self.alpha = np.full(self.dim, float(self.lambda0))
        self.beta = np.full(self.dim, float(self.lambda0))
        return self

    def update(self, masks, t: int) -> None:
        """Apply the scheduled reset for round ``t``, then add ones to alpha and zeros to beta."""
        if len(masks) == 0:
            raise ValueError(f"{self.owner}: no masks to aggregate")
        stacked = np.asarray(masks)
        if stacked.ndim != 2 or stacked.shape[1] != self.dim:
            raise ValueError(f"{self.owner}: expected masks of length {self.dim}, got {stacked.shape}")
        if reset_due(t, self.reset_period, self.reset_phase):
            self.reset_priors()
        ones = stacked.sum(axis=0, dtype=np.int64)
        self.alpha = self.alpha + ones
        self.beta = self.beta + (len(stacked) - ones)


def reset_priors(state: BetaState) -> BetaState:
    return state.reset_priors()


def beta_mode(alpha, beta) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    denom = alpha + beta - 2.0
    if np.any(denom <= 0):
        raise ValueError("Beta mode undefined (alpha + beta <= 2): no observations since the last reset")
    return np.clip((alpha - 1.0) / denom, 0.0, 1.0)


def edge_aggregate(state: BetaState, masks, t: int, rng: np.random.Generator) -> np.ndarray:
    """Fold client masks into the edge posterior and emit a Bernoulli sample of its mode."""
    state.update(masks, t)
    return sample_binary_mask(beta_mode(state.alpha, state.beta), rng)


def cloud_aggregate(state: BetaState, masks, t: int) -> np.ndarray:
    """Fold edge masks into the global posterior and return its mode (the broadcast payload)."""
    state.update(masks, t)
    return beta_mode(state.alpha, state.beta)

