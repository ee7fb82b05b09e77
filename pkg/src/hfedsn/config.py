"""Run configuration and its JSON file form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .comm import CostModel

ALGORITHMS = ("hfedsn", "hierfavg", "topk")
ARCHS = ("conv4", "mlp")
REQUIRED = ("algorithm", "topology", "dataset", "arch", "rounds", "tau", "eta", "batch",
            "n_classes_per_client", "seed")
DATASET_KEYS = {
    "blobs": {"kind", "num_classes", "shape", "samples_per_class", "test_samples_per_class",
              "spread", "spacing", "seed"},
    "idx": {"kind", "train_images", "train_labels", "test_images", "test_labels", "num_classes",
            "limit_train", "limit_test"},
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class RunConfig:
    algorithm: str = "hfedsn"
    topology: Any = "E2C5"
    dataset: dict = field(default_factory=lambda: {"kind": "blobs"})
    arch: str = "mlp"
    rounds: int = 200
    tau: int = 20
    eta: float = 0.01
    batch: int = 128
    n_classes_per_client: int = 2
    seed: int = 0
    cost_model: dict = field(default_factory=dict)
    output_dir: str | None = None
    reset_period: int = 10
    reset_phase: int = 1
    eval: str = "every_round"
    deterministic_eval: bool = False
    ste: str = "identity"
    topk_fraction: float = 0.03125
    private_layers: int | None = None
    hidden: list = field(default_factory=lambda: [64, 64])

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if not isinstance(self.rounds, int) or self.rounds < 1:
            raise ConfigError("rounds must be an integer >= 1")
        if not isinstance(self.tau, int) or self.tau < 1:
            raise ConfigError("tau must be an integer >= 1")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if not isinstance(self.batch, int) or self.batch < 1:
            raise ConfigError("batch must be a positive integer")
        if self.eval not in ("every_round", "final"):
            raise ConfigError("eval must be 'every_round' or 'final'")
        if self.ste not in ("identity", "theta"):
            raise ConfigError("ste must be 'identity' or 'theta'")
        kind = self.dataset.get("kind") if isinstance(self.dataset, dict) else None
        if kind not in DATASET_KEYS:
            raise ConfigError(f"dataset.kind must be one of {sorted(DATASET_KEYS)}")
        extra = set(self.dataset) - DATASET_KEYS[kind]
        if extra:
            raise ConfigError(f"unknown dataset keys: {sorted(extra)}")
        if kind == "idx":
            missing = {"train_images", "train_labels", "test_images", "test_labels"} - set(self.dataset)
            if missing:
                raise ConfigError(f"missing dataset keys: {sorted(missing)}")
        try:
            self.cost = CostModel(**self.cost_model)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cost_model: {exc}") from exc

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = [k for k in REQUIRED if k not in raw]
        if missing:
            raise ConfigError(f"missing required config keys: {missing}")
        return cls(**raw)


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(raw)
