"""Bit-exact accounting of every transmission in a run."""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

MASK_KINDS = ("shared_mask", "edge_mask")
KINDS = ("shared_mask", "edge_mask", "global_theta", "dense_weights", "topk_update")


@dataclass(frozen=True)
class CostModel:
    """Per-element pricing.

    ``mode="paper"`` counts one copy of the cloud broadcast per round at the
    mask rate. ``mode="physical"`` prices the broadcast probability vector
    at full precision and delivers one copy per client.
    """

    bits_per_mask_element: int = 1
    bits_per_weight: int = 32
    mode: str = "paper"
    topk_index_bits: bool = False

    def __post_init__(self):
        if self.mode not in ("paper", "physical"):
            raise ValueError(f"unknown accounting mode {self.mode!r}")
        for rate in (self.bits_per_mask_element, self.bits_per_weight):
            if int(rate) != rate or rate <= 0:
                raise ValueError("rates must be positive integers")


def index_bits(d: int) -> int:
    return max(1, math.ceil(math.log2(d))) if d > 1 else 1


def payload_bits(kind: str, element_count: int, model: CostModel = CostModel(), d: int | None = None) -> int:
    """Bits for one payload. ``d`` (model dimension) is needed only for top-k index bits."""
    if element_count < 0:
        raise ValueError("element count must be non-negative")
    if kind in MASK_KINDS:
        return element_count * model.bits_per_mask_element
    if kind == "global_theta":
        rate = model.bits_per_mask_element if model.mode == "paper" else model.bits_per_weight
        return element_count * rate
    if kind == "dense_weights":
        return element_count * model.bits_per_weight
    if kind == "topk_update":
        bits = element_count * model.bits_per_weight
        if model.topk_index_bits:
            if d is None:
                raise ValueError("top-k index accounting needs the model dimension d")
            bits += element_count * index_bits(d)
        return bits
    raise ValueError(f"unknown payload kind {kind!r}")


@dataclass(frozen=True)
class LinkRecord:
    round: int
    src: str
    dst: str
    kind: str
    elements: int
    bits: int

    @property
    def direction(self) -> str:
        if self.src.startswith("client"):
            return "client_to_edge"
        if self.src.startswith("edge"):
            return "edge_to_cloud"
        return "downlink"


def bits_to_kb(bits: int) -> float:
    """Kilobytes of 1024 bytes."""
    return bits / 8 / 1024


@dataclass
class CommMeter:
    model: CostModel = field(default_factory=CostModel)
    records: list[LinkRecord] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, t: int, src: str, dst: str, kind: str, elements: int, d: int | None = None) -> LinkRecord:
        rec = LinkRecord(t, src, dst, kind, int(elements), payload_bits(kind, int(elements), self.model, d))
        with self._lock:
            self.records.append(rec)
        return rec

    def for_round(self, t: int) -> list[LinkRecord]:
        return [r for r in self.records if r.round == t]

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "src", "dst", "kind", "elements", "bits"])
            for r in self.records:
                w.writerow([r.round, r.src, r.dst, r.kind, r.elements, r.bits])


def round_total(records) -> dict[str, float]:
    """Per-direction and grand totals in KB."""
    out = {"client_to_edge": 0, "edge_to_cloud": 0, "downlink": 0}
    for r in records:
        out[r.direction] += r.bits
    kb = {k: bits_to_kb(v) for k, v in out.items()}
    kb["total"] = bits_to_kb(sum(out.values()))
    kb["total_bits"] = sum(out.values())
    return kb


def topk_count(d: int, fraction: float) -> int:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    # guard against float noise such as 0.03125 * 32 = 1.0000000000000002
    return min(d, math.ceil(round(fraction * d, 9)))


def per_round_bits(algorithm: str, d: int, s: int, num_clients: int, num_edges: int,
                   model: CostModel = CostModel(), topk_fraction: float = 0.03125) -> int:
    """Closed-form bits per round for one algorithm, matching what the simulator records."""
    ups = num_clients + num_edges
    downs = 1 if model.mode == "paper" else num_clients
    if algorithm == "hfedsn":
        return (num_clients * payload_bits("shared_mask", s, model)
                + num_edges * payload_bits("edge_mask", s, model)
                + downs * payload_bits("global_theta", s, model))
    if algorithm == "hierfavg":
        return (ups + downs) * payload_bits("dense_weights", d, model)
    if algorithm == "topk":
        k = topk_count(d, topk_fraction)
        return (ups + downs) * payload_bits("topk_update", k, model, d)
    raise ValueError(f"unknown algorithm {algorithm!r}")

