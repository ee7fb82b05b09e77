"""Cloud -> edge -> client trees."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

PRESETS: dict[str, tuple[int, int, tuple[float, ...] | None]] = {
    "E1C1": (1, 1, None),
    "E2C5": (2, 5, None),
    "E20C50": (20, 50, None),
    "E2C50": (2, 50, None),
    "IMB_E5C50": (5, 50, (0.4, 0.2, 0.2, 0.1, 0.1)),
}


@dataclass(frozen=True)
class Topology:
    clients_per_edge: tuple[tuple[int, ...], ...]
    assignment_ratios: tuple[float, ...] | None = None
    name: str = "custom"

    @property
    def num_edges(self) -> int:
        return len(self.clients_per_edge)

    @property
    def num_clients(self) -> int:
        return sum(len(k) for k in self.clients_per_edge)

    @property
    def edge_sizes(self) -> list[int]:
        return [len(k) for k in self.clients_per_edge]

    def edge_of(self, client: int) -> int:
        for e, members in enumerate(self.clients_per_edge):
            if client in members:
                return e
        raise KeyError(client)


def largest_remainder(ratios, total: int) -> list[int]:
    quotas = np.asarray(ratios, dtype=np.float64) * total
    sizes = np.floor(quotas).astype(int)
    short = total - sizes.sum()
    # stable sort: ties go to earlier edges
    order = np.argsort(-(quotas - sizes), kind="stable")
    sizes[order[:short]] += 1
    return sizes.tolist()


def build_topology(preset: str | None = None, num_clients: int | None = None, num_edges: int | None = None,
                   ratios=None, seed: int = 0) -> Topology:
    """Assign clients to edges.

    ``preset`` may be a named preset or any ``E<edges>C<clients>`` string.
    Without ratios, clients are split equally with the remainder going to
    earlier edges. Client ids are shuffled by ``seed`` before assignment.
    """
    name = preset or "custom"
    if preset is not None:
        if preset in PRESETS:
            num_edges, num_clients, preset_ratios = PRESETS[preset]
            ratios = ratios if ratios is not None else preset_ratios
        else:
            match = re.fullmatch(r"E(\d+)C(\d+)", preset)
            if not match:
                raise ValueError(f"unknown topology preset {preset!r}")
            num_edges, num_clients = int(match[1]), int(match[2])
    if num_edges is None or num_clients is None:
        raise ValueError("need a preset or explicit edge and client counts")
    if not 1 <= num_edges <= num_clients:
        raise ValueError(f"need 1 <= edges ({num_edges}) <= clients ({num_clients})")
    if ratios is None:
        ratios = [1.0 / num_edges] * num_edges
    else:
        ratios = [float(r) for r in ratios]
        if len(ratios) != num_edges:
            raise ValueError(f"{len(ratios)} ratios for {num_edges} edges")
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios sum to {sum(ratios)}, not 1")
    sizes = largest_remainder(ratios, num_clients)
    if min(sizes) < 1:
        raise ValueError(f"ratios leave an edge without clients: {sizes}")
    ids = np.random.default_rng(seed).permutation(num_clients)
    groups, start = [], 0
    for n in sizes:
        groups.append(tuple(sorted(int(i) for i in ids[start:start + n])))
        start += n
    return Topology(tuple(groups), tuple(ratios), name)
