"""Synchronous client -> edge -> cloud training loop for all algorithms."""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import DenseClientState, densify, local_sgd, topk_sparsify, weighted_average
from .bayes import BetaState, cloud_aggregate, edge_aggregate
from .client import ClientHyper, ClientState, client_round, evaluate, finalize_model
from .comm import CommMeter, bits_to_kb, per_round_bits, round_total, topk_count
from .config import RunConfig
from .data import LabeledDataset, PartitionPlan, load_idx, quantity_label_partition, synthetic_blobs, train_test_split
from .masknet import ArchitectureSpec, build_architecture, init_frozen_weights, make_partition
from .topology import Topology, build_topology

log = logging.getLogger(__name__)

WORKERS_ENV = "HFEDSN_WORKERS"

# seed-sequence tags keep the random streams of different roles apart
_CLIENT_SEED, _EDGE_SEED, _WEIGHT_SEED, _TOPO_SEED, _PART_SEED = 100, 200, 300, 400, 500


def derive_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


@dataclass
class RoundReport:
    round: int
    losses: dict[int, float]
    accuracies: dict[int, float | None]
    records: list
    totals: dict[str, float]
    uploads: dict[int, np.ndarray] = field(default_factory=dict, repr=False)


@dataclass
class TrainingReport:
    config: RunConfig
    rounds: list[RoundReport]
    final_accuracies: dict[int, float]
    majority_baselines: dict[int, float]
    meter: CommMeter
    d: int
    s: int
    topology: Topology

    @property
    def mean_final_accuracy(self) -> float:
        return float(np.mean(list(self.final_accuracies.values())))


def load_datasets(cfg: RunConfig) -> tuple[LabeledDataset, LabeledDataset]:
    spec = dict(cfg.dataset)
    kind = spec.pop("kind")
    if kind == "blobs":
        per_class = int(spec.get("samples_per_class", 100))
        test_per_class = int(spec.get("test_samples_per_class", per_class // 4 or 1))
        full = synthetic_blobs(
            num_classes=int(spec.get("num_classes", 4)),
            shape=spec.get("shape", [1, 4, 4]),
            samples_per_class=per_class + test_per_class,
            spread=float(spec.get("spread", 0.2)),
            seed=int(spec.get("seed", cfg.seed)),
            spacing=float(spec.get("spacing", 1.0)),
        )
        return train_test_split(full, test_per_class / (per_class + test_per_class), cfg.seed)
    train = load_idx(spec["train_images"], spec["train_labels"], spec.get("num_classes"))
    test = load_idx(spec["test_images"], spec["test_labels"], train.num_classes)
    rng = np.random.default_rng(cfg.seed)
    if spec.get("limit_train"):
        train = train.subset(np.sort(rng.permutation(len(train))[:int(spec["limit_train"])]))
    if spec.get("limit_test"):
        test = test.subset(np.sort(rng.permutation(len(test))[:int(spec["limit_test"])]))
    return train, test


def topology_from_config(cfg: RunConfig) -> Topology:
    seed = derive_seed(cfg.seed, _TOPO_SEED)
    if isinstance(cfg.topology, str):
        return build_topology(cfg.topology, seed=seed)
    if isinstance(cfg.topology, dict):
        t = cfg.topology
        return build_topology(num_edges=t.get("edges"), num_clients=t.get("clients"),
                              ratios=t.get("ratios"), seed=seed)
    raise ValueError("topology must be a preset name or {edges, clients, ratios}")


def make_plan(cfg: RunConfig, train, test, num_clients: int) -> PartitionPlan:
    return quantity_label_partition(train, num_clients, cfg.n_classes_per_client,
                                    derive_seed(cfg.seed, _PART_SEED), test=test)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _pmap(fn, items, workers):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _majority(ds: LabeledDataset) -> float:
    return float(np.bincount(ds.labels, minlength=ds.num_classes).max() / len(ds)) if len(ds) else 0.0


class Simulation:
    """Owns every piece of mutable run state between barrier steps."""

    def __init__(self, cfg: RunConfig, train: LabeledDataset | None = None,
                 test: LabeledDataset | None = None, topology: Topology | None = None,
                 arch: ArchitectureSpec | None = None):
        self.cfg = cfg
        if train is None:
            train, test = load_datasets(cfg)
        self.topology = topology or topology_from_config(cfg)
        self.arch = arch or build_architecture(train.input_shape, train.num_classes,
                                               mlp=cfg.arch == "mlp", hidden=cfg.hidden)
        self.partition = make_partition(self.arch, n_private_last=cfg.private_layers)
        self.d, self.s = self.partition.dim, self.partition.shared_dim
        self.w_init = init_frozen_weights(self.arch, derive_seed(cfg.seed, _WEIGHT_SEED))
        self.meter = CommMeter(cfg.cost)
        self.workers = _workers()
        n = self.topology.num_clients
        self.plan: PartitionPlan = make_plan(cfg, train, test, n)
        self.client_data = []
        for k in range(n):
            tr = train.subset(self.plan.train_indices[k])
            te = test.subset(self.plan.test_indices[k]) if test is not None else None
            if len(tr) == 0:
                raise ValueError(f"client {k} received no training samples")
            self.client_data.append((tr, te))
        self.edge_of = {k: e for e, ks in enumerate(self.topology.clients_per_edge) for k in ks}
        self.t = 0
        if cfg.algorithm == "hfedsn":
            self._init_hfedsn()
        else:
            self._init_dense()

    # ------------------------------------------------------------------ setup

    def _init_hfedsn(self):
        cfg = self.cfg
        hyper = ClientHyper(cfg.tau, cfg.eta, cfg.batch, cfg.ste)
        self.clients = [
            ClientState.create(k, self.edge_of[k], tr, te, self.partition,
                               derive_seed(cfg.seed, _CLIENT_SEED, k), hyper)
            for k, (tr, te) in enumerate(self.client_data)
        ]
        kw = dict(reset_period=cfg.reset_period, reset_phase=cfg.reset_phase)
        self.edge_states = [BetaState.fresh(self.s, owner=f"edge{e}", **kw)
                            for e in range(self.topology.num_edges)]
        self.cloud_state = BetaState.fresh(self.s, owner="cloud", **kw)
        self.theta_g: np.ndarray | None = None

    def _init_dense(self):
        cfg = self.cfg
        self.global_weights = np.array(self.w_init)
        self.clients = [
            DenseClientState(k, self.edge_of[k], tr, te, self.global_weights.copy(),
                             derive_seed(cfg.seed, _CLIENT_SEED, k), cfg.tau, cfg.eta, cfg.batch)
            for k, (tr, te) in enumerate(self.client_data)
        ]

    # ------------------------------------------------------------------ rounds

    def run_round(self, t: int | None = None) -> RoundReport:
        t = self.t + 1 if t is None else t
        if t != self.t + 1:
            raise ValueError(f"round {t} requested after round {self.t}")
        n_before = len(self.meter.records)
        if self.cfg.algorithm == "hfedsn":
            losses, uploads = self._hfedsn_round(t)
        else:
            losses, uploads = self._dense_round(t)
        self.t = t
        accs: dict[int, float | None] = {k: None for k in range(len(self.clients))}
        if self.cfg.eval == "every_round" or t == self.cfg.rounds:
            accs = self.evaluate_all(t)
        records = self.meter.records[n_before:]
        return RoundReport(t, losses, accs, records, round_total(records), uploads)

    def _hfedsn_round(self, t):
        theta_g = self.theta_g if t > 1 else None

        def work(state):
            return client_round(state, theta_g, t, self.arch, self.w_init, self.partition)

        results = _pmap(work, self.clients, self.workers)
        uploads = {}
        for state, res in zip(self.clients, results):
            uploads[state.client_id] = res.shared_mask
            self.meter.record(t, f"client{state.client_id}", f"edge{state.edge_id}",
                              "shared_mask", res.shared_mask.size)
        # barrier: every edge aggregates only after all its clients reported
        edge_masks = []
        for e, members in enumerate(self.topology.clients_per_edge):
            rng = np.random.default_rng([self.cfg.seed, _EDGE_SEED, e, t])
            m_e = edge_aggregate(self.edge_states[e], [uploads[k] for k in members], t, rng)
            self.meter.record(t, f"edge{e}", "cloud", "edge_mask", m_e.size)
            edge_masks.append(m_e)
        self.theta_g = cloud_aggregate(self.cloud_state, edge_masks, t)
        self._broadcast(t, "global_theta", self.s)
        self.last_epoch_losses = {s.client_id: r.epoch_losses for s, r in zip(self.clients, results)}
        losses = {s.client_id: r.epoch_losses[-1] if r.epoch_losses else float("nan")
                  for s, r in zip(self.clients, results)}
        return losses, uploads

    def _broadcast(self, t, kind, elements):
        if self.meter.model.mode == "paper":
            self.meter.record(t, "cloud", "all", kind, elements, self.d)
        else:
            for c in self.clients:
                self.meter.record(t, "cloud", f"client{c.client_id}", kind, elements, self.d)

    def _dense_round(self, t):
        start = self.global_weights

        def work(state):
            return local_sgd(state, start, self.arch, t)

        results = _pmap(work, self.clients, self.workers)
        counts = {c.client_id: c.num_samples for c in self.clients}
        self.last_epoch_losses = {c.client_id: r[1] for c, r in zip(self.clients, results)}
        losses = {c.client_id: r[1][-1] for c, r in zip(self.clients, results)}
        d = self.d
        if self.cfg.algorithm == "hierfavg":
            client_w = {c.client_id: r[0] for c, r in zip(self.clients, results)}
            for c in self.clients:
                self.meter.record(t, f"client{c.client_id}", f"edge{c.edge_id}", "dense_weights", d)
            edge_w, edge_n = [], []
            for e, members in enumerate(self.topology.clients_per_edge):
                edge_w.append(weighted_average([client_w[k] for k in members], [counts[k] for k in members]))
                edge_n.append(sum(counts[k] for k in members))
                self.meter.record(t, f"edge{e}", "cloud", "dense_weights", d)
            self.global_weights = weighted_average(edge_w, edge_n)
            self._broadcast(t, "dense_weights", d)
            return losses, client_w
        k_top = topk_count(d, self.cfg.topk_fraction)
        uploads = {}
        for c, (w, _) in zip(self.clients, results):
            idx, vals = topk_sparsify(w - start, k=k_top)
            uploads[c.client_id] = densify(idx, vals, d)
            self.meter.record(t, f"client{c.client_id}", f"edge{c.edge_id}", "topk_update", k_top, d)
        edge_d, edge_n = [], []
        for e, members in enumerate(self.topology.clients_per_edge):
            avg = weighted_average([uploads[k] for k in members], [counts[k] for k in members])
            idx, vals = topk_sparsify(avg, k=k_top)
            edge_d.append(densify(idx, vals, d))
            edge_n.append(sum(counts[k] for k in members))
            self.meter.record(t, f"edge{e}", "cloud", "topk_update", k_top, d)
        idx, vals = topk_sparsify(weighted_average(edge_d, edge_n), k=k_top)
        self.global_weights = start + densify(idx, vals, d)
        self._broadcast(t, "topk_update", k_top)
        return losses, uploads

    # ------------------------------------------------------------------ evaluation

    def client_model(self, k: int, t: int) -> np.ndarray:
        if self.cfg.algorithm == "hfedsn":
            w, _ = finalize_model(self.theta_g, self.clients[k], self.w_init, self.partition, t,
                                  self.cfg.deterministic_eval)
            return w
        return self.global_weights

    def evaluate_all(self, t: int) -> dict[int, float]:
        out = {}
        for k, (_, te) in enumerate(self.client_data):
            out[k] = evaluate(self.arch, self.client_model(k, t), te) if te is not None and len(te) else float("nan")
        return out


def run_training(cfg: RunConfig, **kw) -> TrainingReport:
    sim = Simulation(cfg, **kw)
    reports = []
    for t in range(1, cfg.rounds + 1):
        rep = sim.run_round(t)
        log.info("round %d: mean loss %.4f, %.2f KB", t, np.mean(list(rep.losses.values())),
                 rep.totals["total"])
        reports.append(rep)
    final = sim.evaluate_all(cfg.rounds + 1)
    majority = {k: _majority(te) if te is not None else float("nan") for k, (_, te) in enumerate(sim.client_data)}
    return TrainingReport(cfg, reports, final, majority, sim.meter, sim.d, sim.s, sim.topology)


# ---------------------------------------------------------------------- output files


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.6f}"


def metrics_csv(report: TrainingReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "client", "loss", "accuracy"])
    for rep in report.rounds:
        for k in sorted(rep.losses):
            w.writerow([rep.round, k, _fmt(rep.losses[k]), _fmt(rep.accuracies.get(k))])
    return buf.getvalue()


def _json(obj, indent=0) -> str:
    """JSON text with every float written at exactly six decimals."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{inner}"{k}": {_json(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_json(v, indent + 1) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None:
        return {True: "true", False: "false", None: "null"}[obj]
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return "null" if np.isnan(obj) else f"{float(obj):.6f}"
    return '"' + str(obj).replace("\\", "\\\\").replace('"', '\\"') + '"'


def summary(report: TrainingReport) -> dict:
    topo, cost = report.topology, report.config.cost
    per_round = {}
    for alg in ("hfedsn", "hierfavg", "topk"):
        per_round[alg] = bits_to_kb(per_round_bits(alg, report.d, report.s, topo.num_clients,
                                                   topo.num_edges, cost, report.config.topk_fraction))
    run_kb = round_total(report.meter.records)["total"]
    dense_kb = per_round["hierfavg"] * report.config.rounds
    return {
        "algorithm": report.config.algorithm,
        "topology": topo.name,
        "edge_sizes": topo.edge_sizes,
        "rounds": report.config.rounds,
        "d": report.d,
        "s": report.s,
        "accounting": cost.mode,
        "final_accuracy": {str(k): v for k, v in sorted(report.final_accuracies.items())},
        "majority_baseline": {str(k): v for k, v in sorted(report.majority_baselines.items())},
        "mean_final_accuracy": report.mean_final_accuracy,
        "total_kb": run_kb,
        "per_round_kb": per_round,
        "ratio_vs_dense": dense_kb / run_kb if run_kb else None,
    }


def write_outputs(report: TrainingReport, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": out / "metrics.csv", "comm": out / "comm.csv", "summary": out / "summary.json"}
    paths["metrics"].write_text(metrics_csv(report))
    report.meter.write_csv(paths["comm"])
    paths["summary"].write_text(_json(summary(report)) + "\n")
    return paths
