"""Command-line entry point: ``hfedsn run|commcheck|partition``.

Exit codes: 0 success, 1 runtime failure, 2 invalid config, 3 dataset error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .comm import CostModel, bits_to_kb, per_round_bits, topk_count
from .config import ConfigError, load_config
from .data import DatasetError
from .masknet import build_architecture, make_partition
from .orchestrator import load_datasets, make_plan, run_training, topology_from_config, write_outputs
from .topology import build_topology

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_DATASET = 0, 1, 2, 3

# name -> (input_shape, num_classes, mlp)
ARCH_PRESETS = {
    "conv4-mnist": ((1, 28, 28), 10, False),
    "conv4-widar": ((22, 20, 20), 9, False),
    "conv4-wisdm": ((1, 200, 6), 12, False),
    "mlp-blobs": ((1, 4, 4), 4, True),
}


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        train, test = load_datasets(cfg)
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    try:
        report = run_training(cfg, train=train, test=test)
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except ValueError as exc:
        # topology / partition problems surface here and are config faults
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"run failed: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME
    out_dir = args.output or cfg.output_dir or "results"
    paths = write_outputs(report, out_dir)
    print(f"mean final accuracy {report.mean_final_accuracy:.4f}; wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def commcheck_rows(arch_name: str, topology: str, mode: str = "paper", topk_fraction: float = 0.03125):
    if arch_name not in ARCH_PRESETS:
        raise ValueError(f"unknown arch {arch_name!r}; choose from {sorted(ARCH_PRESETS)}")
    shape, classes, mlp = ARCH_PRESETS[arch_name]
    arch = build_architecture(shape, classes, mlp=mlp)
    part = make_partition(arch)
    topo = build_topology(topology)
    d, s = part.dim, part.shared_dim
    rows = {}
    for alg, model in (("hfedsn", CostModel(mode=mode)), ("hierfavg", CostModel(mode=mode)),
                       ("topk", CostModel(mode=mode)), ("topk+index", CostModel(mode=mode, topk_index_bits=True))):
        rows[alg] = bits_to_kb(per_round_bits(alg.split("+")[0], d, s, topo.num_clients, topo.num_edges,
                                              model, topk_fraction))
    return {"d": d, "s": s, "k": topk_count(d, topk_fraction), "clients": topo.num_clients,
            "edges": topo.num_edges, "kb": rows, "ratio": rows["hierfavg"] / rows["hfedsn"],
            "param_ratio": 32 * d / s}


def cmd_commcheck(args) -> int:
    try:
        info = commcheck_rows(args.arch, args.topology, args.mode)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    print(f"arch={args.arch} topology={args.topology} mode={args.mode} "
          f"d={info['d']} s={info['s']} k={info['k']} clients={info['clients']} edges={info['edges']}")
    print(f"{'algorithm':<12}{'KB/round':>14}")
    for alg, kb in info["kb"].items():
        print(f"{alg:<12}{kb:>14.2f}")
    print(f"ratio hierfavg/hfedsn {info['ratio']:.2f}")
    print(f"ratio 32d/s {info['param_ratio']:.2f}")
    return EXIT_OK


def cmd_partition(args) -> int:
    try:
        cfg = load_config(args.config)
        topo = topology_from_config(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        train, test = load_datasets(cfg)
        plan = make_plan(cfg, train, test, topo.num_clients)
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    print(f"{'client':>6} {'edge':>4} {'labels':<24} {'train':>6} {'test':>6}")
    for e, members in enumerate(topo.clients_per_edge):
        for k in members:
            counts = np.bincount(train.labels[plan.train_indices[k]], minlength=train.num_classes)
            labels = ",".join(str(c) for c in plan.client_labels[k])
            print(f"{k:>6} {e:>4} {labels:<24} {len(plan.train_indices[k]):>6} {len(plan.test_indices[k]):>6}"
                  f"  per-label={counts[counts > 0].tolist()}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hfedsn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="train from a JSON config and write metrics")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="output directory (overrides output_dir)")
    p.set_defaults(fn=cmd_run)
    p = sub.add_parser("commcheck", help="per-round communication cost, no training")
    p.add_argument("--arch", required=True, choices=sorted(ARCH_PRESETS))
    p.add_argument("--topology", required=True)
    p.add_argument("--mode", default="paper", choices=["paper", "physical"])
    p.set_defaults(fn=cmd_commcheck)
    p = sub.add_parser("partition", help="dry-run the client data partition")
    p.add_argument("config")
    p.set_defaults(fn=cmd_partition)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
