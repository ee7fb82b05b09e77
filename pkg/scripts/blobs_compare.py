"""Train the mask method and both dense baselines on the blobs config and compare accuracy and traffic."""

import argparse
import dataclasses

from hfedsn.config import load_config
from hfedsn.orchestrator import run_training, summary, write_outputs

# dense baselines train raw weights, so they need an ordinary step size
DENSE_ETA = 0.05


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", nargs="?", default="configs/blobs_e2c5.json")
    ap.add_argument("-o", "--output", default="results/compare")
    ap.add_argument("--dense-eta", type=float, default=DENSE_ETA)
    args = ap.parse_args(argv)

    base = load_config(args.config)
    print(f"{'algorithm':<10} {'mean_acc':>9} {'total_kb':>12}")
    for alg in ("hfedsn", "hierfavg", "topk"):
        eta = base.eta if alg == "hfedsn" else args.dense_eta
        cfg = dataclasses.replace(base, algorithm=alg, eta=eta)
        report = run_training(cfg)
        write_outputs(report, f"{args.output}/{alg}")
        s = summary(report)
        print(f"{alg:<10} {report.mean_final_accuracy:>9.4f} {s['total_kb']:>12.2f}")


if __name__ == "__main__":
    main()
