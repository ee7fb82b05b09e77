"""Per-round communication (KB) for every architecture preset and topology, written as CSV."""

import argparse
import csv
import sys

from hfedsn.cli import ARCH_PRESETS, commcheck_rows

TOPOLOGIES = ("E1C1", "E2C5", "E2C50", "E20C50", "IMB_E5C50")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--output", help="CSV path (stdout if omitted)")
    ap.add_argument("--mode", choices=("paper", "physical"), default="paper")
    args = ap.parse_args(argv)

    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    writer = csv.writer(fh)
    writer.writerow(["arch", "topology", "d", "s", "hfedsn_kb", "hierfavg_kb", "topk_kb", "topk_index_kb", "ratio"])
    for arch in ARCH_PRESETS:
        for topo in TOPOLOGIES:
            r = commcheck_rows(arch, topo, args.mode)
            kb = r["kb"]
            writer.writerow([arch, topo, r["d"], r["s"], f"{kb['hfedsn']:.4f}", f"{kb['hierfavg']:.4f}",
                             f"{kb['topk']:.4f}", f"{kb['topk+index']:.4f}", f"{r['ratio']:.2f}"])
    if args.output:
        fh.close()


if __name__ == "__main__":
    main()
