"""Run one experiment config and print a mean +- std summary per setting.

    python scripts/run_grid.py configs/line_shooter.toml --out results/line_shooter.csv
"""
import argparse
import csv
import logging
from collections import defaultdict
from pathlib import Path

import numpy as np

from semtransfer import experiment as ex


def summarize(csv_path) -> list[str]:
    groups = defaultdict(list)
    with open(csv_path) as fh:
        for row in csv.DictReader(fh):
            key = (row["method"], row["budget"], row["alpha_ann"], row["alpha_tr"])
            groups[key].append((float(row["pp_mean"]), float(row["md"])))
    lines = [f"{'method':<11} {'budget':>6} {'a_ann':>6} {'a_tr':>6} {'PP':>16} {'MD':>20}"]
    for (m, b, aa, at), vals in groups.items():
        v = np.array(vals)
        lines.append(f"{m:<11} {b:>6} {aa:>6} {at:>6} "
                     f"{v[:, 0].mean():7.2f} +- {v[:, 0].std():5.2f} "
                     f"{v[:, 1].mean():9.5f} +- {v[:, 1].std():7.5f}")
    return lines


def main():
    p = argparse.ArgumentParser()
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = ex.with_overrides(ex.load_config(args.config), seed=args.seed)
    res = ex.run_experiment(cfg, jobs=args.jobs)
    ex.write_outputs(res, cfg, args.out)
    print("\n".join(summarize(args.out)))
    for r in res.references:
        print(f"trial {r['trial']}: PP oracle {r['pp_oracle']:.2f}, behavior {r['pp_behavior']:.2f}")
    if not res.ok:
        raise SystemExit(f"{len(res.failures)} cells failed")


if __name__ == "__main__":
    main()
