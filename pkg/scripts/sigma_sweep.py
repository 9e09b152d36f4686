"""Sweep the sigma filter's exclusion threshold on the label-flip benchmark.

Shows the strictness tradeoff: a tight threshold excludes benign clients,
a loose one lets attackers through.

Usage: python scripts/sigma_sweep.py [--seeds 1,2,3,4,5]
"""

import argparse
import json
import pathlib
import sys

import numpy as np

from fedwatch import build_config, run

K_VALUES = (1.0, 2.5, 5.0)


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", default="1,2,3,4,5")
    args = parser.parse_args()

    base = json.loads(
        (pathlib.Path(__file__).resolve().parent.parent / "configs" / "default.json").read_text()
    )
    seeds = [int(s) for s in args.seeds.split(",")]

    print(f"{'seed':>4} {'sigma_k':>7} {'benign_fp':>9} {'mean_recall':>11} {'final_acc':>9}")
    for seed in seeds:
        for k in K_VALUES:
            cfg = dict(base)
            cfg["seed"] = seed
            cfg["aggregator"] = {"name": "sigma_pid", "params": {"sigma_k": k}}
            result = run(build_config(cfg))
            ms = result.metrics
            print(
                f"{seed:>4} {k:>7.1f} {sum(m.fp for m in ms):>9d} "
                f"{np.mean([m.excl_recall for m in ms]):>11.3f} "
                f"{ms[-1].global_accuracy:>9.3f}"
            )
    return 0


if __name__ == "__main__":
    sys.exit(main())
