"""Run every aggregator on the label-flip benchmark and print a comparison.

Usage: python scripts/compare_aggregators.py [--seed N]
"""

import argparse
import json
import pathlib
import sys

import numpy as np

from fedwatch import build_config, run

AGGREGATORS = {
    "fedavg": {},
    "trimmed_mean": {"trim_beta": 4},
    "krum": {"byzantine_f": 4},
    "multi_krum": {"byzantine_f": 4, "multi_krum_m": 12},
    "bulyan": {"byzantine_f": 4},
    "geomedian": {},
    "sigma_pid": {"sigma_k": 2.5},
}


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    base = json.loads(
        (pathlib.Path(__file__).resolve().parent.parent / "configs" / "default.json").read_text()
    )
    base["seed"] = args.seed

    print(f"{'aggregator':<14} {'final_acc':>9} {'final_loss':>10} {'mean_prec':>9} "
          f"{'mean_rec':>8} {'overhead':>9}")
    for name, params in AGGREGATORS.items():
        cfg = dict(base)
        cfg["aggregator"] = {"name": name, "params": params}
        result = run(build_config(cfg))
        ms = result.metrics
        print(
            f"{name:<14} {ms[-1].global_accuracy:>9.3f} {ms[-1].global_loss:>10.4f} "
            f"{np.mean([m.excl_precision for m in ms]):>9.3f} "
            f"{np.mean([m.excl_recall for m in ms]):>8.3f} "
            f"{sum(m.overhead for m in ms):>9.0f}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
