"""Command-line front door: run experiments, sweep parameters, list aggregators.

Exit codes: 0 success, 2 config/validation error, 3 runtime/numeric
failure, 4 I/O failure. Any failure prints one machine-parsable line to
stderr prefixed ``error:``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from .aggregators import AGGREGATOR_NAMES, AGGREGATOR_PARAMS
from .config import ConfigError, build_config
from .engine import EngineError, run, sweep, write_run_outputs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4


def _fail(code: int, message: str) -> int:
    print(f"error: {message}".replace("\n", " "), file=sys.stderr)
    return code


def _load_raw_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def cmd_run(args) -> int:
    try:
        raw = _load_raw_config(args.config)
    except OSError as e:
        return _fail(EXIT_IO, f"cannot read config: {e}")
    except json.JSONDecodeError as e:
        return _fail(EXIT_CONFIG, f"config: invalid JSON: {e}")
    if args.seed is not None:
        if not isinstance(raw, dict):
            return _fail(EXIT_CONFIG, "config: expected a JSON object")
        raw = dict(raw)
        raw["seed"] = args.seed
    try:
        config = build_config(raw)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    try:
        start = time.monotonic()
        result = run(config)
        elapsed = time.monotonic() - start
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    except (EngineError, FloatingPointError) as e:
        return _fail(EXIT_RUNTIME, str(e))
    try:
        write_run_outputs(args.out, config, result, elapsed)
        with open(os.path.join(args.out, "config.json"), "w") as fh:
            json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as e:
        return _fail(EXIT_IO, f"cannot write outputs: {e}")
    return EXIT_OK


def _parse_sweep_value(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def cmd_sweep(args) -> int:
    try:
        raw = _load_raw_config(args.config)
    except OSError as e:
        return _fail(EXIT_IO, f"cannot read config: {e}")
    except json.JSONDecodeError as e:
        return _fail(EXIT_CONFIG, f"config: invalid JSON: {e}")
    values = [_parse_sweep_value(v) for v in args.values.split(",") if v != ""]
    if not values:
        return _fail(EXIT_CONFIG, f"{args.param}: no sweep values given")
    try:
        config = build_config(raw)
        sweep(config, args.param, values, out_dir=args.out)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, str(e))
    except (EngineError, FloatingPointError) as e:
        return _fail(EXIT_RUNTIME, str(e))
    except OSError as e:
        return _fail(EXIT_IO, f"cannot write outputs: {e}")
    return EXIT_OK


def cmd_list_aggregators(_args) -> int:
    for name in AGGREGATOR_NAMES:
        params = AGGREGATOR_PARAMS[name]
        rendered = ",".join(
            f"{k}={repr(v) if isinstance(v, float) else v}" for k, v in params.items()
        )
        print(f"{name}\t{rendered}".rstrip())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedwatch",
        description="Deterministic federated-learning simulator with monitored, robust aggregation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("--config", required=True, help="path to the JSON config")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="re-run a config over values of one field")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--param", required=True, help="dotted path, e.g. aggregator.params.sigma_k")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--out", required=True)
    p_sweep.set_defaults(func=cmd_sweep)

    p_list = sub.add_parser("list-aggregators", help="print the aggregator roster")
    p_list.set_defaults(func=cmd_list_aggregators)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
