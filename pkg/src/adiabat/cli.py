"""Command line entry point: ``adiabat run|list-experiments|validate``."""
from __future__ import annotations

import argparse
import sys

from . import harness
from .errors import AdiabatError, ConfigError

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adiabat",
                                 description="Run adiabatic-perturbation validation experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config", help="path to the config file")
    run.add_argument("--out-dir", help="output directory (overrides [output] dir)")
    run.add_argument("--seed", type=int, help="sample seed (overrides [run] seed)")
    run.add_argument("--threads", type=int,
                     help="worker threads (default: $ADPT_THREADS or 1)")
    sub.add_parser("list-experiments", help="list registered experiments")
    val = sub.add_parser("validate", help="check a config file without running it")
    val.add_argument("config")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-experiments":
        for name in sorted(harness.REGISTRY):
            print(f"{name}\t(default model: {harness.REGISTRY[name][1]})")
        return EXIT_OK
    try:
        cfg = harness.load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok ({cfg.experiment}, model {cfg.model})")
            return EXIT_OK
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.validate()
        threads = harness.resolve_threads(args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        res, summ = harness.run(cfg, out_dir=args.out_dir, threads=threads)
    except AdiabatError as exc:
        print(f"{cfg.experiment}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    for c in res.checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status}  {c.name}: {c.value:.3e}")
    print(f"{cfg.experiment}: {'passed' if res.passed else 'failed'}")
    return EXIT_OK if res.passed else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
