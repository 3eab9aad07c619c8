"""Command-line entry point: ``petzlab <experiment> --config <path> --out <dir> --seed <n>``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .experiments import EXPERIMENTS, ConfigError, run_experiment
from .lindblad import IntegrationError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _threads(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("PETZLAB_THREADS", "").strip()
    if not env:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"PETZLAB_THREADS must be a positive integer, got {env!r}") from None
    if n < 1:
        raise ConfigError(f"PETZLAB_THREADS must be a positive integer, got {env!r}")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="petzlab", description="Run a named Petz-recovery experiment.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="JSON config file ('-' for stdin)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $PETZLAB_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        threads = _threads(args.threads)
        if args.config == "-":
            text, source = sys.stdin.read(), "<stdin>"
        else:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {args.config!r}: {exc.strerror}") from None
            source = args.config
        manifest = run_experiment(args.experiment, text, args.out, args.seed, threads, source)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, np.linalg.LinAlgError, OverflowError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"{args.experiment}: wrote {len(manifest['files'])} files to {args.out} "
          f"(outputs sha256 {manifest['outputs_sha256'][:12]})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
