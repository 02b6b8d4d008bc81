"""``detangle <experiment> --config <path> [--out <dir>] [--workers N]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiments import WORKERS_ENV, resolve_workers
from .io import EXPERIMENTS, ConfigError, load_config, run

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="detangle", description=__doc__)
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output directory (default: config 'out' or results/<experiment>)")
    p.add_argument("--workers", type=int, help=f"worker processes; {WORKERS_ENV} overrides")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.experiment)
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        workers = resolve_workers(args.workers or cfg.workers)
    except (ConfigError, ValueError) as e:
        print(f"detangle: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        outcome = run(cfg, args.out, workers)
    except Exception as e:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"detangle: {args.experiment} failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{args.experiment}: wrote {outcome.out_dir} (hash {outcome.manifest['content_hash'][:12]})")
    for k, v in outcome.manifest.get("summary", {}).items():
        print(f"  {k}: {v}")
    return outcome.status


if __name__ == "__main__":
    sys.exit(main())
