"""Command-line entry point: ``ionqed <command> --config run.toml``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings

from .errors import ChainInstabilityError, ConfigError, ConvergenceError, IntegrationError, ResonanceError
from .runner import COMMANDS, load_config, run_command

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("ionqed")


def build_parser():
    p = argparse.ArgumentParser(prog="ionqed", description="Trapped-ion cavity-QED simulator.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="TOML (or JSON) run configuration")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--no-cache", action="store_true", help="neither read nor write cached stages")
    p.add_argument("--threads", type=int, default=1, help="max concurrent grid tasks")
    p.add_argument("--verbose", "-v", action="count", default=0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed", "must be non-negative")
            cfg.data["seed"] = args.seed
        if args.threads < 1:
            raise ConfigError("--threads", "must be at least 1")
        record = run_command(cfg, args.command, out_dir=args.out, use_cache=not args.no_cache, threads=args.threads)
    except (ConfigError, ResonanceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, IntegrationError, ChainInstabilityError, MemoryError) as exc:
        stage = getattr(exc, "stage", "?")
        print(f"numerical failure in stage {stage}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    log.info("wrote %s", ", ".join(record.files))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
