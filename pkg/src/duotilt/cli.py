"""Command-line entry point.

Precedence for every setting: command-line flag > environment variable >
config file value.  Environment variables: DUOTILT_CONFIG, DUOTILT_PRESET,
DUOTILT_SEED, DUOTILT_WORKERS, DUOTILT_SAMPLES, DUOTILT_OUTPUT.

Exit codes: 0 success, 1 runtime/validation failure, 2 usage errors.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import DuotiltError
from .harness import preset_config, run_experiment
from .presets import PRESETS

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duotilt",
        description="Rare-event simulation experiments via duo-exponential tilting",
    )
    parser.add_argument("--config", help="experiment TOML file")
    parser.add_argument("--preset", help=f"named preset ({', '.join(sorted(PRESETS))})")
    parser.add_argument("--seed", type=int, help="master seed (default 0)")
    parser.add_argument("--workers", type=int, help="worker processes (default: machine parallelism)")
    parser.add_argument("--samples", type=int, help="override sample size")
    parser.add_argument("--output", help="output directory")
    return parser


def _env(name: str, cast=str):
    value = os.environ.get(name)
    if value is None:
        return None
    return cast(value)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    config_path = args.config or _env("DUOTILT_CONFIG")
    preset = args.preset or _env("DUOTILT_PRESET")
    if not config_path and not preset:
        parser.print_usage(sys.stderr)
        print("duotilt: error: one of --config or --preset is required", file=sys.stderr)
        return 2

    overrides = {
        "seed": args.seed if args.seed is not None else _env("DUOTILT_SEED", int),
        "workers": args.workers if args.workers is not None else _env("DUOTILT_WORKERS", int),
        "samples": args.samples if args.samples is not None else _env("DUOTILT_SAMPLES", int),
        "output": args.output or _env("DUOTILT_OUTPUT"),
        "preset": preset,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides.get("workers") is None:
        overrides.setdefault("workers", os.cpu_count() or 1)

    try:
        if config_path:
            code = run_experiment(config_path, overrides)
        else:
            code = run_experiment(preset_config(preset, overrides))
    except DuotiltError as exc:
        print(f"duotilt: error: {exc}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
