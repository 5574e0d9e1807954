"""Command-line front end.

One executable with the experiment subcommands; every subcommand takes
``--config <path>`` and the flow-running ones accept ``--resume
<snapshot>``.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys

from .config import parse_config
from .errors import (
    ConfigError,
    NumericalError,
    RadiusBelowResolution,
    StorageError,
)
from . import experiments

_SUBCOMMANDS = {
    "run": "run",
    "gap": "gap",
    "linear-validate": "linear_validate",
    "probe-inequalities": "probe_inequalities",
    "blowup": "blowup",
    "stability": "stability",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bhflow",
        description="numerical laboratory for the constrained fourth-order heat flow",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to key=value config")
        if name in ("run", "gap"):
            p.add_argument("--resume", default=None, help="snapshot to resume from")
    return parser


def _print_report(report: dict):
    for key, value in report.items():
        if key in ("trajectory", "candidate", "state"):
            continue
        print(f"{key} = {value}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    experiment = _SUBCOMMANDS[args.command]
    try:
        with open(args.config, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 4

    try:
        cfg = parse_config(text)
        cfg.experiment = experiment

        resume_state = None
        if getattr(args, "resume", None):
            from .storage import read_snapshot

            resume_state = read_snapshot(args.resume)

        if experiment == "run":
            report = experiments.run_experiment(cfg, resume=resume_state)
            if report.get("singular_stop"):
                _print_report(report)
                print("stopped at a singular point", file=sys.stderr)
                return 3
        elif experiment == "gap" and resume_state is not None:
            print("error: the gap experiment does not resume", file=sys.stderr)
            return 2
        else:
            report = experiments.DRIVERS[experiment](cfg)
        _print_report(report)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, RadiusBelowResolution, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (StorageError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
