"""``kgtaskgen`` command line: one subcommand per pipeline stage plus ``run-all``.

Exit codes: 0 success, 2 configuration error, 3 stage failure, 4 task validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from .errors import ConfigError, KGTaskGenError, StageError, TaskValidationError
from .pipeline import STAGES, Pipeline, load_config, run_stage

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_VALIDATION = 0, 2, 3, 4

# flag -> (section, key) in the config
_FLAG_KEYS = {
    "docs": ("corpus", "docs"),
    "snapshots": ("corpus", "snapshots"),
    "templates": ("generation", "templates"),
    "patterns": ("generation", "patterns"),
    "trajectories": ("evaluation", "trajectories"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (defaults are used when omitted)")
    common.add_argument("--out", default="workspace", help="workspace directory for stage artifacts")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for generation")
    for flag in _FLAG_KEYS:
        common.add_argument(f"--{flag}", help=f"override the configured {flag} path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="kgtaskgen", description="Generate evaluation tasks from a knowledge graph.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "run-all"):
        sub.add_parser(name, parents=[common])
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    out: dict[str, Any] = {}
    if args.seed is not None:
        out["seed"] = args.seed
    for flag, (section, key) in _FLAG_KEYS.items():
        value = getattr(args, flag)
        if value is not None:
            # flag paths are relative to the working directory, not the config file
            out.setdefault(section, {})[key] = str(Path(value).resolve())
    return out


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        config = load_config(args.config, _overrides(args))
        pipeline = Pipeline(config, args.out, jobs=args.jobs)
        result = run_stage(pipeline, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TaskValidationError as exc:
        print(f"task validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE
    except (KGTaskGenError, OSError, ValueError) as exc:
        print(f"stage {args.command!r} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    if args.command in ("report", "run-all"):
        print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
