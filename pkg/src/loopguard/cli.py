"""Batch front door: `loopguard <command> --config <path> [--out <dir>]`.

Commands mirror the two-phase vocabulary: ingest, pretrain, finetune,
score, baseline, report, and `all` to chain them. Exit codes: 0 success,
2 config error, 3 missing prerequisite, 4 numeric failure, 1 anything
else. Failures print a machine-readable JSON object to stderr. The
LOOPGUARD_SEED environment variable overrides every config seed, for
smoke tests.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import parse_config
from .errors import ConfigError, NumericError, PrerequisiteError
from .pipeline import STAGES, run

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_PREREQUISITE = 3
EXIT_NUMERIC = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loopguard",
        description="Embedding-space anomaly detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "all"):
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage")
        p.add_argument("--config", required=True, help="path to the JSON run configuration")
        p.add_argument("--out", default=None, help="output base directory (default: config output_dir)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        seed_env = os.environ.get("LOOPGUARD_SEED")
        if seed_env is not None:
            try:
                cfg.override_seeds(int(seed_env))
            except ValueError:
                raise ConfigError(f"LOOPGUARD_SEED must be an integer, got {seed_env!r}") from None
        run_dir = run(args.command, cfg, out_base=args.out)
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    except PrerequisiteError as exc:
        return _fail(exc, EXIT_PREREQUISITE)
    except NumericError as exc:
        return _fail(exc, EXIT_NUMERIC)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports everything
        return _fail(exc, EXIT_FAILURE)
    print(run_dir)
    return EXIT_OK


def _fail(exc: Exception, code: int) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(doc), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
