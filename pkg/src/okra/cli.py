"""Command line: `okra generate` and `okra pipeline --stage <name>`.

Exit codes: 0 ok, 2 configuration error, 3 missing upstream artifact,
4 artifact/configuration digest mismatch.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .pipeline import (
    BASELINE_NAMES,
    ArtifactMismatch,
    ConfigError,
    MissingArtifact,
    STAGES,
    cmd_baseline,
    cmd_generate,
    load_config,
)
from .training import DigestMismatch

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_DIGEST = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="okra",
        description="Knowledge-graph job recommendation pipeline on synthetic data")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration file (INI)")
    common.add_argument("--seed", type=int, default=None,
                        help="override the configured global seed")
    common.add_argument("--out", default="okra_out", help="artifact directory")

    sub.add_parser("generate", parents=[common],
                   help="write synthetic tables and labels")

    pipe = sub.add_parser("pipeline", parents=[common], help="run one pipeline stage")
    pipe.add_argument("--stage", required=True,
                      choices=sorted(STAGES) + ["baseline"])
    pipe.add_argument("--name", choices=BASELINE_NAMES, default=None,
                      help="baseline name (required for --stage baseline)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, seed_override=args.seed)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    try:
        if args.command == "generate":
            result = cmd_generate(config, out)
        elif args.stage == "baseline":
            if args.name is None:
                print("config error: --stage baseline requires --name",
                      file=sys.stderr)
                return EXIT_CONFIG
            result = cmd_baseline(config, out, args.name)
        else:
            result = STAGES[args.stage](config, out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as err:
        print(f"missing input: {err}", file=sys.stderr)
        return EXIT_MISSING
    except (ArtifactMismatch, DigestMismatch) as err:
        print(f"digest mismatch: {err}", file=sys.stderr)
        return EXIT_DIGEST

    print(json.dumps({"digest": config.digest, **result}, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
