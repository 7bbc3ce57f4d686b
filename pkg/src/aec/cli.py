"""Command-line entry point.

    aec run --config run.yaml [--stages prepare,base,...] [--renormalize] [--binary-conv]
    aec report --dir <artifacts>
    aec fixture --out <dir> [--n 2000] [--seed 0] [--builtin-base]

Exit status is 0 on success, 1 when a stage fails at runtime and 2 when the
configuration or the requested stage's inputs are invalid.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import STAGES, load_config
from .errors import ConfigError
from .report import emit_report
from .stages import run
from .synthetic import write_fixture

log = logging.getLogger("aec")

EXIT_OK, EXIT_FAILURE, EXIT_INVALID = 0, 1, 2


def _parse_stages(value: str) -> list[str]:
    stages = [s.strip() for s in value.split(",") if s.strip()]
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown stage(s) {bad}; choose from {','.join(STAGES)}")
    return stages


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aec", description="Characterize the errors of a black-box text classifier.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run workflow stages from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--stages", type=_parse_stages, default=list(STAGES),
                       help=f"comma-separated subset of {','.join(STAGES)}")
    p_run.add_argument("--renormalize", action="store_true",
                       help="rescale imported probabilities that do not sum to 1")
    p_run.add_argument("--binary-conv", action="store_true",
                       help="use 0/1 conversation-marker indicators instead of normalized counts")
    p_run.add_argument("--workers", type=int, default=None, help="processes for feature extraction")

    p_rep = sub.add_parser("report", help="regenerate report.md/report.json from a run directory")
    p_rep.add_argument("--dir", required=True)
    p_rep.add_argument("--top-features", type=int, default=100)

    p_fix = sub.add_parser("fixture", help="write the synthetic planted-signal fixture")
    p_fix.add_argument("--out", required=True)
    p_fix.add_argument("--n", type=int, default=2000)
    p_fix.add_argument("--seed", type=int, default=0)
    p_fix.add_argument("--builtin-base", action="store_true",
                       help="train the built-in base model instead of shipping predictions")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            overrides = {"renormalize": args.renormalize, "binary_conv": args.binary_conv, "workers": args.workers}
            cfg = load_config(args.config, overrides)
            executed = run(cfg, args.stages)
            log.info("executed stages: %s", ", ".join(executed) or "none (all up to date)")
        elif args.command == "report":
            emit_report(args.dir, top_features=args.top_features)
        elif args.command == "fixture":
            path = write_fixture(args.out, n=args.n, seed=args.seed, builtin_base=args.builtin_base)
            print(path)
    except ConfigError as exc:
        print(f"aec: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # any stage failure
        print(f"aec: stage failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
