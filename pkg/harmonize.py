"""
Site harmonization command line

Subcommands run one pipeline stage each over a run directory:

    gen-data          generate the multi-site phantom dataset
    train-flow        train the source flow with the guided objective
    train-harmonizer  pretrain the harmonizer on augmented source images
    train-segmenter   train the toy segmenter used for evaluation
    adapt             adapt the harmonizer to target sites under the frozen flow
    evaluate          segment target test images per method, write the metric table
    sample            draw images from the flow

Example:
    python harmonize.py gen-data --config configs/desk_profile.cfg
    python harmonize.py adapt --config configs/desk_profile.cfg --target site-b
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import argparse
from typing import Dict, List, Optional

from config.config import RunConfig
from pipeline.harmonization_engine import HarmonizationEngine

KNOWN_ERRORS = (ValueError, FileNotFoundError, RuntimeError, FloatingPointError, KeyError)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, metavar="PATH",
                        help="Flat key = value run configuration (defaults for missing keys)")
    common.add_argument("--seed", type=int, default=None, help="Overrides the config seed")
    common.add_argument("--out", default=None, metavar="DIR", help="Overrides the config output-dir")
    common.add_argument("--quiet", action="store_true", help="Only print errors")

    parser = argparse.ArgumentParser(
        description="Unsupervised image harmonization with normalizing flows",
        formatter_class=argparse.RawTextHelpFormatter
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="Generate the phantom dataset")
    sub.add_parser("train-flow", parents=[common], help="Train the source flow")
    sub.add_parser("train-harmonizer", parents=[common], help="Pretrain the harmonizer")
    sub.add_parser("train-segmenter", parents=[common], help="Train the toy segmenter")

    adapt = sub.add_parser("adapt", parents=[common], help="Adapt the harmonizer to target sites")
    adapt.add_argument("--target", action="append", default=None, metavar="SITE",
                       help="Target site (repeatable; default: every non-source site)")

    evaluate = sub.add_parser("evaluate", parents=[common], help="Build the metric table")
    evaluate.add_argument("--target", action="append", default=None, metavar="SITE",
                          help="Target site (repeatable; default: every non-source site)")
    evaluate.add_argument("--no-harmonize", action="store_true",
                          help="Only the baseline and hist-match rows")

    sample = sub.add_parser("sample", parents=[common], help="Sample images from the flow")
    sample.add_argument("--count", type=int, default=16, help="Number of images (default 16)")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file plus command-line overrides"""
    overrides: Dict[str, str] = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["output-dir"] = args.out
    return RunConfig.from_file(args.config, overrides)


def run_command(args: argparse.Namespace) -> None:
    engine = HarmonizationEngine(resolve_config(args), verbose=not args.quiet)
    if args.command == "gen-data":
        engine.gen_data()
    elif args.command == "train-flow":
        engine.train_flow()
    elif args.command == "train-harmonizer":
        engine.train_harmonizer()
    elif args.command == "train-segmenter":
        engine.train_segmenter()
    elif args.command == "adapt":
        engine.adapt(args.target)
    elif args.command == "evaluate":
        table = engine.evaluate(args.target, no_harmonize=args.no_harmonize)
        if not args.quiet:
            print("\n" + table.to_string(index=False))
    elif args.command == "sample":
        engine.sample(args.count)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run_command(args)
    except KNOWN_ERRORS as e:
        message = " ".join(str(e).split()) or type(e).__name__
        print(f"❌ {args.command}: {type(e).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
