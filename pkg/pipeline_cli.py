#!/usr/bin/env python3
"""
CoCo Adoption Pipeline CLI
Run the whole pipeline or a single stage over CoCo-schema event logs.

Usage:
    python pipeline_cli.py                         # synth -> explain with defaults
    python pipeline_cli.py --config run.json       # JSON run configuration
    python pipeline_cli.py --stage train           # one stage (upstream manifests must exist)
    python pipeline_cli.py --list-stages           # show discovered stages
"""

import argparse
import logging
import sys
from typing import List, Optional

from coco.errors import CocoError, DatasetFileError, DatasetValidationError, InfeasibleConfigError
from config import load_run_config, settings
from provider import stage_provider
from stages.base import DegenerateStatisticsWarning, MissingDependencyError, StaleArtifactError
from stages.table_formatter import TableFormatter

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2
EXIT_MISSING_DEPENDENCY = 3
EXIT_DEGENERATE = 4


def setup_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> logging.Logger:
    """Configure logging for the pipeline."""
    log_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    # Create handlers list
    handlers = [logging.StreamHandler(sys.stderr)]

    # Only add file handler if we can write to the directory
    log_file = settings.log_file if log_file is None else log_file
    if log_file:
        try:
            handlers.append(logging.FileHandler(log_file))
        except (OSError, PermissionError):
            # Skip file logging if we can't write (e.g., read-only filesystem)
            pass

    logging.basicConfig(
        level=getattr(logging, level or settings.log_level, logging.INFO),
        format=log_format,
        handlers=handlers,
        force=True
    )

    # Set specific loggers
    for noisy in ('numba', 'shap', 'matplotlib'):
        logging.getLogger(noisy).setLevel(logging.WARNING)
    return logging.getLogger(__name__)


def exit_code_for(error: Exception) -> int:
    """Map a failure to the CLI exit code."""
    if isinstance(error, (DatasetValidationError, DatasetFileError, InfeasibleConfigError)):
        return EXIT_INVALID
    if isinstance(error, (MissingDependencyError, StaleArtifactError)):
        return EXIT_MISSING_DEPENDENCY
    if isinstance(error, DegenerateStatisticsWarning):
        return EXIT_DEGENERATE
    return EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="CoCo Adoption Pipeline",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Full pipeline on the default synthetic dataset
  python pipeline_cli.py --seed 7 --output-dir out

  # Real tables from a directory, lenient validation set in the config
  python pipeline_cli.py --config run.json --input-dir data/

  # Re-run one stage after changing its parameters
  python pipeline_cli.py --config run.json --stage explain

Exit codes:
  0 success, 1 failure, 2 invalid configuration or dataset,
  3 missing or stale upstream artifact, 4 degenerate statistics under --strict
        """
    )

    parser.add_argument('--config', help='JSON run configuration')
    parser.add_argument('--seed', type=int, help='Master seed (overrides the config)')
    parser.add_argument('--stage', default='all', help="Stage to run, or 'all' (default: all)")
    parser.add_argument('--strict', action='store_true', default=None,
                        help='Fail with exit code 4 on degenerate statistics')
    parser.add_argument('--threads', type=int, help='Worker count, 0 = every core (outputs do not depend on it)')
    parser.add_argument('--output-dir', help='Output root (default: COCO_OUTPUT_DIR or out)')
    parser.add_argument('--input-dir', help='Directory with the seven CoCo tables (skips synth)')
    parser.add_argument('--list-stages', action='store_true', help='List discovered stages and exit')
    return parser


def print_stage_list() -> None:
    rows = []
    for name in stage_provider.list_stages():
        stage_class = stage_provider.get_stage(name)
        rows.append({"stage": name, "requires": ", ".join(stage_class.requires) or "-",
                     "description": stage_class.description})
    print(TableFormatter.format_as_table(rows, ["stage", "requires", "description"], title="Pipeline Stages"))


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)

    problems = settings.validate_config()
    if problems:
        print("⚠️  Configuration Issues:")
        for problem in problems:
            print(f"   - {problem}")
        return EXIT_INVALID

    logger = setup_logging()
    stage_provider.discover()

    if args.list_stages:
        print_stage_list()
        return EXIT_OK

    try:
        run_config = load_run_config(args.config, {
            "seed": args.seed, "threads": args.threads, "output_dir": args.output_dir,
            "input_dir": args.input_dir, "strict": args.strict,
        })
    except CocoError as e:
        print(TableFormatter.format_error(str(e)))
        return EXIT_INVALID

    problems = run_config.validate()
    if problems:
        print("⚠️  Run Configuration Issues:")
        for problem in problems:
            print(f"   - {problem}")
        return EXIT_INVALID

    if args.stage == 'all':
        names = [n for n in stage_provider.list_stages() if run_config.stage_enabled(n)]
    elif stage_provider.is_stage_implemented(args.stage):
        names = [args.stage]
    else:
        print(TableFormatter.format_error(
            f"unknown stage '{args.stage}' (available: {', '.join(stage_provider.list_stages())})"))
        return EXIT_INVALID

    print("=" * 60)
    print("🌾 CoCo Adoption Pipeline")
    print("=" * 60)
    print(f"Output: {run_config.output_dir}")
    print(f"Input: {run_config.input_dir or 'synthetic'}")
    print(f"Seed: {run_config.seed}")
    print(f"Stages: {', '.join(names)}")
    print("-" * 60)

    for name in names:
        stage = stage_provider.get_stage(name)(run_config)
        try:
            print(stage.execute(run_config.stage_arguments(name)))
        except Exception as e:
            code = exit_code_for(e)
            if code == EXIT_FAILURE:
                logger.exception(f"Stage {name} failed")
            print(TableFormatter.format_error(f"stage '{name}': {e}"))
            return code
        print(f"✅ {name} complete")

    print("=" * 60)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
