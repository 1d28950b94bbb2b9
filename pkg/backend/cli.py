"""Command-line entry point: one subcommand per pipeline stage.

    python -m backend.cli synth   --config run.json --out outputs
    python -m backend.cli extract --config run.json [--input dataset.csv]
    python -m backend.cli eval    --config run.json --workers 4
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from backend import settings
from backend.models.config_models import PipelineConfig
from backend.services.errors import DataError, PipelineError
from backend.services.pipeline_service import COMMANDS, PipelineService, load_config, parse_config

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eegdep", description="EEG depression recognition pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="joblib worker count for folds and grid cells")
    common.add_argument("--input", help="input file for the stage (dataset or feature CSV)")
    common.add_argument("--log-level", default=None, help="logging level (default: LOG_LEVEL or INFO)")

    subparsers = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "synth": "generate a synthetic dataset",
        "extract": "extract the feature matrix from a dataset",
        "select": "run feature selection on the whole feature matrix",
        "eval": "leave-one-subject-out evaluation of every configured model",
        "grid": "feature set x selector x classifier grid",
        "stats": "group t-tests, edge census and class connectivity",
        "run": "synth (when synthetic), extract, select, eval and stats",
    }
    for command in COMMANDS:
        subparsers.add_parser(command, parents=[common], help=descriptions[command])
    return parser


def apply_overrides(config: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out:
        updates["output_dir"] = args.out
    if args.workers is not None:
        updates["workers"] = args.workers
    if not updates:
        return config
    # Revalidate so overrides go through the same range checks as the file.
    return parse_config({**config.model_dump(mode="json"), **updates})


def error_report(error: PipelineError, command: str) -> dict:
    report = error.to_dict()
    report["operation"] = error.context.get("operation", command)
    return {key: report[key] for key in ("error", "message", "operation", "context", "exit_code")}


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings.configure_logging(args.log_level)
    try:
        config = apply_overrides(load_config(args.config), args)
        try:
            outputs = PipelineService(config, input_path=args.input).execute(args.command)
        except OSError as e:
            raise DataError(f"I/O failure: {e.strerror or e}", path=e.filename, operation=args.command)
    except PipelineError as e:
        logger.error(f"{args.command} failed: {e}")
        print(json.dumps(error_report(e, args.command), sort_keys=True), file=sys.stderr)
        return e.exit_code
    for path in outputs:
        print(path)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
