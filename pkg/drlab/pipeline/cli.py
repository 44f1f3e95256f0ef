#!/usr/bin/env python3
"""
Command-line entry point: ``drlab <stage> --config <json> --run-dir <dir>``.

Exit codes: 0 success, 2 validation error, 3 missing or tampered upstream
artifact, 1 any other pipeline failure.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from drlab.errors import ArtifactError, DrLabError, ValidationError
from drlab.pipeline.config import load_experiment_config
from drlab.pipeline.stages import STAGE_COMMANDS, cmd_baseline, cmd_report, run_pipeline

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_ARTIFACT = 3


def setup_logging(run_dir: Optional[Path] = None, verbose: bool = False):
    """Setup logging configuration"""
    handlers = [logging.StreamHandler(sys.stdout)]
    if run_dir is not None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(Path(run_dir) / 'drlab.log'))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def load_environment():
    """Load environment variables"""
    env_path = Path.cwd() / '.env'
    if env_path.exists():
        load_dotenv(env_path)
        logging.info("Environment variables loaded from .env")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drlab", description="Reward search, physics prior and DR pipeline")
    parser.add_argument("-v", "--verbose", action="store_true", help="log prompts and responses")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in list(STAGE_COMMANDS) + ["run"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--run-dir", required=True, type=Path)

    p = sub.add_parser("baseline")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--run-dir", required=True, type=Path)
    p.add_argument("--kind", required=True, choices=["cem_random", "cem_rapp", "bayrn_rapp"])

    p = sub.add_parser("report")
    p.add_argument("--config", type=Path, help="accepted for symmetry; the report reads the run directory only")
    p.add_argument("--run-dir", required=True, type=Path)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.run_dir, args.verbose)
    load_environment()
    logger = logging.getLogger("drlab")

    try:
        if args.command == "report":
            cmd_report(args.run_dir)
        else:
            config = load_experiment_config(args.config)
            if args.command == "run":
                run_pipeline(config, args.run_dir)
            elif args.command == "baseline":
                cmd_baseline(config, args.run_dir, args.kind)
            else:
                STAGE_COMMANDS[args.command](config, args.run_dir)
    except ValidationError as e:
        logger.error(f"Validation error: {e}")
        return EXIT_VALIDATION
    except ArtifactError as e:
        logger.error(f"Upstream artifact error: {e}")
        return EXIT_ARTIFACT
    except DrLabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE
    logger.info(f"{args.command} finished")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
