"""
Adaptation-Imputation Toolkit
Punto de entrada principal (CLI)
"""
import argparse
import sys
from typing import List, Optional

from app.core.config import get_settings
from app.core.config_validator import ConfigSchemaError
from app.core.logger import get_logger
from app.core.startup import initialize
from app.repositories import RepositoryError
from app.services import ServiceError
from app.views import analysis_commands, data_commands, training_commands

logger = get_logger("main")

EXIT_SCHEMA = 2
EXIT_FAILURE = 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adapt-impute",
        description="Adaptación de dominio no supervisada con un bloque fijo de features faltantes",
    )
    parser.add_argument("--data-dir", default=None, help="override de DATA_DIR")
    parser.add_argument("--runs-dir", default=None, help="override de RUNS_DIR")
    parser.add_argument("--device", default=None, help="cpu o cuda[:N]")
    parser.add_argument("--log-level", default=None)
    subparsers = parser.add_subparsers(dest="command", required=True)

    data_commands.register(subparsers)
    training_commands.register(subparsers)
    analysis_commands.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        initialize(data_dir=args.data_dir, runs_dir=args.runs_dir,
                   device=args.device, log_level=args.log_level)
        logger.info("Command started", command=args.command, version=get_settings().app_version)
        return args.handler(args)
    except ConfigSchemaError as e:
        logger.error("Invalid configuration", offending_keys=e.offending_keys, error=str(e))
        print(f"invalid configuration keys: {', '.join(e.offending_keys) or '-'}", file=sys.stderr)
        for message in e.errors:
            print(f"  {message}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ServiceError, RepositoryError) as e:
        logger.error("Command failed", command=args.command, error=str(e), error_type=type(e).__name__)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
