"""
Subcomando prepare-data
"""
import argparse

from app.core.logger import get_logger
from app.models.data import DatasetName
from app.repositories.dataset_repository import get_dataset_repository

logger = get_logger("data_commands")

DIGITS = [name.value for name in DatasetName if name.is_digits]


def prepare_data(args: argparse.Namespace) -> int:
    """Descarga y cachea los datasets de dígitos en DATA_DIR"""
    names = [DatasetName(name) for name in args.datasets.split(",") if name]
    prepared = get_dataset_repository().prepare_digits(names)
    for name in prepared:
        print(name)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("prepare-data", help="descarga los datasets de dígitos")
    parser.add_argument("--datasets", default=",".join(n for n in DIGITS if n != DatasetName.MNISTM.value),
                        help=f"lista separada por comas de {DIGITS}")
    parser.set_defaults(handler=prepare_data)
