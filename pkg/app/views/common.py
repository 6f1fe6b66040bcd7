"""
Utilidades compartidas por los manejadores de la CLI
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

from app.core.config_validator import ConfigSchemaError, ConfigValidator
from app.models.training import ExperimentConfig


def load_experiment(path: str, overrides: Optional[List[str]] = None) -> ExperimentConfig:
    """
    Lee un archivo key=value y aplica overrides --set key=value
    (validados junto con el resto del archivo)
    """
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigSchemaError(f"config file not found: {config_path}", offending_keys=[])
    text = config_path.read_text(encoding="utf-8")
    if overrides:
        malformed = [item for item in overrides if "=" not in item]
        if malformed:
            raise ConfigSchemaError(f"overrides must be key=value: {malformed}", offending_keys=malformed)
        text = text.rstrip("\n") + "\n" + "\n".join(overrides) + "\n"
    return ConfigValidator.parse_text(text)


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", help="archivo key=value del experimento")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override de una clave del archivo (repetible)")


def add_plan_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-seeds", type=int, default=None, help="semillas por configuración")
    parser.add_argument("--jobs", type=int, default=1, help="corridas independientes en paralelo (procesos)")


def emit_table(frame: pd.DataFrame, out: Optional[str] = None) -> None:
    """CSV UTF-8 a archivo (si se indica) y tabla legible en stdout"""
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out, index=False, encoding="utf-8")
        print(out)
    print(frame.to_string(index=False), file=sys.stdout)
