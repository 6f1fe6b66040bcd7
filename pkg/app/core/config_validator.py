"""
Validador de configuraciones de experimento (archivos planos key=value)
"""
import io
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from dotenv import dotenv_values
from pydantic import ValidationError

from app.core.logger import get_logger
from app.models.training import Backend, ExperimentConfig

logger = get_logger("config_validator")


class ConfigSchemaError(Exception):
    """Configuración inválida; reúne todas las claves problemáticas"""

    def __init__(self, message: str, offending_keys: List[str], errors: Optional[List[str]] = None):
        super().__init__(message)
        self.offending_keys = offending_keys
        self.errors = errors or []


class ConfigValidator:
    """Parseo, validación y serialización de ExperimentConfig"""

    KNOWN_KEYS = set(ExperimentConfig.model_fields)

    @classmethod
    def parse_text(cls, text: str) -> ExperimentConfig:
        """
        Parsea el contenido de un archivo key=value

        Returns:
            ExperimentConfig validado

        Raises:
            ConfigSchemaError: con todas las claves desconocidas o inválidas
        """
        raw = dotenv_values(stream=io.StringIO(text), interpolate=False)
        data = {k.strip().lower(): v for k, v in raw.items() if v is not None and v != ""}
        return cls.validate_dict(data)

    @classmethod
    def parse_file(cls, path: Union[str, Path]) -> ExperimentConfig:
        path = Path(path)
        if not path.exists():
            raise ConfigSchemaError(f"config file not found: {path}", offending_keys=[])
        config = cls.parse_text(path.read_text(encoding="utf-8"))
        logger.info("Experiment config loaded", path=str(path), variant=config.variant.value,
                    backend=config.backend.value, pair=config.pair_name)
        return config

    @classmethod
    def validate_dict(cls, data: Dict[str, Any]) -> ExperimentConfig:
        errors: List[str] = []
        offending: List[str] = []

        unknown = sorted(k for k in data if k not in cls.KNOWN_KEYS)
        for key in unknown:
            offending.append(key)
            errors.append(f"{key}: unknown key")

        config = None
        try:
            config = ExperimentConfig(**{k: v for k, v in data.items() if k in cls.KNOWN_KEYS})
        except ValidationError as e:
            for err in e.errors():
                key = str(err["loc"][0]) if err["loc"] else cls._key_from_message(err["msg"])
                if key not in offending:
                    offending.append(key)
                errors.append(f"{key}: {err['msg']}")

        if config is not None:
            for key, message in cls._cross_field_errors(config):
                if key not in offending:
                    offending.append(key)
                errors.append(f"{key}: {message}")

        if errors:
            logger.error("Config validation failed", offending_keys=offending, errors_count=len(errors))
            raise ConfigSchemaError(
                f"invalid experiment config: {'; '.join(errors)}",
                offending_keys=offending,
                errors=errors,
            )
        return config

    @staticmethod
    def _key_from_message(message: str) -> str:
        """Clave responsable de un error de validación entre campos"""
        for key in ("source_path", "target_path", "target_class_prior", "source", "target"):
            if key in message:
                return key
        return "config"

    @classmethod
    def _cross_field_errors(cls, config: ExperimentConfig) -> List[Tuple[str, str]]:
        """Reglas que dependen de archivos o de combinaciones de campos"""
        problems: List[Tuple[str, str]] = []

        declaration = cls.mask_declaration(config.mask_path)
        if config.is_tabular and declaration.get("structural") and config.variant.uses_full_target:
            problems.append(("variant", f"'{config.variant.value}' needs target features that are "
                                        "structurally missing in the tabular target"))
        if config.is_tabular and config.variant.family == "impute" and declaration \
                and not declaration.get("missing"):
            problems.append(("mask_path", "adapt_impute requires a nonempty missing block"))
        if config.backend == Backend.OT:
            if config.strong_discriminator:
                problems.append(("strong_discriminator", "discriminator option is not used by backend=ot"))
            if config.fast_decay_imputation:
                problems.append(("fast_decay_imputation", "D2 decay option is not used by backend=ot"))
        return problems

    @staticmethod
    def mask_declaration(mask_path: Optional[str]) -> Dict[str, Any]:
        """Declaración JSON {"missing": [...], "structural": bool}; vacía si no hay archivo"""
        if not mask_path:
            return {}
        path = Path(mask_path)
        if not path.exists():
            return {}
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigSchemaError(f"invalid mask declaration: {e}", offending_keys=["mask_path"])

    @staticmethod
    def _format_value(value: Any) -> str:
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            return repr(value)
        return str(value)

    @classmethod
    def serialize(cls, config: ExperimentConfig) -> str:
        """Líneas key=value ordenadas; los campos en None se omiten"""
        data = config.model_dump(mode="json", exclude_none=True)
        lines = [f"{key}={cls._format_value(data[key])}" for key in sorted(data)]
        return "\n".join(lines) + "\n"


def parse_config_file(path: Union[str, Path]) -> ExperimentConfig:
    return ConfigValidator.parse_file(path)


def serialize_config(config: ExperimentConfig) -> str:
    return ConfigValidator.serialize(config)
