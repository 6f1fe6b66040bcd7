"""
Inicialización del proceso: settings, logging, directorios y determinismo de torch
"""
import random

import numpy as np
import torch

from app.core.config import get_settings, override_settings, validate_configuration
from app.core.logger import configure_logging, get_logger

logger = get_logger("startup")


def seed_everything(seed: int) -> None:
    """Semilla común para random, numpy y torch"""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def configure_torch() -> None:
    """Hilos y algoritmos deterministas (las corridas deben ser bit a bit reproducibles en CPU)"""
    settings = get_settings()
    if settings.torch_threads:
        torch.set_num_threads(settings.torch_threads)
    torch.use_deterministic_algorithms(True, warn_only=True)
    if torch.backends.cudnn.is_available():
        torch.backends.cudnn.benchmark = False


def initialize(**overrides) -> None:
    """
    Inicializa el proceso (CLI o proceso hijo de --jobs)

    Args:
        overrides: valores de Settings a forzar (data_dir, runs_dir, device, ...)
    """
    if overrides:
        override_settings(**overrides)
    configure_logging()
    validate_configuration()
    configure_torch()

    settings = get_settings()
    logger.info("Toolkit initialized",
                version=settings.app_version,
                environment=settings.environment,
                data_dir=settings.data_dir,
                runs_dir=settings.runs_dir,
                device=settings.device)
