"""
Logging estructurado del toolkit: eventos de corrida, métricas por época y
acoplamientos OT, en JSON o consola según LOG_FORMAT
"""
import logging
import sys
from typing import Dict
import structlog
from app.core.config import get_settings


def configure_logging():
    """
    Configura structlog para los subcomandos de la CLI y el entrenamiento

    Nivel y formato salen de Settings (LOG_LEVEL, LOG_FORMAT); todo se emite
    por stderr para no mezclarse con las tablas que la CLI imprime en stdout
    """
    settings = get_settings()

    # JSON para corridas largas, ConsoleRenderer para uso interactivo
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.processors.JSONRenderer() if settings.log_format == "json"
            else structlog.dev.ConsoleRenderer()
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    # Los logs van a stderr: stdout queda libre para tablas y rutas de salida
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, settings.log_level),
    )


def get_logger(name: str = None) -> structlog.stdlib.BoundLogger:
    """Obtener logger estructurado"""
    return structlog.get_logger(name)


def log_epoch_metrics(run_id: str, epoch: int, split: str, metrics: Dict[str, float], **kwargs):
    """Log para las métricas de una época"""
    logger = get_logger("metrics")
    logger.info(
        "Epoch metrics",
        run_id=run_id,
        epoch=epoch,
        split=split,
        **{name: round(float(value), 6) for name, value in metrics.items()},
        **kwargs
    )


def log_run_event(event_type: str, run_id: str = None, success: bool = True, **kwargs):
    """Log para eventos del ciclo de vida de una corrida"""
    logger = get_logger("run")
    logger.info(
        "Run Event",
        event_type=event_type,
        run_id=run_id,
        success=success,
        **kwargs
    )


def log_coupling(name: str, shape: tuple, objective: float, nonzeros: int, **kwargs):
    """Log para acoplamientos de transporte (nivel debug)"""
    logger = get_logger("transport")
    logger.debug(
        "Coupling solved",
        coupling=name,
        shape=list(shape),
        objective=objective,
        nonzeros=nonzeros,
        **kwargs
    )