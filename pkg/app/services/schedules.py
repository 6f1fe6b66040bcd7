"""
Planificadores: escala de la capa de inversión y decaimiento de la tasa de aprendizaje
"""
import math
from typing import Iterable

from app.models.training import ScheduleState
from app.services import ContractViolationError


def grad_scale(p: float) -> float:
    """s(p) = 2 / (1 + exp(-10 p)) - 1"""
    _check_progress(p)
    return 2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0


def learning_rate(p: float, lr_i: float, decay_factor: float = 10.0) -> float:
    """lr(p) = lr_i / (1 + decay_factor * p) ** 0.75"""
    _check_progress(p)
    return lr_i / (1.0 + decay_factor * p) ** 0.75


def schedule_state(p: float, lr_i: float, decay_factor: float = 10.0) -> ScheduleState:
    return ScheduleState(
        p=p,
        grad_scale=grad_scale(p),
        lr=learning_rate(p, lr_i, decay_factor),
        lr_i=lr_i,
        decay_factor=decay_factor,
    )


def progress(batches_done: int, total_batches: int) -> float:
    """Fracción de lotes procesados, acotada a [0, 1]"""
    if total_batches <= 0:
        return 1.0
    return min(1.0, max(0.0, batches_done / total_batches))


def apply_learning_rates(optimizer, p: float) -> None:
    """
    Actualiza cada grupo del optimizador según su propio lr_i y decay_factor
    (los grupos guardan ambas claves al construirse)
    """
    for group in optimizer.param_groups:
        group["lr"] = learning_rate(p, group["lr_i"], group["decay_factor"])


def param_group(params: Iterable, lr_i: float, decay_factor: float, name: str) -> dict:
    return {"params": list(params), "lr": lr_i, "lr_i": lr_i, "decay_factor": decay_factor, "name": name}


def _check_progress(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ContractViolationError(f"progress p must be in [0, 1], got {p}")
