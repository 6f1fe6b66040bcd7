"""
Tests para los planificadores de GRL y tasa de aprendizaje
"""
import math

import pytest
import torch

from app.models.training import LossWeights, ScheduleMode
from app.services import ContractViolationError
from app.services.schedules import (
    apply_learning_rates,
    grad_scale,
    learning_rate,
    param_group,
    progress,
    schedule_state,
)


def test_grad_scale_endpoints():
    assert grad_scale(0.0) == 0.0
    assert grad_scale(1.0) == pytest.approx(0.99991, abs=1e-5)


def test_grad_scale_is_monotone():
    values = [grad_scale(p / 20) for p in range(21)]
    assert values == sorted(values)


def test_learning_rate_formula():
    assert learning_rate(0.0, 0.01) == 0.01
    assert learning_rate(1.0, 0.01) == pytest.approx(0.01 / 11 ** 0.75)
    assert learning_rate(0.5, 0.01, decay_factor=30.0) == pytest.approx(0.01 / 16 ** 0.75)


@pytest.mark.parametrize("p", [0.0, 0.25, 0.5, 1.0])
def test_schedules_match_closed_forms(p):
    assert grad_scale(p) == pytest.approx(2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0, abs=1e-12)
    assert learning_rate(p, 0.01) == pytest.approx(0.01 / (1.0 + 10.0 * p) ** 0.75, abs=1e-12)
    assert learning_rate(p, 0.01, decay_factor=30.0) == pytest.approx(
        0.01 / (1.0 + 30.0 * p) ** 0.75, abs=1e-12)


def test_progress_out_of_range():
    with pytest.raises(ContractViolationError):
        grad_scale(1.01)
    with pytest.raises(ContractViolationError):
        learning_rate(-0.1, 0.01)


def test_progress_is_clamped():
    assert progress(0, 10) == 0.0
    assert progress(15, 10) == 1.0
    assert progress(3, 0) == 1.0


def test_schedule_state():
    state = schedule_state(0.25, 0.01)
    assert state.grad_scale == grad_scale(0.25)
    assert state.lr == learning_rate(0.25, 0.01)


def test_constant_mode_disables_ramp():
    assert LossWeights(schedule_mode=ScheduleMode.CONSTANT).ramp(0.1) == 1.0
    assert LossWeights().ramp(0.1) == 0.1


def test_param_groups_keep_their_own_decay():
    fast = torch.nn.Parameter(torch.zeros(1))
    slow = torch.nn.Parameter(torch.zeros(1))
    optimizer = torch.optim.SGD([param_group([fast], 0.01, 30.0, "r"),
                                 param_group([slow], 0.01, 10.0, "f")], lr=0.01)
    apply_learning_rates(optimizer, 1.0)
    lrs = {g["name"]: g["lr"] for g in optimizer.param_groups}
    assert lrs["r"] == pytest.approx(0.01 / 31 ** 0.75)
    assert lrs["f"] == pytest.approx(0.01 / 11 ** 0.75)
