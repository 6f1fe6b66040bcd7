"""
Tests para el acoplamiento exacto y las pérdidas OT
"""
import itertools

import numpy as np
import pytest
import torch
from scipy.optimize import linprog

from app.services import ContractViolationError
from app.services.transport import (
    emd,
    imputation_cost,
    ot_adaptation_loss,
    ot_imputation_loss,
    squared_distances,
)


def brute_force_assignment(cost: np.ndarray) -> float:
    """Con marginales uniformes n x n el óptimo está en una permutación"""
    n = cost.shape[0]
    return min(sum(cost[i, perm[i]] for i in range(n)) / n
               for perm in itertools.permutations(range(n)))


def linear_program_objective(cost: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Óptimo del problema de transporte como programa lineal (HiGHS)"""
    k_s, k_t = cost.shape
    rows = np.kron(np.eye(k_s), np.ones((1, k_t)))
    cols = np.kron(np.ones((1, k_s)), np.eye(k_t))
    result = linprog(cost.ravel(), A_eq=np.vstack([rows, cols]), b_eq=np.concatenate([a, b]),
                     bounds=(0, None), method="highs")
    assert result.status == 0
    return float(result.fun)


@pytest.mark.parametrize("seed", range(200))
def test_emd_matches_permutation_search(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    cost = rng.random((n, n))
    coupling = emd(cost)
    assert coupling.is_feasible()
    assert coupling.objective == pytest.approx(brute_force_assignment(cost), abs=1e-9)
    assert coupling.nonzeros <= 2 * n - 1


@pytest.mark.parametrize("seed", range(200))
def test_emd_matches_linear_program_with_weighted_marginals(seed):
    """Matrices rectangulares y marginales no uniformes contra el óptimo del LP"""
    rng = np.random.default_rng(10_000 + seed)
    k_s, k_t = (int(k) for k in rng.integers(2, 7, size=2))
    cost = rng.random((k_s, k_t)) * 10.0
    a, b = rng.dirichlet(np.ones(k_s)), rng.dirichlet(np.ones(k_t))
    coupling = emd(cost, row_marginal=a, col_marginal=b)
    assert coupling.is_feasible(tol=1e-8)
    assert coupling.objective == pytest.approx(linear_program_objective(cost, a, b), abs=1e-7)
    assert coupling.nonzeros <= k_s + k_t - 1


def test_emd_rectangular_marginals():
    cost = np.array([[0.0, 1.0, 2.0], [2.0, 1.0, 0.0]])
    coupling = emd(cost)
    np.testing.assert_allclose(coupling.gamma.sum(axis=1), [0.5, 0.5], atol=1e-9)
    np.testing.assert_allclose(coupling.gamma.sum(axis=0), [1 / 3] * 3, atol=1e-9)
    assert coupling.objective == pytest.approx(1 / 3)


def test_emd_rejects_bad_marginals():
    cost = np.zeros((2, 2))
    with pytest.raises(ContractViolationError):
        emd(cost, row_marginal=[0.7, 0.7], col_marginal=[0.5, 0.5])
    with pytest.raises(ContractViolationError):
        emd(cost, row_marginal=[1.2, -0.2], col_marginal=[0.5, 0.5])
    with pytest.raises(ContractViolationError):
        emd(cost, row_marginal=[1.0], col_marginal=[0.5, 0.5])


def test_emd_rejects_non_finite_cost():
    with pytest.raises(ContractViolationError):
        emd(np.array([[0.0, np.inf], [1.0, 0.0]]))


def test_squared_distances_gradient_is_finite_on_ties():
    a = torch.ones(2, 3, requires_grad=True)
    b = torch.ones(2, 3)
    squared_distances(a, b).sum().backward()
    assert torch.isfinite(a.grad).all()


def test_ot_losses_use_fixed_coupling():
    z_s2 = torch.tensor([[0.0, 0.0], [1.0, 1.0]])
    z_hat = torch.tensor([[1.0, 1.0], [0.0, 0.0]], requires_grad=True)
    coupling = emd(imputation_cost(z_s2, z_hat).detach())
    # el emparejamiento cruzado anula el costo
    assert coupling.objective == pytest.approx(0.0)
    assert ot_imputation_loss(coupling, z_s2, z_hat).item() == pytest.approx(0.0)


def test_stale_coupling_is_rejected():
    coupling = emd(np.zeros((3, 3)))
    z = torch.zeros(4, 2)
    with pytest.raises(ContractViolationError):
        ot_imputation_loss(coupling, z, z)
    with pytest.raises(ContractViolationError):
        ot_adaptation_loss(coupling, z, z, z, z)


def test_adaptation_loss_on_two_samples():
    """Costo [[0, 4], [1, 1]]: el acoplamiento identidad da 0.5"""
    s1 = torch.tensor([[0.0], [1.0]], dtype=torch.float64)
    t1 = torch.tensor([[0.0], [2.0]], dtype=torch.float64)
    zeros = torch.zeros(2, 1, dtype=torch.float64)
    cost = squared_distances(s1, t1) + squared_distances(zeros, zeros)
    coupling = emd(cost)
    np.testing.assert_allclose(coupling.gamma, [[0.5, 0.0], [0.0, 0.5]], atol=1e-12)
    assert ot_adaptation_loss(coupling, s1, zeros, t1, zeros).item() == pytest.approx(0.5, abs=1e-12)
