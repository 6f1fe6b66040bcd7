"""
Transporte óptimo exacto (EMD) y variantes OT de las pérdidas de adaptación e imputación
"""
from dataclasses import dataclass
from typing import Any, Dict, Optional, Union

import numpy as np
import ot
import torch

from app.core.logger import log_coupling
from app.models.data import MaskedBatch
from app.models.networks import ComponentBundle, LatentBatch
from app.models.training import LossReport, LossWeights, Variant
from app.services import ContractViolationError, TrainingDivergedError
from app.services.encoding import step_latents
from app.services.losses import classification_loss, imputation_mse_loss, total_loss

ArrayLike = Union[np.ndarray, torch.Tensor]

FEASIBILITY_TOL = 1e-9
# el simplex de red necesita más iteraciones que el default para lotes de 500
EMD_MAX_ITER = 1_000_000


@dataclass
class Coupling:
    """Plan de transporte γ con sus marginales y su costo"""
    gamma: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    objective: float
    name: str = "gamma"

    @property
    def shape(self):
        return self.gamma.shape

    @property
    def nonzeros(self) -> int:
        return int((self.gamma > 0).sum())

    def is_feasible(self, tol: float = FEASIBILITY_TOL) -> bool:
        return bool(
            (self.gamma >= 0).all()
            and np.allclose(self.gamma.sum(axis=1), self.row_marginal, atol=tol, rtol=0)
            and np.allclose(self.gamma.sum(axis=0), self.col_marginal, atol=tol, rtol=0)
        )

    def cost_of(self, cost: ArrayLike) -> float:
        """Σ_ij C_ij γ_ij para otro costo del mismo tamaño"""
        return float((_to_numpy(cost) * self.gamma).sum())

    def as_tensor(self, like: torch.Tensor) -> torch.Tensor:
        return torch.as_tensor(self.gamma, dtype=like.dtype, device=like.device)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "gamma": self.gamma.tolist(),
            "row_marginal": self.row_marginal.tolist(),
            "col_marginal": self.col_marginal.tolist(),
            "objective": self.objective,
        }


def _to_numpy(values: ArrayLike) -> np.ndarray:
    if isinstance(values, torch.Tensor):
        values = values.detach().cpu().numpy()
    return np.asarray(values, dtype=np.float64)


def _check_marginal(marginal: np.ndarray, label: str) -> None:
    if (marginal < 0).any():
        raise ContractViolationError(f"{label} marginal has negative entries")
    if abs(marginal.sum() - 1.0) > 1e-6:
        raise ContractViolationError(f"{label} marginal must sum to 1, got {marginal.sum()}")


def emd(cost: ArrayLike,
        row_marginal: Optional[ArrayLike] = None,
        col_marginal: Optional[ArrayLike] = None,
        name: str = "gamma") -> Coupling:
    """
    Acoplamiento óptimo exacto por simplex de red (POT)

    Args:
        cost: matriz k_s x k_t finita
        row_marginal, col_marginal: vectores de probabilidad (uniformes por defecto)

    Returns:
        Coupling en un vértice del politopo de transporte
    """
    cost_np = np.ascontiguousarray(_to_numpy(cost))
    if cost_np.ndim != 2:
        raise ContractViolationError(f"cost must be a matrix, got shape {cost_np.shape}")
    if not np.isfinite(cost_np).all():
        raise ContractViolationError("cost matrix has non-finite entries")

    k_s, k_t = cost_np.shape
    a = ot.unif(k_s) if row_marginal is None else _to_numpy(row_marginal)
    b = ot.unif(k_t) if col_marginal is None else _to_numpy(col_marginal)
    if a.shape != (k_s,) or b.shape != (k_t,):
        raise ContractViolationError("marginal lengths do not match the cost matrix")
    if abs(a.sum() - b.sum()) > FEASIBILITY_TOL:
        raise ContractViolationError(
            f"infeasible marginals: sums differ ({a.sum()} vs {b.sum()})"
        )
    _check_marginal(a, "row")
    _check_marginal(b, "column")

    gamma = ot.emd(a, b, cost_np, numItermax=EMD_MAX_ITER)
    objective = float((gamma * cost_np).sum())
    coupling = Coupling(gamma=gamma, row_marginal=a, col_marginal=b, objective=objective, name=name)
    log_coupling(name, gamma.shape, objective, coupling.nonzeros)
    return coupling


def squared_distances(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """
    ||a_i - b_j||² por expansión; a diferencia de cdist(...)**2 el gradiente
    queda finito cuando dos puntos coinciden
    """
    sq = (a * a).sum(dim=1, keepdim=True) + (b * b).sum(dim=1).unsqueeze(0) - 2.0 * a @ b.T
    return sq.clamp(min=0.0)


def adaptation_cost(z_s1: torch.Tensor, z_hat_s2: torch.Tensor,
                    z_t1: torch.Tensor, z_hat_t2: torch.Tensor) -> torch.Tensor:
    return squared_distances(z_s1, z_t1) + squared_distances(z_hat_s2, z_hat_t2)


def imputation_cost(z_s2: torch.Tensor, z_hat_s2: torch.Tensor) -> torch.Tensor:
    return squared_distances(z_s2, z_hat_s2)


def _check_fresh(coupling: Coupling, rows: int, cols: int) -> None:
    if coupling.shape != (rows, cols):
        raise ContractViolationError(
            f"stale coupling: gamma is {coupling.shape} but the batch pair is ({rows}, {cols})"
        )


def ot_adaptation_loss(coupling: Coupling,
                       z_s1: torch.Tensor,
                       z_hat_s2: torch.Tensor,
                       z_t1: torch.Tensor,
                       z_hat_t2: torch.Tensor) -> torch.Tensor:
    """Σ_ij (||z_S1^i - z_T1^j||² + ||ẑ_S2^i - ẑ_T2^j||²) γ1_ij con γ1 fijo"""
    _check_fresh(coupling, z_s1.shape[0], z_t1.shape[0])
    cost = adaptation_cost(z_s1, z_hat_s2, z_t1, z_hat_t2)
    return (cost * coupling.as_tensor(cost)).sum()


def ot_imputation_loss(coupling: Coupling, z_s2: torch.Tensor, z_hat_s2: torch.Tensor) -> torch.Tensor:
    """Σ_ij ||z_S2^i - ẑ_S2^j||² γ2_ij con γ2 fijo"""
    _check_fresh(coupling, z_s2.shape[0], z_hat_s2.shape[0])
    cost = imputation_cost(z_s2, z_hat_s2)
    return (cost * coupling.as_tensor(cost)).sum()


def _component(latent: LatentBatch, which: str) -> torch.Tensor:
    """z1 o z2 del lote latente; sin segunda componente devuelve ancho cero"""
    if which == "z1":
        return latent.z1
    if latent.z2 is None:
        return latent.z1.new_zeros((latent.z1.shape[0], 0))
    return latent.z2


def alternate_step(bundle: ComponentBundle,
                   optimizer: torch.optim.Optimizer,
                   source_batch: MaskedBatch,
                   target_batch: Optional[MaskedBatch],
                   weights: LossWeights,
                   variant: Variant,
                   lambda_mse: Optional[float] = None) -> LossReport:
    """
    Paso alternado del backend OT

    Etapa 1: latentes congelados, γ1 y γ2 por EMD sobre costos sin gradiente.
    Etapa 2: γ congelados, un paso de gradiente sobre λ1 L1 + λ2 L2 + λ3 L3
    respecto de g1, g2, r, f.

    Args:
        weights: LossWeights ya rampados para esta etapa
        variant: variante de modelo (define los codificadores)
        target_batch: None cuando no hay término de adaptación

    Returns:
        LossReport del paso
    """
    lambda_mse = weights.lambda_mse if lambda_mse is None else lambda_mse
    step_weights = weights.model_copy(update={"lambda_mse": lambda_mse})

    adapt = variant.adapts and weights.lambda1 > 0 and target_batch is not None
    latents = step_latents(bundle, variant, source_batch, target_batch if adapt else None)
    l3 = classification_loss(bundle.classify(latents.source), source_batch.labels)

    l1 = None
    if adapt:
        s1, s2 = _component(latents.source, "z1"), _component(latents.source, "z2")
        t1, t2 = _component(latents.target, "z1"), _component(latents.target, "z2")
        gamma1 = emd(adaptation_cost(s1, s2, t1, t2).detach(), name="gamma1")
        l1 = ot_adaptation_loss(gamma1, s1, s2, t1, t2)

    l_ot = l_mse = None
    if latents.z_s2 is not None and weights.lambda2 > 0:
        if weights.lambda_ot > 0:
            gamma2 = emd(imputation_cost(latents.z_s2, latents.z_hat_s2).detach(), name="gamma2")
            l_ot = ot_imputation_loss(gamma2, latents.z_s2, latents.z_hat_s2)
        if lambda_mse > 0:
            l_mse = imputation_mse_loss(latents.z_hat_s2, latents.z_s2)

    objective, report = total_loss(step_weights, l1, None, l_mse, l3, l_ot=l_ot)
    if not torch.isfinite(objective):
        raise TrainingDivergedError("non-finite OT objective", diagnostic=report.model_dump())

    optimizer.zero_grad(set_to_none=True)
    objective.backward()
    optimizer.step()
    return report
