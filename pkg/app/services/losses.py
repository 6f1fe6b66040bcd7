"""
Familia de pérdidas adversariales: L1 (adaptación), L2 = L_ADV + λ_MSE L_MSE, L3 (clasificación)
"""
from typing import Optional, Tuple, Union

import torch
import torch.nn as nn

from app.models.networks import LatentBatch, grl_apply
from app.models.training import LossReport, LossWeights
from app.services import ContractViolationError

EPS = 1e-7

LatentLike = Union[LatentBatch, torch.Tensor]


def clamped_log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(x.clamp(min=EPS))


def _as_tensor(latent: LatentLike) -> torch.Tensor:
    return latent.joint() if isinstance(latent, LatentBatch) else latent


def discriminator_outputs(discriminator: nn.Module,
                          positive: torch.Tensor,
                          negative: torch.Tensor,
                          grl_scale: Optional[float] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Evalúa el discriminador sobre ambos grupos en una sola pasada
    (BatchNorm comparte estadísticas entre grupos)

    Returns:
        (D(positivos), D(negativos)) aplanados
    """
    if positive.shape[0] == 0 or negative.shape[0] == 0:
        raise ContractViolationError("discriminator batches must be nonempty")
    joint = torch.cat([positive, negative], dim=0)
    if grl_scale is not None:
        joint = grl_apply(joint, grl_scale)
    out = discriminator(joint).flatten()
    return out[:positive.shape[0]], out[positive.shape[0]:]


def adversarial_log_likelihood(p_positive: torch.Tensor, p_negative: torch.Tensor) -> torch.Tensor:
    """mean log D(pos) + mean log(1 - D(neg))"""
    return clamped_log(p_positive).mean() + clamped_log(1.0 - p_negative).mean()


def discriminator_accuracy(p_positive: torch.Tensor, p_negative: torch.Tensor) -> float:
    with torch.no_grad():
        correct = (p_positive > 0.5).sum() + (p_negative <= 0.5).sum()
        return float(correct.item()) / float(p_positive.numel() + p_negative.numel())


def adaptation_loss(d1: nn.Module,
                    latent_s: LatentLike,
                    latent_t: LatentLike,
                    grl_scale: Optional[float] = None) -> torch.Tensor:
    """L1 = mean log D1(ẑ_S) + mean log(1 - D1(ẑ_T))"""
    p_s, p_t = discriminator_outputs(d1, _as_tensor(latent_s), _as_tensor(latent_t), grl_scale)
    return adversarial_log_likelihood(p_s, p_t)


def imputation_adv_loss(d2: nn.Module,
                        z_hat_s2: torch.Tensor,
                        z_s2: torch.Tensor,
                        grl_scale: Optional[float] = None) -> torch.Tensor:
    """L_ADV = mean log D2(ẑ_S2) + mean log(1 - D2(z_S2)); D2 da la probabilidad de 'generado'"""
    if z_hat_s2.shape != z_s2.shape:
        raise ContractViolationError(
            f"imputation tensors differ in shape: {tuple(z_hat_s2.shape)} vs {tuple(z_s2.shape)}"
        )
    p_generated, p_encoded = discriminator_outputs(d2, z_hat_s2, z_s2, grl_scale)
    return adversarial_log_likelihood(p_generated, p_encoded)


def imputation_mse_loss(z_hat_s2: torch.Tensor, z_s2: torch.Tensor) -> torch.Tensor:
    """Media por lote de ||z_S2 - ẑ_S2||²"""
    if z_hat_s2.shape != z_s2.shape:
        raise ContractViolationError(
            f"imputation tensors differ in shape: {tuple(z_hat_s2.shape)} vs {tuple(z_s2.shape)}"
        )
    return ((z_s2 - z_hat_s2) ** 2).sum(dim=1).mean()


def classification_loss(probabilities: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Entropía cruzada con log acotado; etiquetas en {0..K-1}"""
    labels = labels.long()
    num_classes = probabilities.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ContractViolationError(f"labels must lie in [0, {num_classes - 1}]")
    if labels.shape[0] != probabilities.shape[0]:
        raise ContractViolationError("labels and probabilities differ in length")
    picked = probabilities.gather(1, labels.view(-1, 1)).flatten()
    return -clamped_log(picked).mean()


def _value(term: Optional[torch.Tensor]) -> float:
    return float(term.detach().item()) if term is not None else 0.0


def total_loss(weights: LossWeights,
               l1: Optional[torch.Tensor],
               l_adv: Optional[torch.Tensor],
               l_mse: Optional[torch.Tensor],
               l3: torch.Tensor,
               l_ot: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, LossReport]:
    """
    L = λ1 L1 + λ2 L2 + λ3 L3 con L2 = L_ADV + λ_MSE L_MSE
    (con backend OT, L_OT ocupa el lugar de L_ADV ponderado por λ_OT)

    Returns:
        (L como tensor, LossReport con las identidades recalculadas en float)
    """
    zero = l3.new_zeros(())
    adv_term = l_adv if l_adv is not None else zero
    if l_ot is not None:
        adv_term = weights.lambda_ot * l_ot
    mse_term = l_mse if l_mse is not None else zero
    l1_term = l1 if l1 is not None else zero

    l2 = adv_term + weights.lambda_mse * mse_term
    total = weights.lambda1 * l1_term + weights.lambda2 * l2 + weights.lambda3 * l3

    report = build_report(weights, _value(l1), _value(l_adv), _value(l_mse), _value(l3),
                          _value(l_ot) if l_ot is not None else None)
    return total, report


def build_report(weights: LossWeights,
                 l1: float,
                 l_adv: float,
                 l_mse: float,
                 l3: float,
                 l_ot: Optional[float] = None,
                 d1_accuracy: Optional[float] = None,
                 d2_accuracy: Optional[float] = None) -> LossReport:
    first = weights.lambda_ot * l_ot if l_ot is not None else l_adv
    l2 = first + weights.lambda_mse * l_mse
    return LossReport(
        L1=l1,
        L_ADV=l_adv,
        L_MSE=l_mse,
        L_OT=l_ot or 0.0,
        L2=l2,
        L3=l3,
        L_total=weights.lambda1 * l1 + weights.lambda2 * l2 + weights.lambda3 * l3,
        d1_accuracy=d1_accuracy,
        d2_accuracy=d2_accuracy,
    )


def minimax_objective(weights: LossWeights,
                      ramp: float,
                      l3: torch.Tensor,
                      l1_reversed: Optional[torch.Tensor] = None,
                      l_adv_reversed: Optional[torch.Tensor] = None,
                      l_mse: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Objetivo minimizado en un único backward

    L1 y L_ADV llegan calculados sobre entradas que pasaron por la GRL con
    escala `ramp`: los discriminadores ascienden con peso λ y los extractores
    descienden con peso λ·ramp.
    """
    objective = weights.lambda3 * l3
    if l1_reversed is not None:
        objective = objective - weights.lambda1 * l1_reversed
    if l_adv_reversed is not None:
        objective = objective - weights.lambda2 * l_adv_reversed
    if l_mse is not None:
        objective = objective + ramp * weights.lambda2 * weights.lambda_mse * l_mse
    return objective
