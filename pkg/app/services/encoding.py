"""
Latentes por variante de modelo: qué codificador ve cada dominio
"""
from dataclasses import dataclass
from typing import Optional

import torch

from app.models.data import Domain, MaskedBatch, MaskedDataset
from app.models.networks import ComponentBundle, LatentBatch
from app.models.training import Variant
from app.services import ConfigurationError
from app.services.batching import sequential_batches


@dataclass
class StepLatents:
    """Latentes de un paso de entrenamiento"""
    source: LatentBatch
    target: Optional[LatentBatch]
    z_s2: Optional[torch.Tensor] = None
    z_hat_s2: Optional[torch.Tensor] = None


def check_variant_data(variant: Variant, source: MaskedDataset, target: MaskedDataset) -> None:
    """Compatibilidad entre la variante y el enmascarado de los datasets"""
    if not source.x2_observed:
        raise ConfigurationError("source samples must keep both components")
    if variant.uses_full_target and not target.x2_observed:
        raise ConfigurationError(
            f"variant '{variant.value}' needs the full target but its missing block is zero-filled"
        )
    if variant == Variant.ADAPT_IMPUTE and source.mask.is_full:
        raise ConfigurationError("adapt_impute requires a mask with a nonempty missing block")


def source_latents(bundle: ComponentBundle, variant: Variant, batch: MaskedBatch) -> LatentBatch:
    """Codificador de la fuente para clasificación (L3) y alineación"""
    if variant.family == "ignore":
        return bundle.encode_observed_only(batch.x1)
    if variant.family == "impute":
        return bundle.encode_hat(batch.x1)
    return bundle.encode_full(batch)


def target_latents(bundle: ComponentBundle, variant: Variant, batch: MaskedBatch) -> LatentBatch:
    """Codificador del objetivo"""
    family = variant.family
    if family == "ignore":
        return bundle.encode_observed_only(batch.x1)
    if family == "impute":
        return bundle.encode_hat(batch.x1)
    if family == "zero":
        return bundle.encode_zero(batch.x1)
    return bundle.encode_full(batch)


def pretrain_latents(bundle: ComponentBundle, variant: Variant, batch: MaskedBatch) -> LatentBatch:
    """Preentrenamiento: z_S2 codificado en lugar de ẑ_S2"""
    if variant.family == "ignore":
        return bundle.encode_observed_only(batch.x1)
    return bundle.encode_full(batch)


def step_latents(bundle: ComponentBundle,
                 variant: Variant,
                 source_batch: MaskedBatch,
                 target_batch: Optional[MaskedBatch]) -> StepLatents:
    """
    Latentes de un par de lotes; target_batch en None omite el objetivo
    (sin pasada por g1 ni actualización de BatchNorm)
    """
    src = source_latents(bundle, variant, source_batch)
    tgt = target_latents(bundle, variant, target_batch) if target_batch is not None else None
    if variant == Variant.ADAPT_IMPUTE:
        z_s2 = bundle.encode_missing(source_batch.x2)
        return StepLatents(src, tgt, z_s2=z_s2, z_hat_s2=src.z2)
    return StepLatents(src, tgt)


def inference_latents(bundle: ComponentBundle, variant: Variant, batch: MaskedBatch) -> LatentBatch:
    """Latentes de evaluación según el dominio del lote"""
    if batch.domain == Domain.SOURCE:
        return source_latents(bundle, variant, batch)
    return target_latents(bundle, variant, batch)


@torch.no_grad()
def predict_probabilities(bundle: ComponentBundle,
                          variant: Variant,
                          dataset: MaskedDataset,
                          batch_size: int = 1000,
                          device: str = "cpu") -> torch.Tensor:
    """Probabilidades por clase para todo el dataset en modo evaluación"""
    was_training = bundle.training
    bundle.eval()
    rows = []
    for indices in sequential_batches(len(dataset), batch_size):
        batch = dataset.batch(indices).to(device)
        rows.append(bundle.classify(inference_latents(bundle, variant, batch)).cpu())
    bundle.train(was_training)
    return torch.cat(rows) if rows else torch.zeros((0, dataset.num_classes))


@torch.no_grad()
def collect_latents(bundle: ComponentBundle,
                    variant: Variant,
                    dataset: MaskedDataset,
                    batch_size: int = 1000,
                    device: str = "cpu") -> torch.Tensor:
    """Entrada de D1 (ẑ) para todo el dataset en modo evaluación"""
    was_training = bundle.training
    bundle.eval()
    rows = []
    for indices in sequential_batches(len(dataset), batch_size):
        batch = dataset.batch(indices).to(device)
        rows.append(bundle.domain_input(inference_latents(bundle, variant, batch)).cpu())
    bundle.train(was_training)
    return torch.cat(rows)
