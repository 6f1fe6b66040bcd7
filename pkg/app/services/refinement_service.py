"""
RefinementService - Autoentrenamiento con pseudo-etiquetas (CEM discriminante + entropía)
"""
import math
import time
from typing import Callable, Dict, Optional

import torch

from app.core.logger import get_logger, log_epoch_metrics, log_run_event
from app.models.data import MaskedDataset
from app.models.networks import ComponentBundle
from app.models.training import (
    EntropyMode, PseudoLabelSet, RefineConfig, RunRecord, RunStatus, Variant,
)
from app.services.batching import ShuffledBatchSampler
from app.services.encoding import predict_probabilities, source_latents, target_latents
from app.services.evaluation_service import accuracy
from app.services.losses import classification_loss, clamped_log
from app.services.training_service import TrainingData, TrainingService, get_training_service

logger = get_logger("refinement_service")

PseudoLabelExporter = Callable[[int, PseudoLabelSet], None]

# g1, g2 y r forman ĝ; los discriminadores quedan congelados
REFINED_COMPONENTS = ["g1", "g2", "r", "f"]


def select_pseudo_labels(probabilities: torch.Tensor, ids: torch.Tensor,
                         threshold: float = 0.95) -> PseudoLabelSet:
    """
    Muestras con max_k h_k(x) >= τ y su argmax; el conjunto vacío es válido

    Args:
        probabilities: filas (N, K) del clasificador congelado
        ids: identificadores estables de las N muestras
    """
    confidences, labels = probabilities.max(dim=1)
    positions = torch.nonzero(confidences >= threshold, as_tuple=False).flatten()
    return PseudoLabelSet(
        positions=positions,
        ids=ids[positions],
        labels=labels[positions],
        confidences=confidences[positions],
        threshold=threshold,
    )


def entropy(probabilities: torch.Tensor) -> torch.Tensor:
    """-Σ_k h_k log h_k por muestra, en [0, ln K]"""
    return -(probabilities * clamped_log(probabilities)).sum(dim=1)


def refinement_loss(source_probs: torch.Tensor,
                    source_labels: torch.Tensor,
                    pseudo_probs: torch.Tensor,
                    pseudo_labels: torch.Tensor,
                    rest_probs: torch.Tensor,
                    entropy_weight: float,
                    mode: EntropyMode = EntropyMode.MINIMIZE) -> torch.Tensor:
    """
    CE sobre S ∪ T^pl con etiquetas y pseudo-etiquetas más λ por el término
    de entropía sobre T \\ T^pl

    mode=minimize suma +λ·H; mode=literal suma +λ·Σ h log h (= -λ·H)
    """
    probs = torch.cat([source_probs, pseudo_probs], dim=0)
    labels = torch.cat([source_labels.long(), pseudo_labels.long()], dim=0)
    loss = classification_loss(probs, labels)
    if entropy_weight > 0 and rest_probs.shape[0] > 0:
        sign = 1.0 if mode == EntropyMode.MINIMIZE else -1.0
        loss = loss + sign * entropy_weight * entropy(rest_probs).mean()
    return loss


class RefinementService:
    """
    Servicio de refinamiento
    Mismo contrato de exclusividad sobre el bundle que el entrenamiento
    """

    def __init__(self, training_service: Optional[TrainingService] = None):
        self.training_service = training_service or get_training_service()

    @property
    def device(self) -> str:
        return self.training_service.device

    def pseudo_labels(self, bundle: ComponentBundle, variant: Variant, target: MaskedDataset,
                      threshold: float = 0.95, batch_size: int = 1000) -> PseudoLabelSet:
        """Selección determinista con el bundle en modo evaluación"""
        probs = predict_probabilities(bundle, variant, target, batch_size, self.device)
        return select_pseudo_labels(probs, target.ids, threshold)

    def _optimizer(self, bundle: ComponentBundle, config: RefineConfig) -> torch.optim.Adam:
        params = [p for name in REFINED_COMPONENTS for p in getattr(bundle, name).parameters()]
        return torch.optim.Adam(params, lr=config.lr_i, betas=tuple(config.adam_betas))

    def refine(self, bundle: ComponentBundle, data: TrainingData, config: RefineConfig,
               run_id: str, export: Optional[PseudoLabelExporter] = None) -> RunRecord:
        """
        Refinamiento: pseudo-etiquetas reseleccionadas en cada época y un paso
        por par de lotes sobre CE(S ∪ T^pl) + λ·entropía(T \\ T^pl)

        Args:
            bundle: modelo entrenado (adapt_impute o adapt_full)
            data: conjuntos de la corrida base
            config: épocas, lr_i ya dividido, λ, τ y modo de entropía
            run_id: identificador de la corrida de refinamiento
            export: callback opcional para persistir cada PseudoLabelSet

        Returns:
            RunRecord con métricas por época (splits refine, source_val, target_test)
        """
        start_time = time.time()
        torch.manual_seed(config.seed)
        bundle.to(self.device)
        record = RunRecord(run_id=run_id, seed=config.seed, config=config.model_dump(mode="json"))
        record.metadata["entropy_mode"] = config.entropy_mode.value
        if config.entropy_mode == EntropyMode.LITERAL:
            record.metadata["entropy_note"] = "literal sign maximizes prediction entropy"

        source, target = data.source_train, data.target_train
        batches = config.batches_per_epoch or max(1, len(source) // config.batch_size)
        source_sampler = self.training_service.source_sampler(source, config, config.seed, batches)
        target_sampler = ShuffledBatchSampler(len(target), config.batch_size, config.seed + 1,
                                              batches_per_epoch=batches)
        optimizer = self._optimizer(bundle, config)

        log_run_event("refinement_started", run_id, epochs=config.epochs,
                      threshold=config.threshold, entropy_weight=config.entropy_weight,
                      entropy_mode=config.entropy_mode.value)

        empty_epochs = 0
        for epoch in range(config.epochs):
            selected = self.pseudo_labels(bundle, config.variant, target, config.threshold,
                                          config.eval_batch_size)
            if export is not None:
                export(epoch, selected)
            if selected.is_empty:
                empty_epochs += 1

            # etiqueta por posición; -1 fuera de T^pl
            assigned = torch.full((len(target),), -1, dtype=torch.long)
            assigned[selected.positions] = selected.labels.long()

            bundle.train()
            losses = []
            for source_idx, target_idx in zip(source_sampler, target_sampler):
                source_batch = source.batch(source_idx).to(self.device)
                target_batch = target.batch(target_idx).to(self.device)
                batch_labels = assigned[torch.as_tensor(target_idx, dtype=torch.long)].to(self.device)

                source_probs = bundle.classify(source_latents(bundle, config.variant, source_batch))
                target_probs = bundle.classify(target_latents(bundle, config.variant, target_batch))
                in_pl = batch_labels >= 0
                loss = refinement_loss(source_probs, source_batch.labels,
                                       target_probs[in_pl], batch_labels[in_pl],
                                       target_probs[~in_pl], config.entropy_weight, config.entropy_mode)
                if not torch.isfinite(loss):
                    record.status = RunStatus.DIVERGED
                    record.diagnostic = {"error": "non-finite refinement loss", "epoch": epoch}
                    record.final_checkpoint = bundle.to_checkpoint(config.seed, {"diverged": True})
                    log_run_event("refinement_diverged", run_id, success=False, epoch=epoch)
                    return record
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                losses.append(float(loss.item()))

            epoch_metrics: Dict[str, float] = {
                "refine_loss": sum(losses) / len(losses) if losses else math.nan,
                "pseudo_label_count": float(len(selected)),
            }
            if data.target_train_labels is not None and not selected.is_empty:
                epoch_metrics["pseudo_label_accuracy"] = accuracy(
                    selected.labels, data.target_train_labels[selected.positions]
                )
            record.add_metrics(epoch, "refine", epoch_metrics)
            eval_metrics = self.training_service.evaluate(bundle, data, config, record, epoch)
            log_epoch_metrics(run_id, epoch, "refine", {**epoch_metrics, **eval_metrics})

        if config.epochs and empty_epochs == config.epochs:
            record.metadata["warnings"] = ["pseudo-label set empty in every epoch; entropy-only refinement"]
            logger.warning("Empty pseudo-label set in every epoch", run_id=run_id,
                           threshold=config.threshold)

        record.best_epoch = config.epochs - 1 if config.epochs else None
        record.final_checkpoint = bundle.to_checkpoint(config.seed, {"refined": True})
        record.best_checkpoint = record.final_checkpoint
        record.summary = self.training_service.summarize(record)
        elapsed_ms = int((time.time() - start_time) * 1000)
        log_run_event("refinement_completed", run_id, elapsed_ms=elapsed_ms, **record.summary)
        return record


# Instancia por defecto
_refinement_service = None

def get_refinement_service() -> RefinementService:
    """Factory function para obtener instancia de RefinementService"""
    global _refinement_service
    if _refinement_service is None:
        _refinement_service = RefinementService()
    return _refinement_service
