"""
TrainingService - Preentrenamiento, backends ADV y OT, y líneas base
"""
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Union

import torch

from app.core.config import get_settings
from app.core.logger import get_logger, log_epoch_metrics, log_run_event
from app.models.data import MaskedDataset
from app.models.networks import ComponentBundle
from app.models.training import (
    Backend, LossReport, LossWeights, RefineConfig, RunRecord, RunStatus, TrainConfig, Variant,
)
from app.services import ConfigurationError, TrainingDivergedError
from app.services.batching import ShuffledBatchSampler, balanced_source_batches
from app.services.encoding import (
    check_variant_data, pretrain_latents, predict_probabilities, step_latents,
)
from app.services.evaluation_service import accuracy, cross_entropy
from app.services.losses import (
    adversarial_log_likelihood, build_report, classification_loss, discriminator_accuracy,
    discriminator_outputs, imputation_mse_loss, minimax_objective,
)
from app.services.schedules import apply_learning_rates, param_group, progress, schedule_state
from app.services.transport import alternate_step

logger = get_logger("training_service")


@dataclass
class TrainingData:
    """Conjuntos de una corrida; el objetivo de entrenamiento no lleva etiquetas"""
    source_train: MaskedDataset
    source_val: MaskedDataset
    target_train: MaskedDataset
    target_test: Optional[MaskedDataset] = None
    # solo para medir la exactitud de las pseudo-etiquetas
    target_train_labels: Optional[torch.Tensor] = None


class TrainingService:
    """
    Servicio de entrenamiento
    Un servicio es dueño exclusivo del bundle mientras entrena
    """

    def __init__(self, device: Optional[str] = None):
        self.device = device or get_settings().device

    # ------------------------------------------------------------ optimizers

    def _optimizer(self, bundle: ComponentBundle, config: TrainConfig,
                   components: List[str], lr_i: Optional[float] = None) -> torch.optim.Adam:
        """Adam con un grupo por componente y su propio factor de decaimiento"""
        lr_i = lr_i or config.lr_i
        groups = []
        for name in components:
            fast = config.fast_decay_imputation and name in ("D2", "r")
            decay = config.fast_decay_factor if fast else config.decay_factor
            groups.append(param_group(getattr(bundle, name).parameters(), lr_i, decay, name))
        return torch.optim.Adam(groups, lr=lr_i, betas=tuple(config.adam_betas))

    def source_sampler(self, source: MaskedDataset, config: TrainConfig, seed: int, batches: int):
        if config.balanced_source:
            return balanced_source_batches(source.labels, config.batch_size, seed,
                                           num_classes=source.num_classes, batches_per_epoch=batches)
        return ShuffledBatchSampler(len(source), config.batch_size, seed, batches_per_epoch=batches)

    def _batches_per_epoch(self, source: MaskedDataset, config: TrainConfig) -> int:
        return config.batches_per_epoch or max(1, len(source) // config.batch_size)

    # ------------------------------------------------------------- pretrain

    def pretrain_init(self, bundle: ComponentBundle, source: MaskedDataset,
                      config: TrainConfig, epochs: Optional[int] = None) -> ComponentBundle:
        """
        Inicializa f, g1, g2 minimizando L3 con z_S2 codificado en lugar de ẑ_S2.
        r, D1 y D2 no se tocan.

        Args:
            bundle: componentes a inicializar
            source: fuente etiquetada
            config: configuración (variante, lote, lr_i)
            epochs: épocas de preentrenamiento (por defecto config.init_epochs)

        Returns:
            El mismo bundle, actualizado
        """
        epochs = config.init_epochs if epochs is None else epochs
        if epochs == 0:
            return bundle
        if source.labels is None:
            raise ConfigurationError("pretraining needs source labels")

        components = ["g1", "f"] if config.variant.family == "ignore" else ["g1", "g2", "f"]
        optimizer = self._optimizer(bundle, config, components)
        batches = self._batches_per_epoch(source, config)
        sampler = self.source_sampler(source, config, config.seed + 7919, batches)
        bundle.to(self.device).train()

        logger.info("Pretraining started", epochs=epochs, variant=config.variant.value,
                    components=components)
        for epoch in range(epochs):
            for indices in sampler:
                batch = source.batch(indices).to(self.device)
                latent = pretrain_latents(bundle, config.variant, batch)
                loss = classification_loss(bundle.classify(latent), batch.labels)
                if not torch.isfinite(loss):
                    raise TrainingDivergedError("non-finite loss during pretraining",
                                                diagnostic={"phase": "pretrain", "epoch": epoch})
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
            logger.debug("Pretraining epoch finished", epoch=epoch, loss=float(loss.item()))
        logger.info("Pretraining completed", epochs=epochs)
        return bundle

    # ------------------------------------------------------------------ ADV

    def _adv_step(self, bundle: ComponentBundle, optimizer, config: TrainConfig,
                  source_batch, target_batch, ramp: float) -> LossReport:
        weights = config.weights.model_copy(update={"lambda_mse": config.effective_lambda_mse})
        variant = config.variant
        adapt = variant.adapts and weights.lambda1 > 0

        latents = step_latents(bundle, variant, source_batch, target_batch if adapt else None)
        l3 = classification_loss(bundle.classify(latents.source), source_batch.labels)

        l1 = d1_acc = None
        if adapt:
            p_s, p_t = discriminator_outputs(bundle.D1, bundle.domain_input(latents.source),
                                             bundle.domain_input(latents.target), grl_scale=ramp)
            l1 = adversarial_log_likelihood(p_s, p_t)
            d1_acc = discriminator_accuracy(p_s, p_t)

        l_adv = l_mse = d2_acc = None
        if latents.z_s2 is not None and weights.lambda2 > 0:
            if config.uses_adversarial_imputation:
                p_gen, p_enc = discriminator_outputs(bundle.D2, latents.z_hat_s2, latents.z_s2,
                                                     grl_scale=ramp)
                l_adv = adversarial_log_likelihood(p_gen, p_enc)
                d2_acc = discriminator_accuracy(p_gen, p_enc)
            if weights.lambda_mse > 0:
                l_mse = imputation_mse_loss(latents.z_hat_s2, latents.z_s2)

        objective = minimax_objective(weights, ramp, l3, l1, l_adv, l_mse)
        report = build_report(
            weights,
            l1=float(l1.item()) if l1 is not None else 0.0,
            l_adv=float(l_adv.item()) if l_adv is not None else 0.0,
            l_mse=float(l_mse.item()) if l_mse is not None else 0.0,
            l3=float(l3.item()),
            d1_accuracy=d1_acc,
            d2_accuracy=d2_acc,
        )
        if not torch.isfinite(objective):
            raise TrainingDivergedError("non-finite ADV objective", diagnostic=report.model_dump())

        optimizer.zero_grad(set_to_none=True)
        objective.backward()
        optimizer.step()
        return report

    def train_adv(self, bundle: ComponentBundle, data: TrainingData,
                  config: TrainConfig, run_id: str) -> RunRecord:
        """
        Backend adversarial: un único backward por par de lotes; la GRL con
        escala s(p) realiza el ascenso de D1, D2 y el descenso de g1, g2, r, f
        """
        return self._run(bundle, data, config, run_id, backend=Backend.ADV)

    def train_ot(self, bundle: ComponentBundle, data: TrainingData,
                 config: TrainConfig, run_id: str) -> RunRecord:
        """
        Backend OT: calentamiento de L3 por ot_warmup_epochs y luego pasos
        alternados con λ1, λ2 rampados según s(p)
        """
        return self._run(bundle, data, config, run_id, backend=Backend.OT)

    def train_baseline(self, bundle: ComponentBundle, data: TrainingData,
                       config: TrainConfig, run_id: str) -> RunRecord:
        """Líneas base full / zero / ignore, con o sin adaptación"""
        if config.variant == Variant.ADAPT_IMPUTE:
            raise ConfigurationError("train_baseline does not train adapt_impute")
        return self._run(bundle, data, config, run_id, backend=config.backend)

    def train(self, bundle: ComponentBundle, data: TrainingData,
              config: TrainConfig, run_id: str) -> RunRecord:
        """Preentrena si corresponde y despacha según backend y variante"""
        check_variant_data(config.variant, data.source_train, data.target_train)
        try:
            self.pretrain_init(bundle, data.source_train, config)
        except TrainingDivergedError as e:
            return self._diverged_record(bundle, config, run_id, e, RunRecord(run_id=run_id, seed=config.seed))
        if config.variant != Variant.ADAPT_IMPUTE:
            return self.train_baseline(bundle, data, config, run_id)
        if config.backend == Backend.OT:
            return self.train_ot(bundle, data, config, run_id)
        return self.train_adv(bundle, data, config, run_id)

    # ------------------------------------------------------------------ loop

    def _run(self, bundle: ComponentBundle, data: TrainingData, config: TrainConfig,
             run_id: str, backend: Backend) -> RunRecord:
        check_variant_data(config.variant, data.source_train, data.target_train)
        start_time = time.time()
        torch.manual_seed(config.seed)
        bundle.to(self.device).train()

        record = RunRecord(run_id=run_id, seed=config.seed, config=config.model_dump(mode="json"))
        batches = self._batches_per_epoch(data.source_train, config)
        source_sampler = self.source_sampler(data.source_train, config, config.seed, batches)
        target_sampler = ShuffledBatchSampler(len(data.target_train), config.batch_size,
                                              config.seed + 1, batches_per_epoch=batches)

        warmup = config.ot_warmup_epochs if backend == Backend.OT else 0
        warmup = min(warmup, config.epochs)
        adapt_epochs = config.epochs - warmup
        total_batches = adapt_epochs * batches

        trainable = ["g1", "g2", "r", "f", "D1", "D2"] if backend == Backend.ADV else ["g1", "g2", "r", "f"]
        optimizer = self._optimizer(bundle, config, trainable)

        log_run_event("training_started", run_id, backend=backend.value,
                      variant=config.variant.value, epochs=config.epochs,
                      batches_per_epoch=batches, warmup_epochs=warmup)

        best_val = -1.0
        step = 0
        for epoch in range(config.epochs):
            reports: List[LossReport] = []
            warming_up = epoch < warmup
            if backend == Backend.OT and epoch == warmup and config.variant != Variant.ADAPT_IMPUTE:
                # los modelos OT sin imputación arrancan la adaptación con lr_i / 2
                for group in optimizer.param_groups:
                    group["lr_i"] = config.lr_i / 2
            try:
                for source_idx, target_idx in zip(source_sampler, target_sampler):
                    source_batch = data.source_train.batch(source_idx).to(self.device)
                    target_batch = data.target_train.batch(target_idx).to(self.device)
                    if warming_up:
                        reports.append(self._warmup_step(bundle, optimizer, config, source_batch))
                        continue

                    state = schedule_state(progress(step, total_batches), config.lr_i, config.decay_factor)
                    apply_learning_rates(optimizer, state.p)
                    ramp = config.weights.ramp(state.grad_scale)
                    if backend == Backend.ADV:
                        report = self._adv_step(bundle, optimizer, config, source_batch, target_batch, ramp)
                    else:
                        # solo λ1 y λ2 llevan la rampa; λ_MSE queda como en la configuración
                        weights = self._ramped(config.weights, ramp)
                        report = alternate_step(bundle, optimizer, source_batch, target_batch,
                                                weights, config.variant,
                                                lambda_mse=config.effective_lambda_mse)
                    reports.append(report)
                    step += 1
            except TrainingDivergedError as e:
                e.diagnostic.update({"epoch": epoch, "step": step})
                return self._diverged_record(bundle, config, run_id, e, record)

            train_metrics = self._average(reports)
            record.add_metrics(epoch, "train", train_metrics)
            eval_metrics = self.evaluate(bundle, data, config, record, epoch)
            log_epoch_metrics(run_id, epoch, "all", {**train_metrics, **eval_metrics})

            val_acc = eval_metrics.get("source_val_accuracy", -1.0)
            if val_acc > best_val:
                best_val = val_acc
                record.best_epoch = epoch
                record.best_checkpoint = bundle.to_checkpoint(config.seed, {"epoch": epoch})

        record.final_checkpoint = bundle.to_checkpoint(config.seed, {"epoch": config.epochs - 1})
        if record.best_checkpoint is None:
            record.best_checkpoint = record.final_checkpoint
        record.summary = self.summarize(record)
        elapsed_ms = int((time.time() - start_time) * 1000)
        log_run_event("training_completed", run_id, elapsed_ms=elapsed_ms, **record.summary)
        return record

    def _warmup_step(self, bundle: ComponentBundle, optimizer, config: TrainConfig, source_batch) -> LossReport:
        """Paso de solo L3 con el codificador de la variante"""
        latents = step_latents(bundle, config.variant, source_batch, None)
        l3 = classification_loss(bundle.classify(latents.source), source_batch.labels)
        if not torch.isfinite(l3):
            raise TrainingDivergedError("non-finite loss during warmup", diagnostic={"L3": float(l3.item())})
        optimizer.zero_grad(set_to_none=True)
        l3.backward()
        optimizer.step()
        return build_report(config.weights, 0.0, 0.0, 0.0, float(l3.item()))

    @staticmethod
    def _ramped(weights: LossWeights, ramp: float) -> LossWeights:
        return weights.model_copy(update={"lambda1": weights.lambda1 * ramp,
                                          "lambda2": weights.lambda2 * ramp})

    @staticmethod
    def _average(reports: List[LossReport]) -> Dict[str, float]:
        if not reports:
            return {}
        totals: Dict[str, List[float]] = {}
        for report in reports:
            for name, value in report.as_metrics().items():
                totals.setdefault(name, []).append(value)
        return {name: sum(values) / len(values) for name, values in totals.items()}

    def evaluate(self, bundle: ComponentBundle, data: TrainingData,
                 config: Union[TrainConfig, RefineConfig], record: RunRecord,
                 epoch: int) -> Dict[str, float]:
        metrics: Dict[str, float] = {}
        splits = [("source_val", data.source_val), ("target_test", data.target_test)]
        for split, dataset in splits:
            if dataset is None or dataset.labels is None or len(dataset) == 0:
                continue
            probs = predict_probabilities(bundle, config.variant, dataset,
                                          config.eval_batch_size, self.device)
            values = {
                "accuracy": accuracy(probs.argmax(dim=1), dataset.labels),
                "cross_entropy": cross_entropy(probs, dataset.labels),
            }
            record.add_metrics(epoch, split, values)
            metrics.update({f"{split}_{k}": v for k, v in values.items()})
        return metrics

    @staticmethod
    def summarize(record: RunRecord) -> Dict[str, float]:
        summary: Dict[str, float] = {}
        target_acc = record.metric_series("target_test", "accuracy")
        target_ce = record.metric_series("target_test", "cross_entropy")
        source_acc = record.metric_series("source_val", "accuracy")
        if target_acc:
            summary["final_target_accuracy"] = target_acc[-1]
            summary["best_target_accuracy"] = max(target_acc)
            if record.best_epoch is not None and record.best_epoch < len(target_acc):
                summary["selected_target_accuracy"] = target_acc[record.best_epoch]
        if target_ce:
            summary["final_target_cross_entropy"] = target_ce[-1]
        if source_acc:
            summary["final_source_accuracy"] = source_acc[-1]
            summary["best_source_accuracy"] = max(source_acc)
        return summary

    def _diverged_record(self, bundle: ComponentBundle, config: TrainConfig, run_id: str,
                         error: TrainingDivergedError, record: RunRecord) -> RunRecord:
        record.status = RunStatus.DIVERGED
        record.diagnostic = {"error": str(error), **error.diagnostic}
        record.final_checkpoint = bundle.to_checkpoint(config.seed, {"diverged": True})
        logger.error("Training diverged", run_id=run_id, error=str(error), **{
            k: v for k, v in error.diagnostic.items() if isinstance(v, (int, float, str))
        })
        log_run_event("training_diverged", run_id, success=False)
        return record


# Instancia por defecto
_training_service = None

def get_training_service() -> TrainingService:
    """Factory function para obtener instancia de TrainingService"""
    global _training_service
    if _training_service is None or _training_service.device != get_settings().device:
        _training_service = TrainingService()
    return _training_service
