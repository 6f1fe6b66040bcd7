"""
ExperimentService - Corridas reproducibles, barridos de parche, ablaciones, reportes y diagnósticos
"""
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
import torch

from app.core.config import get_settings
from app.core.logger import get_logger, log_run_event
from app.core.startup import initialize, seed_everything
from app.models.data import DatasetName, DatasetSpec, Domain, FixedMask, MaskedDataset, Split
from app.models.networks import ClassifierInput, ComponentBundle, build_architecture, build_bundle
from app.models.training import (
    DiagnosticsReport, ExperimentConfig, ExperimentPlan, ImputationMode, RunRecord, Variant,
)
from app.repositories.dataset_repository import get_dataset_repository, resolve_channels
from app.repositories.run_repository import RunRepository, get_run_repository
from app.services import ConfigurationError
from app.services.evaluation_service import EvaluationService, aggregate_frame, get_evaluation_service
from app.services.masking import apply_mask, make_column_mask, make_horizontal_patch_mask
from app.services.refinement_service import RefinementService
from app.services.synthetic import ShiftParams, SyntheticOracle, make_synthetic_multimodal
from app.services.training_service import TrainingData, TrainingService

logger = get_logger("experiment_service")

PATCH_FRACTIONS = [0.3, 0.4, 0.5, 0.6, 0.7]
MSE_SWEEP = [1.0, 0.1, 0.01, 0.0075, 0.005, 0.001]
SUMMARY_METRIC = "final_target_accuracy"
# las muestras de test sintéticas usan otra semilla de muestreo con la misma estructura
SYNTHETIC_TEST_OFFSET = 1000
SUMMARY_KEYS = ["pair", "patch_fraction", "variant", "backend", "refined", "metric_name"]
RUN_ROW_COLUMNS = SUMMARY_KEYS + ["imputation_mode", "lambda1", "lambda_mse", "value"]
# el mejor se compara entre variantes y backends de una misma celda
BEST_GROUP = ["pair", "patch_fraction", "refined", "metric_name"]
LOWER_IS_BETTER = ("cross_entropy", "error", "risk")


def higher_is_better(metric_name: str) -> bool:
    return not any(token in metric_name for token in LOWER_IS_BETTER)


def mark_best(summary: pd.DataFrame) -> pd.DataFrame:
    """
    Agrega `best` (media óptima de su celda, empates incluidos) y `display`
    ("media ± std", en negrita markdown si es la mejor)
    """
    summary = summary.copy()
    if summary.empty:
        summary["best"] = pd.Series(dtype=bool)
        summary["display"] = pd.Series(dtype=str)
        return summary
    oriented = summary["mean"].where(summary["metric_name"].map(higher_is_better), -summary["mean"])
    cell_best = oriented.groupby([summary[key] for key in BEST_GROUP], dropna=False).transform("max")
    summary["best"] = oriented == cell_best
    text = summary["mean"].map("{:.4f}".format) + " ± " + summary["std"].map("{:.4f}".format)
    summary["display"] = text.where(~summary["best"], "**" + text + "**")
    return summary


def _aggregate(frame: pd.DataFrame, keys: List[str]) -> pd.DataFrame:
    if frame.empty:
        return pd.DataFrame(columns=keys + ["mean", "std", "n"])
    return aggregate_frame(frame, keys)


@dataclass
class ExperimentReport:
    """Tablas de un reporte; las vistas las escriben como CSV"""
    metrics: pd.DataFrame
    summary: pd.DataFrame
    per_metric: Dict[str, pd.DataFrame]
    patch_sweep_plot: pd.DataFrame
    ablation_plot: pd.DataFrame


@dataclass
class ExperimentData:
    """Datos de una corrida y el oráculo cuando el generador es sintético"""
    training: TrainingData
    mask: FixedMask
    oracle: Optional[SyntheticOracle] = None
    bayes_target_accuracy: Optional[float] = None


def make_run_id(config: ExperimentConfig, seed: int) -> str:
    """{source-target}_{variant}_{backend}_{seed}_{timestamp}"""
    stamp = datetime.now().strftime("%Y%m%d%H%M%S%f")
    return f"{config.pair_name}_{config.variant.value}_{config.backend.value}_{seed}_{stamp}"


def _split_validation(dataset: MaskedDataset, fraction: float, seed: int) -> Tuple[MaskedDataset, MaskedDataset]:
    generator = torch.Generator().manual_seed(seed)
    order = torch.randperm(len(dataset), generator=generator)
    n_val = max(1, int(round(fraction * len(dataset))))
    return dataset.subset(order[n_val:]), dataset.subset(order[:n_val])


def _run_worker(config_data: Dict, seed: int, settings_overrides: Dict) -> Dict:
    """Punto de entrada de un proceso hijo: una corrida independiente"""
    initialize(**settings_overrides)
    service = ExperimentService()
    record = service.run(ExperimentConfig(**config_data), seed)
    return record.model_dump(mode="json")


class ExperimentService:
    """
    Servicio de experimentos
    Cada corrida es independiente; las corridas de un plan pueden ir en procesos separados
    """

    def __init__(self,
                 run_repository: Optional[RunRepository] = None,
                 training_service: Optional[TrainingService] = None,
                 evaluation_service: Optional[EvaluationService] = None):
        self.runs = run_repository or get_run_repository()
        self.training = training_service or TrainingService()
        self.refinement = RefinementService(self.training)
        self.evaluation = evaluation_service or get_evaluation_service()

    # ------------------------------------------------------------------ datos

    def build_data(self, config: ExperimentConfig, seed: int) -> ExperimentData:
        """
        Construye fuente (entrenamiento y validación), objetivo sin etiquetas y
        test del objetivo según la configuración

        Args:
            config: experimento
            seed: semilla de la corrida (submuestreo, validación y sintéticos)

        Returns:
            ExperimentData
        """
        oracle = None
        if config.is_synthetic:
            source_raw, target_raw, target_test_raw, oracle = self._synthetic_raw(config, seed)
            mask = make_column_mask(source_raw.sample_shape[0], fraction=config.patch_fraction)
        elif config.is_tabular:
            source_raw, target_raw, target_test_raw, mask = self._tabular_raw(config, seed)
        else:
            source_raw, target_raw, target_test_raw = self._digits_raw(config, seed)
            mask = make_horizontal_patch_mask(source_raw.sample_shape, config.patch_fraction)

        masked_domains = () if config.variant.uses_full_target else (Domain.TARGET,)
        source = apply_mask(source_raw, mask, masked_domains)
        target = apply_mask(target_raw, mask, masked_domains)
        target_test = apply_mask(target_test_raw, mask, masked_domains) if target_test_raw is not None else None

        source_train, source_val = _split_validation(source, config.validation_fraction, seed)
        training = TrainingData(
            source_train=source_train,
            source_val=source_val,
            target_train=target.without_labels(),
            target_test=target_test,
            target_train_labels=target.labels,
        )
        logger.info("Experiment data built",
                    pair=config.pair_name,
                    variant=config.variant.value,
                    source_train=len(source_train),
                    source_val=len(source_val),
                    target_train=len(target),
                    target_test=len(target_test) if target_test is not None else 0,
                    missing=mask.n_missing)
        bayes = None
        if oracle is not None and target_test_raw is not None:
            bayes = oracle.bayes_accuracy(target_test_raw)
        return ExperimentData(training=training, mask=mask, oracle=oracle, bayes_target_accuracy=bayes)

    def _synthetic_raw(self, config: ExperimentConfig, seed: int):
        shift = ShiftParams(
            scale=config.shift_scale,
            rotation=config.shift_rotation,
            offset=(config.shift_offset_x, config.shift_offset_y),
            target_class_prior=config.prior_vector(),
        )
        kwargs = dict(num_classes=config.synthetic_classes, shift_params=shift,
                      obs_dim=config.synthetic_obs_dim, miss_dim=config.synthetic_miss_dim)
        source, target, oracle = make_synthetic_multimodal(config.synthetic_n, seed=seed, **kwargs)
        _, target_test, _ = make_synthetic_multimodal(config.synthetic_n, seed=seed + SYNTHETIC_TEST_OFFSET,
                                                      **kwargs)
        return source, target, target_test, oracle

    def _tabular_raw(self, config: ExperimentConfig, seed: int):
        repository = get_dataset_repository()

        def spec(path: str, subsample: Optional[int]) -> DatasetSpec:
            return DatasetSpec(name=DatasetName.TABULAR, path=path, mask_path=config.mask_path,
                               subsample=subsample, seed=seed)

        source, mask, _ = repository.load_tabular(spec(config.source_path, config.source_subsample), Domain.SOURCE)
        target, target_mask, _ = repository.load_tabular(spec(config.target_path, config.target_subsample),
                                                         Domain.TARGET)
        if target_mask != mask:
            raise ConfigurationError("source and target tabular masks differ")
        target_test = None
        if config.target_test_path:
            target_test, _, _ = repository.load_tabular(spec(config.target_test_path, config.test_subsample),
                                                        Domain.TARGET)
        return source, target, target_test, mask

    def _digits_raw(self, config: ExperimentConfig, seed: int):
        repository = get_dataset_repository()
        channels = resolve_channels(config.source, config.target)
        source = repository.load_digits(
            DatasetSpec(name=config.source, split=Split.TRAIN, subsample=config.source_subsample,
                        seed=seed, channels=channels), Domain.SOURCE)
        target = repository.load_digits(
            DatasetSpec(name=config.target, split=Split.TRAIN, subsample=config.target_subsample,
                        seed=seed, channels=channels), Domain.TARGET)
        target_test = repository.load_digits(
            DatasetSpec(name=config.target, split=Split.TEST, subsample=config.test_subsample,
                        seed=seed, channels=channels), Domain.TARGET)
        return source, target, target_test

    def build_bundle(self, config: ExperimentConfig, data: ExperimentData, seed: int) -> ComponentBundle:
        classifier_input = (ClassifierInput.OBSERVED_ONLY if config.variant.family == "ignore"
                            else ClassifierInput.JOINT)
        spec = build_architecture(
            config.source, config.target,
            input_shape=data.mask.sample_shape,
            num_classes=data.training.source_train.num_classes,
            classifier_input=classifier_input,
            strong_discriminator=config.strong_discriminator,
            generator_extra_layer=config.generator_extra_layer,
            dropout=config.dropout,
            batchnorm_momentum=config.batchnorm_momentum,
        )
        return build_bundle(spec, data.mask, seed)

    # ---------------------------------------------------------------- corridas

    def run(self, config: ExperimentConfig, seed: Optional[int] = None) -> RunRecord:
        """
        Entrena, persiste y opcionalmente refina una corrida

        Returns:
            RunRecord de la corrida base (el refinado queda en su propio directorio)
        """
        seed = config.seed if seed is None else seed
        seed_everything(seed)
        data = self.build_data(config, seed)
        bundle = self.build_bundle(config, data, seed)
        run_id = make_run_id(config, seed)

        record = self.training.train(bundle, data.training, config.to_train_config(seed), run_id)
        record.metadata.update(self._metadata(config, data))
        self.runs.save_run(record, config.with_overrides(seed=seed))

        if config.refine and not record.diverged:
            self._refine(bundle, config, data, seed, f"{run_id}_refined")
        return record

    def _metadata(self, config: ExperimentConfig, data: ExperimentData) -> Dict:
        metadata = {
            "pair": config.pair_name,
            "variant": config.variant.value,
            "backend": config.backend.value,
            "patch_fraction": config.patch_fraction,
            "imputation_mode": config.imputation_mode.value,
            "lambda1": config.resolved_lambda1,
            "lambda_mse": config.resolved_lambda_mse,
            "mask": data.mask.block_descriptor,
        }
        if data.bayes_target_accuracy is not None:
            metadata["bayes_target_accuracy"] = data.bayes_target_accuracy
        return metadata

    def _refine(self, bundle: ComponentBundle, config: ExperimentConfig, data: ExperimentData,
                seed: int, run_id: str) -> RunRecord:
        refine_config = config.to_refine_config(seed)
        exporter = lambda epoch, selected: self.runs.save_pseudo_labels(run_id, epoch, selected)
        record = self.refinement.refine(bundle, data.training, refine_config, run_id, export=exporter)
        record.metadata.update({**self._metadata(config, data), "refined_from": run_id[:-len("_refined")]})
        self.runs.save_run(record, config.with_overrides(seed=seed))
        return record

    def refine_run(self, run_id: str, **overrides) -> RunRecord:
        """Refina una corrida guardada desde su mejor checkpoint"""
        base = self.runs.load_record(run_id)
        config = self.runs.load_config(run_id)
        if overrides:
            config = config.with_overrides(**{k: v for k, v in overrides.items() if v is not None})
        data = self.build_data(config, base.seed)
        bundle = self.runs.load_bundle(run_id, "best")
        return self._refine(bundle, config, data, base.seed, f"{run_id}_refined")

    def run_plan(self, plan: ExperimentPlan, jobs: int = 1) -> List[RunRecord]:
        """Corre todas las (configuración, semilla) del plan; jobs > 1 usa procesos separados"""
        start_time = time.time()
        pairs = plan.runs()
        log_run_event("plan_started", runs=len(pairs), jobs=jobs)
        if jobs <= 1:
            records = [self.run(config, seed) for config, seed in pairs]
        else:
            settings = get_settings()
            overrides = {"data_dir": settings.data_dir, "runs_dir": str(self.runs.runs_dir),
                         "device": settings.device, "log_level": settings.log_level,
                         "log_format": settings.log_format}
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(_run_worker, config.model_dump(mode="json"), seed, overrides)
                           for config, seed in pairs]
                records = [RunRecord(**future.result()) for future in futures]
        log_run_event("plan_completed", runs=len(records),
                      diverged=sum(r.diverged for r in records),
                      elapsed_ms=int((time.time() - start_time) * 1000))
        return records

    # --------------------------------------------------------------- barridos

    def sweep_patch(self, config: ExperimentConfig, fractions: Sequence[float] = PATCH_FRACTIONS,
                    variants: Optional[Sequence[Variant]] = None, n_seeds: Optional[int] = None,
                    jobs: int = 1) -> pd.DataFrame:
        """
        Exactitud final en el objetivo por fracción de parche y variante

        En fracción 0 cada variante se reemplaza por su contraparte con datos completos.

        Returns:
            DataFrame patch_fraction, variant, mean, std, n
        """
        plan, requested = self.sweep_plan(config, fractions, variants, n_seeds)
        records = self.run_plan(plan, jobs)

        rows = []
        for (cfg, _), record, variant in zip(plan.runs(), records, requested):
            rows.append({"patch_fraction": cfg.patch_fraction, "variant": variant.value,
                         "run_id": record.run_id,
                         "value": record.summary.get(SUMMARY_METRIC, float("nan"))})
        return aggregate_frame(pd.DataFrame(rows), ["patch_fraction", "variant"])

    def sweep_plan(self, config: ExperimentConfig, fractions: Sequence[float] = PATCH_FRACTIONS,
                   variants: Optional[Sequence[Variant]] = None,
                   n_seeds: Optional[int] = None) -> Tuple[ExperimentPlan, List[Variant]]:
        """
        Plan del barrido y la variante pedida (antes de colapsar en fracción 0)
        para cada corrida del plan; por defecto todas las variantes
        """
        variants = list(variants or list(Variant))
        configs, requested = [], []
        for fraction in fractions:
            for variant in variants:
                effective = variant.full_counterpart() if fraction == 0 else variant
                configs.append(config.with_overrides(patch_fraction=fraction, variant=effective))
                requested.append(variant)
        plan = ExperimentPlan(configs=configs, n_seeds=n_seeds or config.n_seeds,
                              output_root=str(self.runs.runs_dir))
        return plan, [variant for variant in requested for _ in range(plan.n_seeds)]

    @staticmethod
    def ablation_grid(config: ExperimentConfig, mse_sweep: bool = False) -> List[Tuple[str, ExperimentConfig]]:
        """
        (nombre, configuración) de la ablación:
        {mse, adv, adv+0.005mse, adv_mse} x {con L1, sin L1}, o el barrido de λ_MSE
        """
        base = config.with_overrides(variant=Variant.ADAPT_IMPUTE)
        if mse_sweep:
            return [(f"lambda_mse={value}", base.with_overrides(imputation_mode=ImputationMode.ADV_MSE,
                                                                lambda_mse=value))
                    for value in MSE_SWEEP]
        modes = [
            ("mse", {"imputation_mode": ImputationMode.MSE}),
            ("adv", {"imputation_mode": ImputationMode.ADV}),
            ("adv+0.005mse", {"imputation_mode": ImputationMode.ADV_MSE, "lambda_mse": 0.005}),
            ("adv_mse", {"imputation_mode": ImputationMode.ADV_MSE}),
        ]
        grid = []
        for name, overrides in modes:
            grid.append((f"{name}+L1", base.with_overrides(**overrides)))
            grid.append((f"{name}-L1", base.with_overrides(lambda1=0.0, **overrides)))
        return grid

    def ablate(self, config: ExperimentConfig, mse_sweep: bool = False,
               n_seeds: Optional[int] = None, jobs: int = 1) -> pd.DataFrame:
        """
        Returns:
            DataFrame ablation, mean, std, n sobre la exactitud final en el objetivo
        """
        grid = self.ablation_grid(config, mse_sweep)
        plan = ExperimentPlan(configs=[cfg for _, cfg in grid], n_seeds=n_seeds or config.n_seeds,
                              output_root=str(self.runs.runs_dir))
        records = self.run_plan(plan, jobs)
        names = [name for name, _ in grid for _ in range(plan.n_seeds)]
        rows = [{"ablation": name, "run_id": record.run_id,
                 "value": record.summary.get(SUMMARY_METRIC, float("nan"))}
                for name, record in zip(names, records)]
        frame = aggregate_frame(pd.DataFrame(rows), ["ablation"])
        order = {name: i for i, (name, _) in enumerate(grid)}
        return frame.sort_values("ablation", key=lambda s: s.map(order)).reset_index(drop=True)

    # ---------------------------------------------------------------- reportes

    def report(self, run_ids: Optional[List[str]] = None) -> "ExperimentReport":
        """
        Reporte agregado de corridas guardadas

        Returns:
            ExperimentReport con métricas largas, resumen con el mejor marcado,
            sub-tablas por métrica y datos para las curvas de parche y de ablación
        """
        run_ids = run_ids or self.runs.list_runs()
        metrics = self.runs.collect_metrics(run_ids)
        rows = []
        for run_id in run_ids:
            record = self.runs.load_record(run_id)
            meta = record.metadata
            for name, value in record.summary.items():
                rows.append({
                    "pair": meta.get("pair", ""),
                    "patch_fraction": meta.get("patch_fraction", float("nan")),
                    "variant": meta.get("variant", record.config.get("variant", "")),
                    "backend": meta.get("backend", record.config.get("backend", "")),
                    "refined": "refined_from" in meta,
                    "imputation_mode": meta.get("imputation_mode", ""),
                    "lambda1": meta.get("lambda1", float("nan")),
                    "lambda_mse": meta.get("lambda_mse", float("nan")),
                    "metric_name": name,
                    "value": value,
                })
        runs = pd.DataFrame(rows, columns=RUN_ROW_COLUMNS)
        if runs.empty:
            empty = pd.DataFrame(columns=SUMMARY_KEYS + ["mean", "std", "n", "best", "display"])
            return ExperimentReport(metrics=metrics, summary=empty, per_metric={},
                                    patch_sweep_plot=pd.DataFrame(), ablation_plot=pd.DataFrame())

        summary = mark_best(aggregate_frame(runs, SUMMARY_KEYS))
        per_metric = {name: group.drop(columns="metric_name").reset_index(drop=True)
                      for name, group in summary.groupby("metric_name", sort=True)}

        accuracy_runs = runs[(runs["metric_name"] == SUMMARY_METRIC) & ~runs["refined"]]
        patch_sweep = _aggregate(accuracy_runs, ["pair", "backend", "variant", "patch_fraction"])
        impute_runs = accuracy_runs[accuracy_runs["variant"] == Variant.ADAPT_IMPUTE.value].copy()
        impute_runs["with_l1"] = impute_runs["lambda1"] > 0
        ablation = _aggregate(impute_runs, ["pair", "imputation_mode", "lambda_mse", "with_l1"])
        return ExperimentReport(metrics=metrics, summary=summary, per_metric=per_metric,
                                patch_sweep_plot=patch_sweep, ablation_plot=ablation)

    def select_model(self, run_ids: List[str], seed: int = 0) -> Tuple[str, Dict[str, Dict[str, float]]]:
        """Selección no supervisada entre corridas que comparten datos (mismo par y fracción)"""
        candidates = []
        data = None
        for run_id in run_ids:
            record = self.runs.load_record(run_id)
            config = self.runs.load_config(run_id)
            if data is None:
                data = self.build_data(config, record.seed)
            candidates.append((run_id, self.runs.load_bundle(run_id, "best"), config.variant))
        return self.evaluation.select_model_iw(candidates, data.training.source_val,
                                               data.training.target_train, seed)

    def diagnose(self, run_id: str, which: str = "best") -> DiagnosticsReport:
        """Diagnósticos de la corrida; se guardan como diagnostics.json"""
        record = self.runs.load_record(run_id)
        config = self.runs.load_config(run_id)
        data = self.build_data(config, record.seed)
        bundle = self.runs.load_bundle(run_id, which)
        target = data.training.target_test
        if target is None:
            target = data.training.target_train
        labeler = None
        parent = record.metadata.get("refined_from")
        if parent and self.runs.exists(parent):
            # la corrida previa al refinamiento etiqueta el objetivo
            labeler = (self.runs.load_bundle(parent, "best"), self.runs.load_config(parent).variant)
        report = self.evaluation.diagnose(bundle, config.variant, data.training.source_val,
                                          target, seed=record.seed, threshold=config.refine_threshold,
                                          labeler=labeler)
        self.runs.save_diagnostics(run_id, report)
        return report

    def export_embeddings(self, run_id: str, out_path: Optional[str] = None, which: str = "best") -> pd.DataFrame:
        """CSV id, domain, label, x, y con la proyección 2D de la entrada de D1"""
        record = self.runs.load_record(run_id)
        config = self.runs.load_config(run_id)
        data = self.build_data(config, record.seed)
        bundle = self.runs.load_bundle(run_id, which)
        target = data.training.target_test
        if target is None:
            target = data.training.target_train
        out_path = out_path or str(self.runs.run_dir(run_id) / "embeddings.csv")
        return self.evaluation.export_embeddings(bundle, config.variant,
                                                 [data.training.source_val, target], out_path)


# Instancia por defecto
_experiment_service = None

def get_experiment_service() -> ExperimentService:
    """Factory function para obtener instancia de ExperimentService"""
    global _experiment_service
    if _experiment_service is None or str(_experiment_service.runs.runs_dir) != str(get_run_repository().runs_dir):
        _experiment_service = ExperimentService()
    return _experiment_service
