"""
Modelos de entrenamiento: pesos de pérdida, reportes, configuración y registros de corrida
"""
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.data import DatasetName


class Backend(str, Enum):
    """Backend de divergencia"""
    ADV = "adv"
    OT = "ot"


class Variant(str, Enum):
    """Variantes de modelo (imputación y líneas base)"""
    SOURCE_FULL = "source_full"
    ADAPT_FULL = "adapt_full"
    SOURCE_ZERO = "source_zero"
    ADAPT_ZERO = "adapt_zero"
    SOURCE_IGNORE = "source_ignore"
    ADAPT_IGNORE = "adapt_ignore"
    ADAPT_IMPUTE = "adapt_impute"

    @property
    def adapts(self) -> bool:
        return self.value.startswith("adapt_")

    @property
    def family(self) -> str:
        """full | zero | ignore | impute"""
        return self.value.split("_", 1)[1]

    @property
    def uses_full_target(self) -> bool:
        return self.family == "full"

    def full_counterpart(self) -> "Variant":
        """Variante equivalente cuando no falta ninguna componente"""
        return Variant.ADAPT_FULL if self.adapts else Variant.SOURCE_FULL


BASELINE_VARIANTS = [v for v in Variant if v != Variant.ADAPT_IMPUTE]


class ScheduleMode(str, Enum):
    CONSTANT = "constant"
    RAMP = "ramp"


class ImputationMode(str, Enum):
    """Composición de L2 para ablaciones"""
    ADV_MSE = "adv_mse"
    MSE = "mse"
    ADV = "adv"


class EntropyMode(str, Enum):
    """minimize: se minimiza la entropía; literal: la expresión tal como se imprime"""
    MINIMIZE = "minimize"
    LITERAL = "literal"


class RunStatus(str, Enum):
    COMPLETED = "completed"
    DIVERGED = "diverged"


class LossWeights(BaseModel):
    """λ1, λ2, λ3, λ_MSE, λ_OT y su modo de planificación"""
    lambda1: float = Field(default=1.0, ge=0.0)
    lambda2: float = Field(default=1.0, ge=0.0)
    lambda3: float = Field(default=1.0, ge=0.0)
    lambda_mse: float = Field(default=1.0, ge=0.0)
    lambda_ot: float = Field(default=0.1, ge=0.0)
    schedule_mode: ScheduleMode = ScheduleMode.RAMP

    def ramp(self, grad_scale: float) -> float:
        """Factor aplicado a λ1, λ2 del lado de los extractores"""
        return grad_scale if self.schedule_mode == ScheduleMode.RAMP else 1.0


class LossReport(BaseModel):
    """Valores de un paso; L2 y L_total se recalculan a partir de sus términos"""
    L1: float = 0.0
    L_ADV: float = 0.0
    L_MSE: float = 0.0
    L_OT: float = 0.0
    L2: float = 0.0
    L3: float = 0.0
    L_total: float = 0.0
    d1_accuracy: Optional[float] = None
    d2_accuracy: Optional[float] = None

    def as_metrics(self) -> Dict[str, float]:
        metrics = {
            "loss_l1": self.L1,
            "loss_adv": self.L_ADV,
            "loss_mse": self.L_MSE,
            "loss_ot": self.L_OT,
            "loss_l2": self.L2,
            "loss_l3": self.L3,
            "loss_total": self.L_total,
        }
        if self.d1_accuracy is not None:
            metrics["d1_accuracy"] = self.d1_accuracy
        if self.d2_accuracy is not None:
            metrics["d2_accuracy"] = self.d2_accuracy
        return metrics


@dataclass
class ScheduleState:
    """Estado del planificador en la fracción p de lotes procesados"""
    p: float
    grad_scale: float
    lr: float
    lr_i: float
    decay_factor: float


class TrainConfig(BaseModel):
    """Configuración de un entrenamiento"""
    backend: Backend = Backend.ADV
    variant: Variant = Variant.ADAPT_IMPUTE
    epochs: int = Field(default=100, ge=0)
    batch_size: int = Field(default=128, ge=2)
    lr_i: float = Field(default=1e-2, gt=0.0)
    weights: LossWeights = Field(default_factory=LossWeights)
    seed: int = 0
    init_epochs: int = Field(default=0, ge=0, description="Épocas de preentrenamiento sobre L3")
    imputation_mode: ImputationMode = ImputationMode.ADV_MSE
    balanced_source: bool = True
    fast_decay_imputation: bool = False
    decay_factor: float = Field(default=10.0, gt=0.0)
    fast_decay_factor: float = Field(default=30.0, gt=0.0)
    adam_betas: Tuple[float, float] = (0.8, 0.999)
    ot_warmup_epochs: int = Field(default=10, ge=0)
    batches_per_epoch: Optional[int] = Field(default=None, ge=1)
    eval_batch_size: int = Field(default=1000, ge=1)
    # D2 estima la probabilidad de que su entrada sea generada
    d2_positive_class: str = "generated"

    @property
    def effective_lambda_mse(self) -> float:
        return 0.0 if self.imputation_mode == ImputationMode.ADV else self.weights.lambda_mse

    @property
    def uses_adversarial_imputation(self) -> bool:
        return self.imputation_mode != ImputationMode.MSE


class RefineConfig(BaseModel):
    """Configuración del refinamiento por pseudo-etiquetas"""
    variant: Variant = Variant.ADAPT_IMPUTE
    epochs: int = Field(default=10, ge=0)
    lr_i: float = Field(default=1e-3, gt=0.0, description="Ya dividido por 10 respecto del entrenamiento")
    batch_size: int = Field(default=128, ge=2)
    entropy_weight: float = Field(default=0.1, ge=0.0)
    threshold: float = Field(default=0.95, ge=0.0)
    entropy_mode: EntropyMode = EntropyMode.MINIMIZE
    balanced_source: bool = True
    seed: int = 0
    adam_betas: Tuple[float, float] = (0.8, 0.999)
    batches_per_epoch: Optional[int] = Field(default=None, ge=1)
    eval_batch_size: int = Field(default=1000, ge=1)


class MetricRow(BaseModel):
    """Fila del flujo de métricas: (epoch, split, metric, value)"""
    epoch: int
    split: str
    metric: str
    value: float


class RunRecord(BaseModel):
    """Resultado de una corrida; los checkpoints en memoria no se serializan"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    run_id: str
    seed: int
    config: Dict[str, Any] = Field(default_factory=dict)
    status: RunStatus = RunStatus.COMPLETED
    metrics: List[MetricRow] = Field(default_factory=list)
    summary: Dict[str, float] = Field(default_factory=dict)
    diagnostic: Dict[str, Any] = Field(default_factory=dict)
    metadata: Dict[str, Any] = Field(default_factory=dict)
    best_epoch: Optional[int] = None
    best_checkpoint: Optional[Dict[str, Any]] = Field(default=None, exclude=True)
    final_checkpoint: Optional[Dict[str, Any]] = Field(default=None, exclude=True)

    def add_metrics(self, epoch: int, split: str, values: Dict[str, float]) -> None:
        for name, value in values.items():
            self.metrics.append(MetricRow(epoch=epoch, split=split, metric=name, value=float(value)))

    def metric_series(self, split: str, metric: str) -> List[float]:
        return [row.value for row in self.metrics if row.split == split and row.metric == metric]

    @property
    def diverged(self) -> bool:
        return self.status == RunStatus.DIVERGED


@dataclass
class PseudoLabelSet:
    """Muestras objetivo con confianza máxima >= τ y su etiqueta argmax"""
    positions: torch.Tensor
    ids: torch.Tensor
    labels: torch.Tensor
    confidences: torch.Tensor
    threshold: float

    def __len__(self) -> int:
        return int(self.positions.numel())

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    def id_set(self) -> set:
        return set(self.ids.tolist())


class DiagnosticsReport(BaseModel):
    """Proxies de los términos de las cotas; no son las cantidades exactas"""
    source_risk: float = Field(..., ge=0.0, le=1.0)
    proxy_divergence: float = Field(..., ge=0.0, le=2.0)
    imputation_mse_source: Optional[float] = Field(default=None, ge=0.0)
    imputation_discriminator_error: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    transfer_proxy: float = Field(..., ge=0.0, le=1.0)
    lambda_proxy: float = Field(..., ge=0.0, le=2.0)
    # ε_T(f_T̃): error de las pseudo-etiquetas, solo con etiquetas de oráculo
    lambda_oracle_term: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    pseudo_label_count: int = Field(default=0, ge=0)
    oracle_target_risk: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    oracle_joint_risk: Optional[float] = Field(default=None, ge=0.0, le=2.0)
    labels: Dict[str, str] = Field(default_factory=lambda: {
        "proxy_divergence": "held-out domain classifier on generated latents, 2(1-2e)",
        "imputation_mse_source": "held-out MSE between encoded and generated source z2",
        "transfer_proxy": "held-out domain classifier error on (z1, r(z1))",
        "lambda_proxy": "source error + target error against a separate pseudo-labeller",
        "lambda_oracle_term": "pseudo-label error against oracle target labels",
    })


class ExperimentConfig(BaseModel):
    """
    Configuración plana (key=value) de un experimento.
    Los campos en None toman el default del tipo de dataset (resolved_*).
    """
    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    # datos
    source: DatasetName
    target: DatasetName
    patch_fraction: float = Field(default=0.5, ge=0.0, lt=1.0)
    source_subsample: Optional[int] = Field(default=None, ge=1)
    target_subsample: Optional[int] = Field(default=None, ge=1)
    test_subsample: Optional[int] = Field(default=None, ge=1)
    validation_fraction: float = Field(default=0.1, gt=0.0, lt=1.0)
    source_path: Optional[str] = None
    target_path: Optional[str] = None
    source_test_path: Optional[str] = None
    target_test_path: Optional[str] = None
    mask_path: Optional[str] = None
    synthetic_n: int = Field(default=2000, ge=100)
    synthetic_classes: int = Field(default=3, ge=2)
    synthetic_obs_dim: int = Field(default=10, ge=2)
    synthetic_miss_dim: int = Field(default=10, ge=2)
    shift_scale: float = Field(default=1.2, gt=0.0)
    shift_rotation: float = 0.4
    shift_offset_x: float = 1.0
    shift_offset_y: float = 0.5
    target_class_prior: Optional[str] = Field(default=None, description="Probabilidades separadas por coma")

    # modelo y entrenamiento
    backend: Backend = Backend.ADV
    variant: Variant = Variant.ADAPT_IMPUTE
    epochs: Optional[int] = Field(default=None, ge=0)
    batch_size: Optional[int] = Field(default=None, ge=2)
    lr_i: Optional[float] = Field(default=None, gt=0.0)
    init_epochs: int = Field(default=0, ge=0)
    lambda1: Optional[float] = Field(default=None, ge=0.0)
    lambda2: float = Field(default=1.0, ge=0.0)
    lambda3: float = Field(default=1.0, ge=0.0)
    lambda_mse: Optional[float] = Field(default=None, ge=0.0)
    lambda_ot: float = Field(default=0.1, ge=0.0)
    schedule_mode: ScheduleMode = ScheduleMode.RAMP
    imputation_mode: ImputationMode = ImputationMode.ADV_MSE
    balanced_source: Optional[bool] = None
    fast_decay_imputation: bool = False
    batches_per_epoch: Optional[int] = Field(default=None, ge=1)
    ot_warmup_epochs: int = Field(default=10, ge=0)
    dropout: float = Field(default=0.5, ge=0.0, lt=1.0)
    batchnorm_momentum: float = Field(default=0.1, gt=0.0, le=1.0)
    strong_discriminator: Optional[bool] = None
    generator_extra_layer: Optional[bool] = None
    seed: int = 0
    n_seeds: int = Field(default=5, ge=1)

    # refinamiento
    refine: bool = False
    refine_epochs: int = Field(default=10, ge=0)
    refine_lambda: Optional[float] = Field(default=None, ge=0.0)
    refine_threshold: float = Field(default=0.95, ge=0.0)
    entropy_mode: EntropyMode = EntropyMode.MINIMIZE

    @field_validator("target_class_prior")
    @classmethod
    def validate_prior(cls, v):
        if v is None or v == "":
            return None
        try:
            values = [float(p) for p in v.split(",")]
        except ValueError as e:
            raise ValueError(f"target_class_prior must be comma-separated floats: {e}")
        if any(p < 0 for p in values) or abs(sum(values) - 1.0) > 1e-6:
            raise ValueError("target_class_prior must be a probability vector")
        return ",".join(repr(p) for p in values)

    @model_validator(mode="after")
    def validate_datasets(self):
        tabular = self.source == DatasetName.TABULAR or self.target == DatasetName.TABULAR
        if tabular and not (self.source_path and self.target_path):
            raise ValueError("tabular experiments require source_path and target_path")
        if (self.source == DatasetName.SYNTHETIC) != (self.target == DatasetName.SYNTHETIC):
            raise ValueError("synthetic data must be used for both domains")
        if self.target_class_prior is not None:
            if len(self.target_class_prior.split(",")) != self.synthetic_classes:
                raise ValueError("target_class_prior length must equal synthetic_classes")
        return self

    # Defaults dependientes del dataset; los campos en None no se serializan

    @property
    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 100 if self.is_digits else 30

    @property
    def resolved_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 500 if self.backend == Backend.OT else 128

    @property
    def resolved_lr_i(self) -> float:
        if self.lr_i is not None:
            return self.lr_i
        if self.is_digits:
            return 10 ** -2.5 if self.variant == Variant.ADAPT_ZERO else 1e-2
        return 1e-6 if self.is_tabular else 1e-3

    @property
    def resolved_lambda1(self) -> float:
        if self.lambda1 is not None:
            return self.lambda1
        return 0.1 if self.backend == Backend.OT else 1.0

    @property
    def resolved_lambda_mse(self) -> float:
        if self.lambda_mse is not None:
            return self.lambda_mse
        return 0.005 if self.is_tabular else 1.0

    @property
    def resolved_refine_lambda(self) -> float:
        if self.refine_lambda is not None:
            return self.refine_lambda
        return 1.0 if self.is_tabular else 0.1

    @property
    def resolved_balanced_source(self) -> bool:
        if self.balanced_source is not None:
            return self.balanced_source
        return self.is_digits

    @property
    def is_digits(self) -> bool:
        return self.source.is_digits and self.target.is_digits

    @property
    def is_synthetic(self) -> bool:
        return self.source == DatasetName.SYNTHETIC

    @property
    def is_tabular(self) -> bool:
        return self.source == DatasetName.TABULAR

    @property
    def pair_name(self) -> str:
        return f"{self.source.value}-{self.target.value}"

    def prior_vector(self) -> Optional[List[float]]:
        if self.target_class_prior is None:
            return None
        return [float(p) for p in self.target_class_prior.split(",")]

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda1=self.resolved_lambda1,
            lambda2=self.lambda2,
            lambda3=self.lambda3,
            lambda_mse=self.resolved_lambda_mse,
            lambda_ot=self.lambda_ot,
            schedule_mode=self.schedule_mode,
        )

    def to_train_config(self, seed: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            backend=self.backend,
            variant=self.variant,
            epochs=self.resolved_epochs,
            batch_size=self.resolved_batch_size,
            lr_i=self.resolved_lr_i,
            weights=self.loss_weights(),
            seed=self.seed if seed is None else seed,
            init_epochs=self.init_epochs,
            imputation_mode=self.imputation_mode,
            balanced_source=self.resolved_balanced_source,
            fast_decay_imputation=self.fast_decay_imputation,
            ot_warmup_epochs=self.ot_warmup_epochs,
            batches_per_epoch=self.batches_per_epoch,
        )

    def to_refine_config(self, seed: Optional[int] = None) -> RefineConfig:
        return RefineConfig(
            variant=self.variant,
            epochs=self.refine_epochs,
            lr_i=self.resolved_lr_i / 10,
            batch_size=self.resolved_batch_size,
            entropy_weight=self.resolved_refine_lambda,
            threshold=self.refine_threshold,
            entropy_mode=self.entropy_mode,
            balanced_source=self.resolved_balanced_source,
            seed=self.seed if seed is None else seed,
            batches_per_epoch=self.batches_per_epoch,
        )

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Copia revalidada con overrides"""
        data = self.model_dump()
        data.update(overrides)
        return ExperimentConfig(**data)


class ExperimentPlan(BaseModel):
    """Conjunto de corridas independientes de un barrido"""
    configs: List[ExperimentConfig]
    n_seeds: int = Field(default=5, ge=1)
    output_root: str
    refinement: bool = False
    created: datetime = Field(default_factory=datetime.now)

    def runs(self) -> List[Tuple[ExperimentConfig, int]]:
        """Pares (configuración, semilla) en orden estable"""
        return [(config, config.seed + offset)
                for config in self.configs
                for offset in range(self.n_seeds)]
