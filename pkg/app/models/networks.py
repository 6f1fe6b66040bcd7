"""
Componentes paramétricos g1, g2, r, f, D1, D2 y la capa de inversión de gradiente
"""
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import torch
import torch.nn as nn
from pydantic import BaseModel, Field, model_validator

from app.models.data import DatasetName, FixedMask, MaskedBatch
from app.services import ConfigurationError, ContractViolationError


class ArchitectureFamily(str, Enum):
    """Familias de arquitectura"""
    CONV_DIGITS = "conv_digits"
    MLP_TABULAR = "mlp_tabular"


class ClassifierInput(str, Enum):
    """Entrada del clasificador: ambas componentes o solo la observada"""
    JOINT = "joint"
    OBSERVED_ONLY = "observed_only"


class Provenance(str, Enum):
    """Origen de la segunda componente latente"""
    ENCODED = "encoded"
    GENERATED = "generated"
    ZERO_FILLED = "zero_filled"


class ArchitectureSpec(BaseModel):
    """Arquitectura de una corrida; se guarda en cada checkpoint"""
    family: ArchitectureFamily
    input_shape: Tuple[int, ...] = Field(..., description="Forma de una muestra completa")
    num_classes: int = Field(..., ge=2)
    # conv_digits
    conv_filters: Tuple[int, int, int] = (64, 64, 128)
    conv_kernel: int = 5
    # mlp_tabular
    extractor_width: int = 128
    extractor_layers: int = 3
    latent_dim: int = Field(default=128, description="Salida de g1/g2 en mlp_tabular")
    # cabezas
    classifier_width: int = 100
    classifier_layers: int = 2
    classifier_input: ClassifierInput = ClassifierInput.JOINT
    dropout: float = Field(default=0.5, ge=0.0, lt=1.0)
    discriminator_width: int = 100
    discriminator_layers: int = 1
    generator_width: int = 512
    generator_layers: int = 2
    batchnorm_momentum: float = Field(default=0.1, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def validate_shape(self):
        if self.family == ArchitectureFamily.CONV_DIGITS:
            if len(self.input_shape) != 3 or self.input_shape[1] % 8 or self.input_shape[2] % 8:
                raise ValueError("conv_digits requires (C, H, W) with H, W divisible by 8")
        elif len(self.input_shape) != 1:
            raise ValueError("mlp_tabular requires a flat (n,) input shape")
        return self

    @property
    def d1(self) -> int:
        if self.family == ArchitectureFamily.CONV_DIGITS:
            _, h, w = self.input_shape
            return self.conv_filters[-1] * (h // 8) * (w // 8)
        return self.latent_dim

    @property
    def d2(self) -> int:
        return self.d1

    @property
    def classifier_in(self) -> int:
        return self.d1 if self.classifier_input == ClassifierInput.OBSERVED_ONLY else self.d1 + self.d2


def build_architecture(source: DatasetName,
                       target: DatasetName,
                       input_shape: Tuple[int, ...],
                       num_classes: int,
                       classifier_input: ClassifierInput = ClassifierInput.JOINT,
                       strong_discriminator: Optional[bool] = None,
                       generator_extra_layer: Optional[bool] = None,
                       dropout: float = 0.5,
                       batchnorm_momentum: float = 0.1) -> ArchitectureSpec:
    """
    Elige la arquitectura según el par de dominios

    Discriminadores 2x512 para USPS<->MNIST y una capa extra de 512 en r
    para SVHN->MNIST y MNIST->MNIST-M, salvo override explícito.
    """
    source, target = DatasetName(source), DatasetName(target)
    if source.is_digits and target.is_digits:
        pair = (source, target)
        if strong_discriminator is None:
            strong_discriminator = set(pair) == {DatasetName.USPS, DatasetName.MNIST}
        if generator_extra_layer is None:
            generator_extra_layer = pair in {(DatasetName.SVHN, DatasetName.MNIST),
                                             (DatasetName.MNIST, DatasetName.MNISTM)}
        return ArchitectureSpec(
            family=ArchitectureFamily.CONV_DIGITS,
            input_shape=tuple(input_shape),
            num_classes=num_classes,
            classifier_input=classifier_input,
            dropout=dropout,
            discriminator_width=512 if strong_discriminator else 100,
            discriminator_layers=2 if strong_discriminator else 1,
            generator_layers=3 if generator_extra_layer else 2,
            batchnorm_momentum=batchnorm_momentum,
        )

    return ArchitectureSpec(
        family=ArchitectureFamily.MLP_TABULAR,
        input_shape=tuple(input_shape),
        num_classes=num_classes,
        classifier_input=classifier_input,
        classifier_width=128,
        classifier_layers=1,
        dropout=0.0,
        discriminator_width=512 if strong_discriminator else 128,
        discriminator_layers=2 if strong_discriminator else 1,
        generator_width=256,
        generator_layers=3 if generator_extra_layer else 2,
        batchnorm_momentum=batchnorm_momentum,
    )


# --------------------------------------------------------------------------- GRL

class _GradientReversal(torch.autograd.Function):
    """Identidad hacia adelante, gradiente por -scale hacia atrás"""

    @staticmethod
    def forward(ctx, x, scale):
        ctx.scale = scale
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.scale, None


def grl_apply(tensor: torch.Tensor, scale: float) -> torch.Tensor:
    """Aplica la capa de inversión de gradiente con escala s en [0, 1]"""
    if not 0.0 <= scale <= 1.0:
        raise ContractViolationError(f"GRL scale must be in [0, 1], got {scale}")
    return _GradientReversal.apply(tensor, float(scale))


class GradientReversal(nn.Module):
    """Módulo con escala ajustable por el planificador"""

    def __init__(self, scale: float = 1.0):
        super().__init__()
        self.scale = scale

    def forward(self, x):
        return grl_apply(x, self.scale)


# -------------------------------------------------------------------- components

def _conv_extractor(spec: ArchitectureSpec) -> nn.Sequential:
    channels = spec.input_shape[0]
    f1, f2, f3 = spec.conv_filters
    pad = spec.conv_kernel // 2
    m = spec.batchnorm_momentum
    return nn.Sequential(
        nn.Conv2d(channels, f1, spec.conv_kernel, padding=pad),
        nn.BatchNorm2d(f1, momentum=m),
        nn.MaxPool2d(2, stride=2),
        nn.ReLU(),
        nn.Conv2d(f1, f2, spec.conv_kernel, padding=pad),
        nn.BatchNorm2d(f2, momentum=m),
        nn.MaxPool2d(2, stride=2),
        nn.ReLU(),
        nn.Conv2d(f2, f3, spec.conv_kernel, padding=pad),
        nn.BatchNorm2d(f3, momentum=m),
        nn.MaxPool2d(2, stride=2),
        nn.Flatten(),
        nn.Sigmoid(),
    )


def _mlp_extractor(in_dim: int, spec: ArchitectureSpec) -> nn.Sequential:
    layers: List[nn.Module] = []
    width = in_dim
    for _ in range(spec.extractor_layers - 1):
        layers += [nn.Linear(width, spec.extractor_width), nn.ReLU()]
        width = spec.extractor_width
    layers += [nn.Linear(width, spec.latent_dim), nn.Sigmoid()]
    return nn.Sequential(*layers)


def _generator(spec: ArchitectureSpec) -> nn.Sequential:
    layers: List[nn.Module] = []
    width = spec.d1
    for _ in range(spec.generator_layers):
        layers += [nn.Linear(width, spec.generator_width),
                   nn.BatchNorm1d(spec.generator_width, momentum=spec.batchnorm_momentum),
                   nn.ReLU()]
        width = spec.generator_width
    layers += [nn.Linear(width, spec.d2), nn.Sigmoid()]
    return nn.Sequential(*layers)


def _classifier(spec: ArchitectureSpec) -> nn.Sequential:
    layers: List[nn.Module] = []
    width = spec.classifier_in
    for i in range(spec.classifier_layers):
        layers.append(nn.Linear(width, spec.classifier_width))
        if spec.family == ArchitectureFamily.CONV_DIGITS:
            layers.append(nn.BatchNorm1d(spec.classifier_width, momentum=spec.batchnorm_momentum))
        layers.append(nn.ReLU())
        if i == 0 and spec.dropout > 0:
            layers.append(nn.Dropout(spec.dropout))
        width = spec.classifier_width
    layers.append(nn.Linear(width, spec.num_classes))
    return nn.Sequential(*layers)


def _discriminator(in_dim: int, spec: ArchitectureSpec) -> nn.Sequential:
    layers: List[nn.Module] = []
    width = in_dim
    for _ in range(spec.discriminator_layers):
        layers.append(nn.Linear(width, spec.discriminator_width))
        if spec.discriminator_layers == 1:
            layers.append(nn.BatchNorm1d(spec.discriminator_width, momentum=spec.batchnorm_momentum))
        layers.append(nn.ReLU())
        width = spec.discriminator_width
    layers += [nn.Linear(width, 1), nn.Sigmoid()]
    return nn.Sequential(*layers)


@dataclass
class LatentBatch:
    """Pares latentes (z1, z2) con su procedencia"""
    z1: torch.Tensor
    z2: Optional[torch.Tensor]
    provenance: Provenance

    def joint(self) -> torch.Tensor:
        """Entrada del clasificador y de D1"""
        if self.z2 is None:
            return self.z1
        return torch.cat([self.z1, self.z2], dim=1)

    def detach(self) -> "LatentBatch":
        return LatentBatch(self.z1.detach(),
                           self.z2.detach() if self.z2 is not None else None,
                           self.provenance)

    def __len__(self) -> int:
        return self.z1.shape[0]


class ComponentBundle(nn.Module):
    """
    g1: x1 -> z1, g2: x2 -> z2, r: z1 -> z2 generado, f: clasificador,
    D1: dominio sobre (z1, z2), D2: imputación sobre z2
    """

    MINIMIZERS = ("g1", "g2", "r", "f")
    MAXIMIZERS = ("D1", "D2")

    def __init__(self, spec: ArchitectureSpec, mask: FixedMask):
        super().__init__()
        if tuple(mask.sample_shape) != tuple(spec.input_shape):
            raise ConfigurationError(
                f"Mask shape {mask.sample_shape} does not match architecture input {spec.input_shape}"
            )
        self.spec = spec
        self.mask = mask

        if spec.family == ArchitectureFamily.CONV_DIGITS:
            self.g1 = _conv_extractor(spec)
            self.g2 = _conv_extractor(spec)
        else:
            self.g1 = _mlp_extractor(mask.n_observed, spec)
            self.g2 = _mlp_extractor(mask.n_missing, spec)
        self.r = _generator(spec)
        self.f = _classifier(spec)
        d1_in = spec.d1 if spec.classifier_input == ClassifierInput.OBSERVED_ONLY else spec.d1 + spec.d2
        self.D1 = _discriminator(d1_in, spec)
        self.D2 = _discriminator(spec.d2, spec)

    # ------------------------------------------------------------------ helpers

    def _observed_input(self, x1: torch.Tensor) -> torch.Tensor:
        if self.spec.family == ArchitectureFamily.CONV_DIGITS:
            return self.mask.scatter(x1, "observed")
        return x1

    def _missing_input(self, x2: torch.Tensor) -> torch.Tensor:
        if self.spec.family == ArchitectureFamily.CONV_DIGITS:
            return self.mask.scatter(x2, "missing")
        return x2

    def component_parameters(self, names) -> List[nn.Parameter]:
        params = []
        for name in names:
            params.extend(getattr(self, name).parameters())
        return params

    # --------------------------------------------------------------- encoders

    def encode_observed(self, x1: torch.Tensor) -> torch.Tensor:
        return self.g1(self._observed_input(x1))

    def encode_missing(self, x2: torch.Tensor) -> torch.Tensor:
        return self.g2(self._missing_input(x2))

    def encode_full(self, batch: MaskedBatch) -> LatentBatch:
        """(g1(x1), g2(x2)); requiere la componente faltante poblada"""
        if not batch.x2_observed:
            raise ContractViolationError(
                "encode_full called on a batch whose missing component is zero-filled"
            )
        z1 = self.encode_observed(batch.x1)
        z2 = self.encode_missing(batch.x2)
        return LatentBatch(z1, z2, Provenance.ENCODED)

    def encode_hat(self, x1: torch.Tensor) -> LatentBatch:
        """(g1(x1), r(g1(x1)))"""
        z1 = self.encode_observed(x1)
        return LatentBatch(z1, self.r(z1), Provenance.GENERATED)

    def encode_zero(self, x1: torch.Tensor) -> LatentBatch:
        """(g1(x1), g2(0)) para la línea base de imputación por ceros"""
        z1 = self.encode_observed(x1)
        zeros = x1.new_zeros((x1.shape[0], self.mask.n_missing))
        return LatentBatch(z1, self.g2(self._missing_input(zeros)), Provenance.ZERO_FILLED)

    def encode_observed_only(self, x1: torch.Tensor) -> LatentBatch:
        return LatentBatch(self.encode_observed(x1), None, Provenance.ENCODED)

    # ------------------------------------------------------------------ heads

    def classify(self, latent: LatentBatch) -> torch.Tensor:
        """Matriz de probabilidades por clase (filas suman 1)"""
        return torch.softmax(self.classifier_logits(latent), dim=1)

    def classifier_logits(self, latent: LatentBatch) -> torch.Tensor:
        joint = latent.z1 if self.spec.classifier_input == ClassifierInput.OBSERVED_ONLY else latent.joint()
        if joint.shape[1] != self.spec.classifier_in:
            raise ConfigurationError(
                f"Latent width {joint.shape[1]} does not match classifier input {self.spec.classifier_in}"
            )
        return self.f(joint)

    def domain_input(self, latent: LatentBatch) -> torch.Tensor:
        if self.spec.classifier_input == ClassifierInput.OBSERVED_ONLY:
            return latent.z1
        return latent.joint()

    # ------------------------------------------------------------ checkpoints

    def to_checkpoint(self, seed: int, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Contenedor autodescriptivo: arquitectura, máscara, parámetros y semilla"""
        return {
            "architecture": self.spec.model_dump(mode="json"),
            "mask": self.mask.to_dict(),
            "state_dict": {k: v.detach().cpu().clone() for k, v in self.state_dict().items()},
            "seed": seed,
            "extra": extra or {},
        }

    @classmethod
    def from_checkpoint(cls, payload: Dict[str, Any]) -> "ComponentBundle":
        spec = ArchitectureSpec(**payload["architecture"])
        bundle = cls(spec, FixedMask.from_dict(payload["mask"]))
        bundle.load_state_dict(payload["state_dict"])
        return bundle


def build_bundle(spec: ArchitectureSpec, mask: FixedMask, seed: int) -> ComponentBundle:
    """Construye el bundle con inicialización reproducible (fan-in de PyTorch)"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        bundle = ComponentBundle(spec, mask)
    return bundle
