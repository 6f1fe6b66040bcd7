"""
Modelos de datos: especificación de datasets, máscara fija y lotes enmascarados
"""
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple

import torch
from pydantic import BaseModel, Field, field_validator, model_validator
from torch.utils.data import Dataset

from app.services import ConfigurationError


class Domain(str, Enum):
    """Dominio de una muestra"""
    SOURCE = "source"
    TARGET = "target"


class DatasetName(str, Enum):
    """Datasets soportados"""
    MNIST = "mnist"
    USPS = "usps"
    SVHN = "svhn"
    MNISTM = "mnistm"
    SYNTHETIC = "synthetic"
    TABULAR = "tabular"

    @property
    def is_digits(self) -> bool:
        return self in DIGIT_DATASETS


DIGIT_DATASETS = {DatasetName.MNIST, DatasetName.USPS, DatasetName.SVHN, DatasetName.MNISTM}


class Split(str, Enum):
    """Partición predefinida"""
    TRAIN = "train"
    TEST = "test"


class DatasetSpec(BaseModel):
    """Especificación de carga de un dataset"""
    name: DatasetName = Field(..., description="Nombre del dataset")
    split: Split = Field(default=Split.TRAIN, description="Partición")
    subsample: Optional[int] = Field(default=None, ge=1, description="Número de muestras a conservar")
    patch_fraction: float = Field(default=0.0, ge=0.0, le=1.0, description="Fracción de filas enmascaradas")
    seed: int = Field(default=0, description="Semilla del submuestreo")
    channels: Optional[int] = Field(default=None, description="Canales de salida (1 o 3) para dígitos")
    path: Optional[str] = Field(default=None, description="CSV para datasets tabulares")
    mask_path: Optional[str] = Field(default=None, description="Declaración JSON de columnas faltantes")
    label_column: str = Field(default="label", description="Columna de etiquetas en CSV tabulares")

    @field_validator("channels")
    @classmethod
    def validate_channels(cls, v):
        if v is not None and v not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        return v

    @model_validator(mode="after")
    def validate_tabular_path(self):
        if self.name == DatasetName.TABULAR and not self.path:
            raise ValueError("tabular datasets require 'path'")
        return self


class FixedMask:
    """
    Máscara binaria idéntica para todas las muestras de un dataset
    (1 = faltante, 0 = observado), sobre el vector aplanado de la muestra
    """

    def __init__(self,
                 sample_shape: Sequence[int],
                 mask: torch.Tensor,
                 block_descriptor: Optional[Dict[str, Any]] = None):
        self.sample_shape = tuple(int(s) for s in sample_shape)
        self.mask = mask.detach().to(torch.bool).flatten().cpu()
        self.block_descriptor = block_descriptor or {}

        n = 1
        for s in self.sample_shape:
            n *= s
        if self.mask.numel() != n:
            raise ConfigurationError(
                f"Mask length {self.mask.numel()} does not match sample size {n}"
            )
        if self.n_missing == n:
            raise ConfigurationError(
                "Mask must keep at least one observed entry "
                "(patch_fraction = 1 leaves nothing observed and is rejected)"
            )

        self.observed_index = torch.nonzero(~self.mask, as_tuple=False).flatten()
        self.missing_index = torch.nonzero(self.mask, as_tuple=False).flatten()

    @property
    def n(self) -> int:
        return self.mask.numel()

    @property
    def n_missing(self) -> int:
        return int(self.mask.sum().item())

    @property
    def n_observed(self) -> int:
        return self.n - self.n_missing

    @property
    def is_full(self) -> bool:
        """Máscara toda en cero: caso de datos completos"""
        return self.n_missing == 0

    @property
    def missing_fraction(self) -> float:
        return self.n_missing / self.n

    def split(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Separa (B, *shape) o (B, n) en componentes observada y faltante"""
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.n:
            raise ConfigurationError(
                f"Sample dimension {flat.shape[1]} does not match mask length {self.n}"
            )
        return flat[:, self.observed_index], flat[:, self.missing_index]

    def merge(self, x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
        """Reconstruye el vector aplanado a partir de ambas componentes"""
        out = x1.new_zeros((x1.shape[0], self.n))
        out[:, self.observed_index.to(x1.device)] = x1
        if self.n_missing:
            out[:, self.missing_index.to(x1.device)] = x2
        return out

    def scatter(self, part: torch.Tensor, which: str) -> torch.Tensor:
        """Ubica una componente sobre un lienzo de ceros con la forma de la muestra"""
        out = part.new_zeros((part.shape[0], self.n))
        index = self.observed_index if which == "observed" else self.missing_index
        if index.numel():
            out[:, index.to(part.device)] = part
        return out.view(part.shape[0], *self.sample_shape)

    def to_dict(self) -> Dict[str, Any]:
        """Serialización compacta (índices faltantes)"""
        return {
            "sample_shape": list(self.sample_shape),
            "missing_index": self.missing_index.tolist(),
            "block_descriptor": self.block_descriptor,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FixedMask":
        shape = tuple(data["sample_shape"])
        n = 1
        for s in shape:
            n *= s
        mask = torch.zeros(n, dtype=torch.bool)
        mask[torch.as_tensor(data["missing_index"], dtype=torch.long)] = True
        return cls(shape, mask, data.get("block_descriptor"))

    @classmethod
    def empty(cls, sample_shape: Sequence[int]) -> "FixedMask":
        n = 1
        for s in sample_shape:
            n *= s
        return cls(sample_shape, torch.zeros(n, dtype=torch.bool), {"kind": "none"})

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FixedMask)
            and self.sample_shape == other.sample_shape
            and torch.equal(self.mask, other.mask)
        )

    def __repr__(self) -> str:
        return f"FixedMask(shape={self.sample_shape}, missing={self.n_missing}/{self.n})"


class RawDataset:
    """Muestras sin separar: tensor (N, *shape), etiquetas opcionales y dominio"""

    def __init__(self,
                 x: torch.Tensor,
                 labels: Optional[torch.Tensor],
                 domain: Domain,
                 name: str,
                 num_classes: int,
                 ids: Optional[torch.Tensor] = None):
        self.x = x
        self.labels = labels
        self.domain = Domain(domain)
        self.name = name
        self.num_classes = num_classes
        self.ids = ids if ids is not None else torch.arange(x.shape[0])

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return tuple(self.x.shape[1:])

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass
class MaskedBatch:
    """Mini-lote separado en componentes observada/faltante"""
    x1: torch.Tensor
    x2: torch.Tensor
    labels: Optional[torch.Tensor]
    domain: Domain
    x2_observed: bool
    ids: torch.Tensor

    def __len__(self) -> int:
        return self.x1.shape[0]

    def to(self, device) -> "MaskedBatch":
        return MaskedBatch(
            x1=self.x1.to(device),
            x2=self.x2.to(device),
            labels=self.labels.to(device) if self.labels is not None else None,
            domain=self.domain,
            x2_observed=self.x2_observed,
            ids=self.ids,
        )


class MaskedDataset(Dataset):
    """
    Dataset en memoria ya separado por la máscara fija.
    Solo lectura tras la construcción.
    """

    def __init__(self,
                 x1: torch.Tensor,
                 x2: torch.Tensor,
                 labels: Optional[torch.Tensor],
                 domain: Domain,
                 mask: FixedMask,
                 x2_observed: bool,
                 name: str,
                 num_classes: int,
                 ids: Optional[torch.Tensor] = None):
        self.x1 = x1
        self.x2 = x2
        self.labels = labels
        self.domain = Domain(domain)
        self.mask = mask
        self.x2_observed = x2_observed
        self.name = name
        self.num_classes = num_classes
        self.ids = ids if ids is not None else torch.arange(x1.shape[0])

    def __len__(self) -> int:
        return self.x1.shape[0]

    def __getitem__(self, index: int):
        label = self.labels[index] if self.labels is not None else torch.tensor(-1)
        return self.x1[index], self.x2[index], label, self.ids[index]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def batch(self, indices) -> MaskedBatch:
        """Materializa un lote a partir de índices posicionales"""
        idx = torch.as_tensor(indices, dtype=torch.long)
        return MaskedBatch(
            x1=self.x1[idx],
            x2=self.x2[idx],
            labels=self.labels[idx] if self.labels is not None else None,
            domain=self.domain,
            x2_observed=self.x2_observed,
            ids=self.ids[idx],
        )

    def full_view(self) -> torch.Tensor:
        """Vista completa (N, *shape); en dominios enmascarados la parte faltante es cero"""
        return self.mask.merge(self.x1, self.x2).view(len(self), *self.mask.sample_shape)

    def to_raw(self) -> RawDataset:
        return RawDataset(self.full_view(), self.labels, self.domain, self.name,
                          self.num_classes, self.ids)

    def subset(self, indices) -> "MaskedDataset":
        idx = torch.as_tensor(indices, dtype=torch.long)
        return MaskedDataset(
            x1=self.x1[idx],
            x2=self.x2[idx],
            labels=self.labels[idx] if self.labels is not None else None,
            domain=self.domain,
            mask=self.mask,
            x2_observed=self.x2_observed,
            name=self.name,
            num_classes=self.num_classes,
            ids=self.ids[idx],
        )

    def without_labels(self) -> "MaskedDataset":
        """Copia sin etiquetas (el objetivo no etiquetado que ve el entrenamiento)"""
        return MaskedDataset(self.x1, self.x2, None, self.domain, self.mask,
                             self.x2_observed, self.name, self.num_classes, self.ids)
