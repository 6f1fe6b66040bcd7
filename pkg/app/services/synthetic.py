"""
Generador sintético multimodal con oráculo de verdad
"""
import math
from typing import List, Optional, Tuple

import torch
from pydantic import BaseModel, Field, field_validator

from app.core.logger import get_logger
from app.models.data import Domain, FixedMask, RawDataset
from app.services import ContractViolationError
from app.services.masking import make_column_mask

logger = get_logger("synthetic")

CORE_DIM = 2


class ShiftParams(BaseModel):
    """Desplazamiento afín del marginal de x1 en el dominio objetivo"""
    scale: float = Field(default=1.0, gt=0.0)
    rotation: float = Field(default=0.0, description="Rotación en radianes")
    offset: Tuple[float, float] = Field(default=(0.0, 0.0))
    target_class_prior: Optional[List[float]] = Field(
        default=None, description="Prior de clases del objetivo (desajuste de posteriores)"
    )

    @field_validator("target_class_prior")
    @classmethod
    def validate_prior(cls, v):
        if v is not None:
            if any(p < 0 for p in v) or abs(sum(v) - 1.0) > 1e-6:
                raise ValueError("target_class_prior must be a probability vector")
        return v

    @classmethod
    def identity(cls) -> "ShiftParams":
        return cls()

    @classmethod
    def default(cls) -> "ShiftParams":
        return cls(scale=1.2, rotation=0.4, offset=(1.0, 0.5))

    @property
    def is_identity(self) -> bool:
        return (self.scale == 1.0 and self.rotation == 0.0
                and tuple(self.offset) == (0.0, 0.0) and self.target_class_prior is None)


def _rotation(angle: float) -> torch.Tensor:
    c, s = math.cos(angle), math.sin(angle)
    return torch.tensor([[c, -s], [s, c]], dtype=torch.float64)


class SyntheticOracle:
    """
    Oráculo del generador: etiquetas verdaderas, modos condicionales de x2|x1
    y clasificador de Bayes sobre datos completos
    """

    def __init__(self,
                 num_classes: int,
                 obs_dim: int,
                 miss_dim: int,
                 shift: ShiftParams,
                 radius: float = 2.0,
                 class_sigma: float = 0.6,
                 mode_gap: float = 1.5,
                 mode_sigma: float = 0.15,
                 structure_seed: int = 0):
        self.num_classes = num_classes
        self.obs_dim = obs_dim
        self.miss_dim = miss_dim
        self.shift = shift
        self.class_sigma = class_sigma
        self.mode_gap = mode_gap
        self.mode_sigma = mode_sigma

        angles = torch.arange(num_classes, dtype=torch.float64) * (2 * math.pi / num_classes)
        self.class_means = radius * torch.stack([torch.cos(angles), torch.sin(angles)], dim=1)

        g = torch.Generator().manual_seed(structure_seed)
        self.embed_obs, _ = torch.linalg.qr(torch.randn(obs_dim, CORE_DIM, generator=g, dtype=torch.float64))
        self.embed_miss, _ = torch.linalg.qr(torch.randn(miss_dim, CORE_DIM, generator=g, dtype=torch.float64))
        # x2_core = A x1_core ± gap * v
        self.mode_map = 0.5 * _rotation(math.pi / 4)
        self.mode_direction = torch.tensor([0.0, 1.0], dtype=torch.float64)

        self.shift_matrix = shift.scale * _rotation(shift.rotation)
        self.shift_offset = torch.tensor(shift.offset, dtype=torch.float64)

    @property
    def n_features(self) -> int:
        return self.obs_dim + self.miss_dim

    def mask(self) -> FixedMask:
        """Bloque faltante: las últimas miss_dim columnas"""
        return make_column_mask(self.n_features, range(self.obs_dim, self.n_features))

    def class_prior(self, domain: Domain) -> torch.Tensor:
        if domain == Domain.TARGET and self.shift.target_class_prior is not None:
            return torch.tensor(self.shift.target_class_prior, dtype=torch.float64)
        return torch.full((self.num_classes,), 1.0 / self.num_classes, dtype=torch.float64)

    def domain_means(self, domain: Domain) -> torch.Tensor:
        if domain == Domain.TARGET:
            return self.class_means @ self.shift_matrix.T + self.shift_offset
        return self.class_means

    def domain_sigma(self, domain: Domain) -> float:
        return self.class_sigma * (self.shift.scale if domain == Domain.TARGET else 1.0)

    def observed_core(self, x1: torch.Tensor) -> torch.Tensor:
        return x1.to(torch.float64) @ self.embed_obs

    def conditional_modes(self, x1: torch.Tensor) -> torch.Tensor:
        """
        Los dos modos equiprobables de x2 dado x1

        Returns:
            Tensor (N, 2, miss_dim)
        """
        core = self.observed_core(x1) @ self.mode_map.T
        offsets = torch.stack([self.mode_direction, -self.mode_direction]) * self.mode_gap
        modes_core = core[:, None, :] + offsets[None, :, :]
        return modes_core @ self.embed_miss.T

    def posterior(self, x1: torch.Tensor, domain: Domain) -> torch.Tensor:
        """p(y | x1, x2) = p(y | x1): x2 es independiente de y dado x1"""
        core = self.observed_core(x1)
        means = self.domain_means(domain)
        sigma = self.domain_sigma(domain)
        sq = torch.cdist(core, means) ** 2
        logits = torch.log(self.class_prior(domain))[None, :] - sq / (2 * sigma ** 2)
        return torch.softmax(logits, dim=1)

    def bayes_predict(self, x1: torch.Tensor, domain: Domain) -> torch.Tensor:
        return self.posterior(x1, domain).argmax(dim=1)

    def bayes_accuracy(self, dataset: RawDataset) -> float:
        """Exactitud del clasificador de Bayes sobre un dataset generado"""
        x1 = dataset.x[:, :self.obs_dim]
        preds = self.bayes_predict(x1, dataset.domain)
        return (preds == dataset.labels).double().mean().item()

    def sample(self, n: int, domain: Domain, generator: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
        prior = self.class_prior(domain)
        labels = torch.multinomial(prior, n, replacement=True, generator=generator)
        noise = torch.randn(n, CORE_DIM, generator=generator, dtype=torch.float64)
        core1 = self.class_means[labels] + self.class_sigma * noise
        if domain == Domain.TARGET:
            core1 = core1 @ self.shift_matrix.T + self.shift_offset

        # p(x2 | x1) no depende del dominio: mismo mapa y mismos modos
        bits = torch.randint(0, 2, (n,), generator=generator)
        signs = (1 - 2 * bits).to(torch.float64)[:, None]
        core2 = (core1 @ self.mode_map.T + signs * self.mode_gap * self.mode_direction[None, :]
                 + self.mode_sigma * torch.randn(n, CORE_DIM, generator=generator, dtype=torch.float64))

        x = torch.cat([core1 @ self.embed_obs.T, core2 @ self.embed_miss.T], dim=1)
        return x.to(torch.float32), labels


def make_synthetic_multimodal(n_per_domain: int,
                              num_classes: int,
                              shift_params: Optional[ShiftParams] = None,
                              seed: int = 0,
                              obs_dim: int = 10,
                              miss_dim: int = 10,
                              structure_seed: int = 0) -> Tuple[RawDataset, RawDataset, SyntheticOracle]:
    """
    Genera fuente y objetivo etiquetados con x2|x1 bimodal e idéntico en ambos dominios

    Args:
        n_per_domain: muestras por dominio (>= 100)
        num_classes: K (>= 2)
        shift_params: desplazamiento afín del objetivo; identidad = sin desplazamiento
        seed: semilla del muestreo (la estructura depende solo de structure_seed)

    Returns:
        (fuente, objetivo, oráculo)
    """
    if num_classes < 2:
        raise ContractViolationError("num_classes must be >= 2")
    if n_per_domain < 100:
        raise ContractViolationError("n_per_domain must be >= 100")
    shift = shift_params or ShiftParams.identity()
    if shift.target_class_prior is not None and len(shift.target_class_prior) != num_classes:
        raise ContractViolationError("target_class_prior length must equal num_classes")

    oracle = SyntheticOracle(num_classes, obs_dim, miss_dim, shift, structure_seed=structure_seed)
    generator = torch.Generator().manual_seed(seed)

    x_s, y_s = oracle.sample(n_per_domain, Domain.SOURCE, generator)
    x_t, y_t = oracle.sample(n_per_domain, Domain.TARGET, generator)

    source = RawDataset(x_s, y_s, Domain.SOURCE, "synthetic", num_classes)
    target = RawDataset(x_t, y_t, Domain.TARGET, "synthetic", num_classes)

    logger.info("Synthetic datasets generated",
                n_per_domain=n_per_domain,
                num_classes=num_classes,
                seed=seed,
                shifted=not shift.is_identity)
    return source, target, oracle
