"""
Máscaras de faltantes no estocásticas y separación en componentes
"""
import math
from typing import Iterable, Optional, Sequence, Union

import torch

from app.core.logger import get_logger
from app.models.data import Domain, FixedMask, MaskedDataset, RawDataset
from app.services import ConfigurationError, ContractViolationError

logger = get_logger("masking")


def make_horizontal_patch_mask(image_shape: Sequence[int], patch_fraction: float) -> FixedMask:
    """
    Marca como faltantes las filas inferiores de la imagen en todos los canales

    Args:
        image_shape: (C, H, W)
        patch_fraction: fracción de filas a eliminar, en [0, 1]; con 1 no queda
            nada observado y FixedMask la rechaza (ConfigurationError)

    Returns:
        FixedMask con descriptor {"kind": "rows", "start", "stop"}
    """
    if not 0.0 <= patch_fraction <= 1.0:
        raise ContractViolationError(f"patch_fraction must be in [0, 1], got {patch_fraction}")
    if len(image_shape) != 3:
        raise ConfigurationError(f"image_shape must be (C, H, W), got {tuple(image_shape)}")

    channels, height, width = (int(s) for s in image_shape)
    # floor con tolerancia: 0.3 * 32 = 9.6 -> 9 filas
    n_rows = int(math.floor(patch_fraction * height + 1e-9))
    start = height - n_rows

    grid = torch.zeros((channels, height, width), dtype=torch.bool)
    grid[:, start:, :] = True

    logger.debug("Horizontal patch mask built", rows=n_rows, start=start, shape=list(image_shape))
    return FixedMask(
        (channels, height, width),
        grid,
        {"kind": "rows", "start": start, "stop": height, "fraction": patch_fraction},
    )


def make_column_mask(n_features: int,
                     missing_columns: Optional[Iterable[int]] = None,
                     fraction: Optional[float] = None,
                     column_names: Optional[Sequence[str]] = None) -> FixedMask:
    """
    Máscara tabular: columnas explícitas o fracción de columnas finales
    """
    mask = torch.zeros(n_features, dtype=torch.bool)
    if missing_columns is not None:
        cols = sorted(set(int(c) for c in missing_columns))
        if cols and (cols[0] < 0 or cols[-1] >= n_features):
            raise ConfigurationError(f"Missing column index out of range for {n_features} features")
        mask[cols] = True
    elif fraction is not None:
        if not 0.0 <= fraction <= 1.0:
            raise ContractViolationError(f"fraction must be in [0, 1], got {fraction}")
        n_cols = int(math.floor(fraction * n_features + 1e-9))
        cols = list(range(n_features - n_cols, n_features))
        mask[cols] = True
    else:
        cols = []

    descriptor = {"kind": "columns", "columns": cols}
    if column_names is not None:
        descriptor["names"] = [column_names[c] for c in cols]
    return FixedMask((n_features,), mask, descriptor)


def apply_mask(samples: Union[RawDataset, MaskedDataset],
               mask: FixedMask,
               domains_to_mask: Iterable[Union[Domain, str]] = (Domain.TARGET,)) -> MaskedDataset:
    """
    Separa las muestras según la máscara; en los dominios enmascarados la
    componente faltante queda en cero

    Args:
        samples: dataset crudo (o ya enmascarado, se usa su vista completa)
        mask: máscara fija del dataset
        domains_to_mask: dominios cuya componente faltante se elimina

    Returns:
        MaskedDataset con x1 observada y x2 (cero si el dominio está enmascarado)
    """
    raw = samples.to_raw() if isinstance(samples, MaskedDataset) else samples
    masked_domains = {Domain(d) for d in domains_to_mask}

    flat_size = 1
    for s in raw.sample_shape:
        flat_size *= s
    if flat_size != mask.n:
        raise ConfigurationError(
            f"Mask length {mask.n} does not match flattened sample dimension {flat_size}"
        )

    x1, x2 = mask.split(raw.x)
    is_masked = raw.domain in masked_domains and not mask.is_full
    if is_masked:
        x2 = torch.zeros_like(x2)

    logger.info("Mask applied",
                dataset=raw.name,
                domain=raw.domain.value,
                samples=len(raw),
                observed=mask.n_observed,
                missing=mask.n_missing,
                masked=is_masked)

    return MaskedDataset(
        x1=x1.contiguous(),
        x2=x2.contiguous(),
        labels=raw.labels,
        domain=raw.domain,
        mask=mask,
        x2_observed=not is_masked,
        name=raw.name,
        num_classes=raw.num_classes,
        ids=raw.ids,
    )
