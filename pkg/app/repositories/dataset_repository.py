"""
DatasetRepository - Carga de dígitos y tablas desde el directorio de datos
"""
import json
from pathlib import Path
from typing import List, Optional, Tuple
from urllib.error import URLError

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

from app.core.config import get_settings
from app.core.logger import get_logger
from app.models.data import DatasetName, DatasetSpec, Domain, FixedMask, RawDataset, Split
from app.repositories import DataFetchError
from app.services import ConfigurationError
from app.services.masking import make_column_mask

logger = get_logger("dataset_repository")

IMAGE_SIZE = 32
DIGIT_CLASSES = 10
THREE_CHANNEL = {DatasetName.SVHN, DatasetName.MNISTM}

# 9298 imágenes públicas re-particionadas como en los conteos publicados
USPS_TRAIN_SIZE = 7438
USPS_TEST_SIZE = 1860


def resolve_channels(source_name: DatasetName, target_name: DatasetName) -> int:
    """3 canales si alguno de los dominios es a color, 1 si no"""
    names = {DatasetName(source_name), DatasetName(target_name)}
    return 3 if names & THREE_CHANNEL else 1


class DatasetRepository:
    """Acceso a los datasets cacheados en DATA_DIR"""

    def __init__(self, data_dir: Optional[str] = None, allow_download: Optional[bool] = None):
        settings = get_settings()
        self.data_dir = Path(data_dir or settings.data_dir)
        self.allow_download = settings.allow_download if allow_download is None else allow_download

    # ------------------------------------------------------------------ digits

    def load_digits(self, spec: DatasetSpec, domain: Domain = Domain.SOURCE) -> RawDataset:
        """
        Carga un dataset de dígitos escalado a 32x32 y normalizado en [-1, 1]

        Args:
            spec: especificación (nombre, partición, submuestreo, canales)
            domain: dominio asignado a las muestras

        Returns:
            RawDataset con x de forma (N, C, 32, 32)
        """
        if not spec.name.is_digits:
            raise ConfigurationError(f"'{spec.name.value}' is not a digits dataset")

        images, labels = self._read_digits(spec.name, spec.split)
        ids = torch.arange(images.shape[0])

        if spec.subsample is not None:
            if spec.subsample > images.shape[0]:
                raise ConfigurationError(
                    f"subsample={spec.subsample} exceeds dataset size {images.shape[0]}"
                )
            generator = torch.Generator().manual_seed(spec.seed)
            keep = torch.randperm(images.shape[0], generator=generator)[:spec.subsample]
            images, labels, ids = images[keep], labels[keep], ids[keep]

        x = self._normalize(images)
        channels = spec.channels or x.shape[1]
        if channels == 3 and x.shape[1] == 1:
            x = x.repeat(1, 3, 1, 1)
        elif channels == 1 and x.shape[1] == 3:
            raise ConfigurationError(f"'{spec.name.value}' has 3 channels; cannot load as 1")

        logger.info("Digits dataset loaded",
                    dataset=spec.name.value,
                    split=spec.split.value,
                    samples=x.shape[0],
                    channels=x.shape[1])
        return RawDataset(x, labels, domain, spec.name.value, DIGIT_CLASSES, ids)

    def prepare_digits(self, names: List[DatasetName]) -> List[str]:
        """Descarga (si falta) cada dataset de dígitos; devuelve los preparados"""
        prepared = []
        for name in names:
            for split in (Split.TRAIN, Split.TEST):
                self._read_digits(DatasetName(name), split, download=True)
            prepared.append(DatasetName(name).value)
            logger.info("Digits dataset prepared", dataset=DatasetName(name).value,
                        data_dir=str(self.data_dir))
        return prepared

    def _read_digits(self, name: DatasetName, split: Split,
                     download: Optional[bool] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        """Imágenes uint8 (N, C, H, W) y etiquetas"""
        from torchvision import datasets

        download = self.allow_download if download is None else download
        root = str(self.data_dir)
        train = split == Split.TRAIN
        try:
            if name == DatasetName.MNIST:
                ds = datasets.MNIST(root, train=train, download=download)
                return ds.data.unsqueeze(1), ds.targets.long()

            if name == DatasetName.USPS:
                parts = [datasets.USPS(root, train=flag, download=download) for flag in (True, False)]
                images = torch.cat([torch.as_tensor(p.data) for p in parts]).unsqueeze(1)
                labels = torch.cat([torch.as_tensor(p.targets) for p in parts]).long()
                if train:
                    return images[:USPS_TRAIN_SIZE], labels[:USPS_TRAIN_SIZE]
                return images[-USPS_TEST_SIZE:], labels[-USPS_TEST_SIZE:]

            if name == DatasetName.SVHN:
                ds = datasets.SVHN(root, split=split.value, download=download)
                return torch.as_tensor(ds.data), torch.as_tensor(ds.labels).long()

            if name == DatasetName.MNISTM:
                return self._read_mnistm(split)

        except (RuntimeError, URLError, OSError) as e:
            logger.error("Dataset fetch failed", dataset=name.value, split=split.value, error=str(e))
            raise DataFetchError(
                f"Could not load '{name.value}' ({split.value}) from {root}: {e}"
            ) from e

        raise ConfigurationError(f"Unknown digits dataset '{name}'")

    def _read_mnistm(self, split: Split) -> Tuple[torch.Tensor, torch.Tensor]:
        path = self.data_dir / "mnistm" / f"mnistm_{split.value}.pt"
        if not path.exists():
            raise DataFetchError(
                f"MNIST-M cache not found at {path}; expected a torch file with 'x' and 'y'"
            )
        payload = torch.load(path, map_location="cpu")
        images = torch.as_tensor(payload["x"])
        if images.ndim == 4 and images.shape[-1] == 3:
            images = images.permute(0, 3, 1, 2)
        return images.contiguous(), torch.as_tensor(payload["y"]).long()

    @staticmethod
    def _normalize(images: torch.Tensor) -> torch.Tensor:
        x = images.to(torch.float32) / 255.0
        if x.shape[-1] != IMAGE_SIZE or x.shape[-2] != IMAGE_SIZE:
            x = F.interpolate(x, size=(IMAGE_SIZE, IMAGE_SIZE), mode="bilinear", align_corners=False)
        return (x * 2.0 - 1.0).clamp_(-1.0, 1.0)

    # ----------------------------------------------------------------- tabular

    def load_tabular(self, spec: DatasetSpec, domain: Domain) -> Tuple[RawDataset, FixedMask, bool]:
        """
        Carga un CSV numérico con encabezado y su declaración de máscara

        La declaración JSON tiene la forma
        {"missing": [...], "structural": false, "columns": [...], "num_classes": 2}.
        Con faltantes estructurales el CSV del objetivo no trae esas columnas.

        Returns:
            (dataset, máscara, faltantes estructurales)
        """
        csv_path = Path(spec.path)
        if not csv_path.exists():
            raise DataFetchError(f"Tabular file not found: {csv_path}")
        declaration = self._read_mask_declaration(spec)

        frame = pd.read_csv(csv_path)
        labels = None
        if spec.label_column in frame.columns:
            labels = torch.as_tensor(frame[spec.label_column].to_numpy(dtype=np.int64))
            frame = frame.drop(columns=[spec.label_column])

        missing = list(declaration.get("missing", []))
        columns = list(declaration.get("columns") or list(frame.columns) + [
            c for c in missing if c not in frame.columns
        ])
        unknown = [c for c in missing if c not in columns]
        if unknown:
            raise ConfigurationError(f"Mask declares unknown columns: {unknown}")

        absent = [c for c in columns if c not in frame.columns]
        if absent and not set(absent) <= set(missing):
            raise ConfigurationError(f"Columns absent from {csv_path.name}: {absent}")
        for column in absent:
            frame[column] = 0.0

        values = frame[columns].to_numpy(dtype=np.float32)
        if not np.isfinite(values).all():
            raise ConfigurationError(f"Non-finite values in {csv_path.name}")

        x = torch.as_tensor(values)
        ids = torch.arange(x.shape[0])
        if spec.subsample is not None:
            if spec.subsample > x.shape[0]:
                raise ConfigurationError(f"subsample={spec.subsample} exceeds dataset size {x.shape[0]}")
            keep = torch.randperm(x.shape[0], generator=torch.Generator().manual_seed(spec.seed))[:spec.subsample]
            x, ids = x[keep], ids[keep]
            labels = labels[keep] if labels is not None else None

        num_classes = int(declaration.get("num_classes")
                          or (int(labels.max().item()) + 1 if labels is not None else 2))
        mask = make_column_mask(len(columns), [columns.index(c) for c in missing], column_names=columns)
        structural = bool(declaration.get("structural", False)) or bool(absent)

        logger.info("Tabular dataset loaded",
                    file=str(csv_path),
                    domain=Domain(domain).value,
                    samples=x.shape[0],
                    features=len(columns),
                    missing=len(missing),
                    structural=structural)
        return RawDataset(x, labels, domain, "tabular", num_classes, ids), mask, structural

    @staticmethod
    def _read_mask_declaration(spec: DatasetSpec) -> dict:
        if not spec.mask_path:
            return {"missing": []}
        path = Path(spec.mask_path)
        if not path.exists():
            raise DataFetchError(f"Mask declaration not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid JSON in mask declaration {path}: {e}") from e


# Instancia por defecto
_dataset_repository = None

def get_dataset_repository() -> DatasetRepository:
    """Factory function para obtener el DatasetRepository con la configuración vigente"""
    global _dataset_repository
    settings = get_settings()
    if _dataset_repository is None or str(_dataset_repository.data_dir) != str(Path(settings.data_dir)):
        _dataset_repository = DatasetRepository()
    return _dataset_repository
