"""
RunRepository - Persistencia de corridas en RUNS_DIR
Un directorio por corrida: config.env, record.json, metrics.csv, best.pt,
final.pt, diagnostics.json y pseudo_labels/
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd
import torch

from app.core.config import get_settings
from app.core.config_validator import ConfigValidator
from app.core.logger import get_logger
from app.models.networks import ComponentBundle
from app.models.training import DiagnosticsReport, ExperimentConfig, PseudoLabelSet, RunRecord
from app.repositories import CheckpointError, RunNotFoundError

logger = get_logger("run_repository")

METRIC_COLUMNS = ["epoch", "split", "metric", "value"]
CHECKPOINT_KEYS = {"architecture", "mask", "state_dict", "seed"}


def save_bundle(payload: Dict[str, Any], path: Union[str, Path]) -> Path:
    """Guarda un contenedor de checkpoint con torch.save"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointError(f"Unreadable checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or not CHECKPOINT_KEYS <= set(payload):
        raise CheckpointError(f"Checkpoint {path} lacks {sorted(CHECKPOINT_KEYS)}")
    return payload


def load_bundle(path: Union[str, Path]) -> ComponentBundle:
    """Reconstruye el bundle solo a partir del checkpoint"""
    payload = load_checkpoint(path)
    try:
        return ComponentBundle.from_checkpoint(payload)
    except (RuntimeError, KeyError, ValueError) as e:
        raise CheckpointError(f"Incompatible checkpoint {path}: {e}") from e


class RunRepository:
    """Acceso a los directorios de corrida"""

    def __init__(self, runs_dir: Optional[str] = None):
        self.runs_dir = Path(runs_dir or get_settings().runs_dir)

    def run_dir(self, run_id: str) -> Path:
        return self.runs_dir / run_id

    def _existing(self, run_id: str) -> Path:
        path = self.run_dir(run_id)
        if not (path / "record.json").exists():
            raise RunNotFoundError(f"Run '{run_id}' not found in {self.runs_dir}")
        return path

    def exists(self, run_id: str) -> bool:
        return (self.run_dir(run_id) / "record.json").exists()

    # --------------------------------------------------------------- escritura

    def save_run(self, record: RunRecord, config: Optional[ExperimentConfig] = None) -> Path:
        """
        Persiste una corrida completa

        Args:
            record: resultado del entrenamiento (checkpoints en memoria incluidos)
            config: configuración del experimento para el snapshot

        Returns:
            Directorio de la corrida
        """
        path = self.run_dir(record.run_id)
        path.mkdir(parents=True, exist_ok=True)

        if config is not None:
            (path / "config.env").write_text(ConfigValidator.serialize(config), encoding="utf-8")
        self.save_metrics(record)
        if record.best_checkpoint is not None:
            save_bundle(record.best_checkpoint, path / "best.pt")
        if record.final_checkpoint is not None:
            save_bundle(record.final_checkpoint, path / "final.pt")
        self._write_json(path / "record.json", record.model_dump(mode="json"))

        logger.info("Run saved", run_id=record.run_id, path=str(path),
                    status=record.status.value, metrics=len(record.metrics))
        return path

    def save_metrics(self, record: RunRecord) -> Path:
        path = self.run_dir(record.run_id) / "metrics.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame([row.model_dump() for row in record.metrics], columns=METRIC_COLUMNS)
        frame.to_csv(path, index=False, encoding="utf-8", float_format="%.10g")
        return path

    def save_diagnostics(self, run_id: str, report: DiagnosticsReport) -> Path:
        path = self._existing(run_id) / "diagnostics.json"
        self._write_json(path, report.model_dump(mode="json"))
        logger.info("Diagnostics saved", run_id=run_id, path=str(path))
        return path

    def save_pseudo_labels(self, run_id: str, epoch: int, selected: PseudoLabelSet) -> Path:
        """CSV id, label, confidence de las pseudo-etiquetas de una época"""
        path = self.run_dir(run_id) / "pseudo_labels" / f"epoch_{epoch:03d}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame({
            "id": selected.ids.tolist(),
            "label": selected.labels.tolist(),
            "confidence": selected.confidences.tolist(),
        }, columns=["id", "label", "confidence"])
        frame.to_csv(path, index=False, encoding="utf-8", float_format="%.10g")
        return path

    @staticmethod
    def _write_json(path: Path, data: Dict[str, Any]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)

    # ----------------------------------------------------------------- lectura

    def load_record(self, run_id: str) -> RunRecord:
        path = self._existing(run_id) / "record.json"
        with open(path, "r", encoding="utf-8") as f:
            return RunRecord(**json.load(f))

    def load_config(self, run_id: str) -> ExperimentConfig:
        path = self._existing(run_id) / "config.env"
        if not path.exists():
            raise RunNotFoundError(f"Run '{run_id}' has no config snapshot")
        return ConfigValidator.parse_file(path)

    def load_metrics(self, run_id: str) -> pd.DataFrame:
        path = self._existing(run_id) / "metrics.csv"
        if not path.exists():
            return pd.DataFrame(columns=METRIC_COLUMNS)
        return pd.read_csv(path, encoding="utf-8")

    def load_bundle(self, run_id: str, which: str = "best") -> ComponentBundle:
        """Bundle de la corrida; which en {best, final}"""
        if which not in ("best", "final"):
            raise CheckpointError(f"Unknown checkpoint '{which}'")
        return load_bundle(self._existing(run_id) / f"{which}.pt")

    def load_diagnostics(self, run_id: str) -> Optional[DiagnosticsReport]:
        path = self._existing(run_id) / "diagnostics.json"
        if not path.exists():
            return None
        with open(path, "r", encoding="utf-8") as f:
            return DiagnosticsReport(**json.load(f))

    def list_runs(self) -> List[str]:
        """Run ids ordenados"""
        if not self.runs_dir.exists():
            return []
        return sorted(p.name for p in self.runs_dir.iterdir() if (p / "record.json").exists())

    def collect_metrics(self, run_ids: Optional[List[str]] = None) -> pd.DataFrame:
        """
        Métricas de varias corridas en formato largo

        Returns:
            DataFrame con run_id, seed, epoch, split, metric_name, value
        """
        frames = []
        for run_id in run_ids or self.list_runs():
            record = self.load_record(run_id)
            frame = self.load_metrics(run_id)
            frame.insert(0, "seed", record.seed)
            frame.insert(0, "run_id", run_id)
            frames.append(frame)
        if not frames:
            return pd.DataFrame(columns=["run_id", "seed", "epoch", "split", "metric_name", "value"])
        combined = pd.concat(frames, ignore_index=True).rename(columns={"metric": "metric_name"})
        return combined[["run_id", "seed", "epoch", "split", "metric_name", "value"]]


# Instancia por defecto
_run_repository = None

def get_run_repository() -> RunRepository:
    """Factory function para obtener el RunRepository con la configuración vigente"""
    global _run_repository
    settings = get_settings()
    if _run_repository is None or str(_run_repository.runs_dir) != str(Path(settings.runs_dir)):
        _run_repository = RunRepository()
    return _run_repository
