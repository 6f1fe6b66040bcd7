"""
Fixtures compartidas: directorios temporales, settings aislados y datos sintéticos pequeños
"""
import pytest

from app.core.config import reset_settings
from app.models.training import TrainConfig, Variant
from app.services.synthetic import ShiftParams, make_synthetic_multimodal
from tests.helpers import make_bundle, make_training_data


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """DATA_DIR y RUNS_DIR temporales; singleton de settings reiniciado"""
    monkeypatch.setenv("DATA_DIR", str(tmp_path / "data"))
    monkeypatch.setenv("RUNS_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("ALLOW_DOWNLOAD", "false")
    monkeypatch.setenv("LOG_LEVEL", "WARNING")
    monkeypatch.setenv("ENVIRONMENT", "testing")
    reset_settings()
    yield tmp_path
    reset_settings()


@pytest.fixture
def synthetic_raw():
    """Fuente y objetivo sintéticos: 3 clases, 4 + 4 features"""
    return make_synthetic_multimodal(300, 3, ShiftParams.default(), seed=0, obs_dim=4, miss_dim=4)


@pytest.fixture
def synthetic_mask(synthetic_raw):
    return synthetic_raw[2].mask()


@pytest.fixture
def training_data(synthetic_raw, synthetic_mask):
    return make_training_data(synthetic_raw, synthetic_mask)


@pytest.fixture
def bundle(synthetic_mask):
    return make_bundle(synthetic_mask)


@pytest.fixture
def small_config():
    """Entrenamiento corto en CPU"""
    return TrainConfig(
        variant=Variant.ADAPT_IMPUTE,
        epochs=2,
        batch_size=32,
        lr_i=1e-3,
        seed=0,
        balanced_source=True,
        batches_per_epoch=4,
        eval_batch_size=128,
    )

