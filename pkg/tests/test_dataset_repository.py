"""
Tests para el DatasetRepository (tablas locales y rutas de error de dígitos)
"""
import json

import pandas as pd
import pytest
import torch

from app.models.data import DatasetName, DatasetSpec, Domain, Split
from app.repositories import DataFetchError
from app.repositories.dataset_repository import DatasetRepository, resolve_channels
from app.services import ConfigurationError


@pytest.fixture
def repository(tmp_path):
    return DatasetRepository(data_dir=str(tmp_path / "data"), allow_download=False)


@pytest.fixture
def tabular_files(tmp_path):
    source = pd.DataFrame({"age": [1.0, 2.0, 3.0, 4.0], "visits": [0.5, 0.1, 0.3, 0.9],
                           "partner": [3.0, 1.0, 2.0, 0.0], "label": [0, 1, 0, 1]})
    target = source.drop(columns=["partner", "label"])
    source.to_csv(tmp_path / "source.csv", index=False)
    target.to_csv(tmp_path / "target.csv", index=False)
    mask = tmp_path / "mask.json"
    mask.write_text(json.dumps({"missing": ["partner"], "structural": True,
                                "columns": ["age", "visits", "partner"]}), encoding="utf-8")
    return tmp_path / "source.csv", tmp_path / "target.csv", mask


def test_resolve_channels():
    assert resolve_channels(DatasetName.MNIST, DatasetName.USPS) == 1
    assert resolve_channels(DatasetName.SVHN, DatasetName.MNIST) == 3
    assert resolve_channels(DatasetName.MNIST, DatasetName.MNISTM) == 3


def test_tabular_source_keeps_all_columns(repository, tabular_files):
    source_csv, _, mask_path = tabular_files
    spec = DatasetSpec(name=DatasetName.TABULAR, path=str(source_csv), mask_path=str(mask_path))
    dataset, mask, structural = repository.load_tabular(spec, Domain.SOURCE)

    assert dataset.x.shape == (4, 3)
    assert dataset.labels.tolist() == [0, 1, 0, 1]
    assert mask.missing_index.tolist() == [2]
    assert mask.block_descriptor["names"] == ["partner"]
    assert structural


def test_tabular_target_without_partner_columns(repository, tabular_files):
    _, target_csv, mask_path = tabular_files
    spec = DatasetSpec(name=DatasetName.TABULAR, path=str(target_csv), mask_path=str(mask_path))
    dataset, _, structural = repository.load_tabular(spec, Domain.TARGET)

    assert dataset.labels is None
    assert torch.equal(dataset.x[:, 2], torch.zeros(4))
    assert structural


def test_tabular_missing_file(repository, tmp_path):
    spec = DatasetSpec(name=DatasetName.TABULAR, path=str(tmp_path / "absent.csv"))
    with pytest.raises(DataFetchError):
        repository.load_tabular(spec, Domain.SOURCE)


def test_tabular_unknown_mask_column(repository, tabular_files, tmp_path):
    source_csv, _, _ = tabular_files
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"missing": ["nope"], "columns": ["age", "visits", "partner"]}),
                   encoding="utf-8")
    spec = DatasetSpec(name=DatasetName.TABULAR, path=str(source_csv), mask_path=str(bad))
    with pytest.raises(ConfigurationError):
        repository.load_tabular(spec, Domain.SOURCE)


def test_mnistm_requires_local_cache(repository):
    spec = DatasetSpec(name=DatasetName.MNISTM, split=Split.TRAIN)
    with pytest.raises(DataFetchError, match="mnistm_train.pt"):
        repository.load_digits(spec)


def test_mnist_without_download(repository):
    with pytest.raises(DataFetchError):
        repository.load_digits(DatasetSpec(name=DatasetName.MNIST))


def test_digits_loader_rejects_tabular(repository, tabular_files):
    source_csv, _, _ = tabular_files
    with pytest.raises(ConfigurationError):
        repository.load_digits(DatasetSpec(name=DatasetName.TABULAR, path=str(source_csv)))
