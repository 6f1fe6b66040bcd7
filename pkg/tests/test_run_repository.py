"""
Tests para la persistencia de corridas
"""
import pytest
import torch

from app.core.config_validator import ConfigValidator
from app.models.training import PseudoLabelSet, RunRecord
from app.repositories import CheckpointError, RunNotFoundError
from app.repositories.run_repository import RunRepository, get_run_repository, load_checkpoint


@pytest.fixture
def repository(tmp_path):
    return RunRepository(str(tmp_path / "runs"))


@pytest.fixture
def record(bundle):
    record = RunRecord(run_id="synthetic_adapt_impute_adv_0_1", seed=0)
    record.add_metrics(0, "target_test", {"accuracy": 0.5, "cross_entropy": 1.1})
    record.add_metrics(1, "target_test", {"accuracy": 0.75, "cross_entropy": 0.9})
    record.summary = {"final_target_accuracy": 0.75}
    record.best_epoch = 1
    record.best_checkpoint = bundle.to_checkpoint(seed=0)
    record.final_checkpoint = bundle.to_checkpoint(seed=0)
    return record


def test_save_and_load_run(repository, record, bundle):
    config = ConfigValidator.parse_text("source=synthetic\ntarget=synthetic\nepochs=2\n")
    repository.save_run(record, config)

    loaded = repository.load_record(record.run_id)
    assert loaded.summary == record.summary
    assert loaded.best_epoch == 1
    assert [m.model_dump() for m in loaded.metrics] == [m.model_dump() for m in record.metrics]
    assert repository.load_config(record.run_id) == config

    restored = repository.load_bundle(record.run_id, "best")
    for name, value in bundle.state_dict().items():
        assert torch.equal(restored.state_dict()[name], value), name


def test_metrics_csv_columns(repository, record):
    repository.save_run(record)
    frame = repository.load_metrics(record.run_id)
    assert list(frame.columns) == ["epoch", "split", "metric", "value"]
    assert len(frame) == 4


def test_collect_metrics(repository, record):
    repository.save_run(record)
    frame = repository.collect_metrics()
    assert list(frame.columns) == ["run_id", "seed", "epoch", "split", "metric_name", "value"]
    assert set(frame["run_id"]) == {record.run_id}


def test_unknown_run(repository):
    with pytest.raises(RunNotFoundError):
        repository.load_record("missing")
    assert not repository.exists("missing")
    assert repository.list_runs() == []


def test_bad_checkpoints(repository, record, tmp_path):
    repository.save_run(record)
    with pytest.raises(CheckpointError):
        repository.load_bundle(record.run_id, "latest")

    broken = tmp_path / "broken.pt"
    torch.save({"state_dict": {}}, broken)
    with pytest.raises(CheckpointError):
        load_checkpoint(broken)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.pt")


def test_pseudo_label_export(repository, record):
    repository.save_run(record)
    selected = PseudoLabelSet(
        positions=torch.tensor([0, 2]),
        ids=torch.tensor([10, 12]),
        labels=torch.tensor([1, 0]),
        confidences=torch.tensor([0.97, 0.99]),
        threshold=0.95,
    )
    path = repository.save_pseudo_labels(record.run_id, 0, selected)
    assert path.name == "epoch_000.csv"
    assert path.read_text(encoding="utf-8").splitlines()[0] == "id,label,confidence"


def test_factory_follows_settings(isolated_settings):
    repository = get_run_repository()
    assert str(repository.runs_dir) == str(isolated_settings / "runs")
