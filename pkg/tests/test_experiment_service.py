"""
Tests de punta a punta: ExperimentService y la CLI sobre datos sintéticos pequeños
"""
import pandas as pd
import pytest

from app.core.config_validator import ConfigValidator
from app.models.training import ImputationMode, RunStatus, Variant
from app.repositories.run_repository import get_run_repository
from app.services.experiment_service import PATCH_FRACTIONS, ExperimentService, make_run_id, mark_best
from main import main

TINY_CONFIG = """
source=synthetic
target=synthetic
synthetic_n=200
synthetic_obs_dim=4
synthetic_miss_dim=4
patch_fraction=0.5
variant=adapt_impute
backend=adv
epochs=1
batch_size=32
batches_per_epoch=2
n_seeds=1
"""


@pytest.fixture
def config():
    return ConfigValidator.parse_text(TINY_CONFIG)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.env"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return str(path)


@pytest.fixture
def service():
    return ExperimentService(run_repository=get_run_repository())


def test_build_data_masks_target_only(service, config):
    data = service.build_data(config, seed=0)
    assert data.mask.missing_index.tolist() == [4, 5, 6, 7]
    assert data.training.source_train.x2_observed
    assert not data.training.target_train.x2_observed
    assert data.training.target_train.labels is None
    assert len(data.training.source_train) + len(data.training.source_val) == 200
    assert 0.0 < data.bayes_target_accuracy <= 1.0


def test_full_variant_keeps_target_features(service, config):
    data = service.build_data(config.with_overrides(variant=Variant.ADAPT_FULL), seed=0)
    assert data.training.target_train.x2_observed


def test_run_persists_everything(service, config):
    record = service.run(config, seed=0)
    assert record.status == RunStatus.COMPLETED
    assert record.metadata["variant"] == "adapt_impute"
    assert "bayes_target_accuracy" in record.metadata

    run_dir = service.runs.run_dir(record.run_id)
    for name in ("config.env", "metrics.csv", "best.pt", "final.pt", "record.json"):
        assert (run_dir / name).exists(), name
    assert service.runs.load_config(record.run_id).seed == 0


def test_run_with_refinement(service, config):
    refined_config = config.with_overrides(refine=True, refine_epochs=1, refine_threshold=0.0)
    record = service.run(refined_config, seed=0)
    refined_id = f"{record.run_id}_refined"
    refined = service.runs.load_record(refined_id)
    assert refined.metadata["refined_from"] == record.run_id
    assert (service.runs.run_dir(refined_id) / "pseudo_labels" / "epoch_000.csv").exists()


def test_ablation_grid_names(config):
    grid = ExperimentService.ablation_grid(config)
    names = [name for name, _ in grid]
    assert names[:2] == ["mse+L1", "mse-L1"]
    assert len(grid) == 8
    without_l1 = dict(grid)["adv-L1"]
    assert without_l1.resolved_lambda1 == 0.0
    assert without_l1.imputation_mode == ImputationMode.ADV

    sweep = ExperimentService.ablation_grid(config, mse_sweep=True)
    assert [cfg.lambda_mse for _, cfg in sweep] == [1.0, 0.1, 0.01, 0.0075, 0.005, 0.001]


@pytest.mark.slow
def test_sweep_patch_uses_full_counterpart_at_zero(service, config):
    frame = service.sweep_patch(config, fractions=[0.0, 0.5],
                                variants=[Variant.ADAPT_IMPUTE], n_seeds=1)
    assert list(frame.columns) == ["patch_fraction", "variant", "mean", "std", "n"]
    assert len(frame) == 2
    variants = {record.metadata["variant"] for record in map(service.runs.load_record,
                                                              service.runs.list_runs())}
    assert variants == {"adapt_full", "adapt_impute"}


@pytest.mark.slow
def test_report_aggregates_runs(service, config):
    service.run(config, seed=0)
    service.run(config, seed=1)
    result = service.report()
    assert set(result.metrics.columns) == {"run_id", "seed", "epoch", "split", "metric_name", "value"}
    row = result.summary[result.summary["metric_name"] == "final_target_accuracy"].iloc[0]
    assert row["n"] == 2


def test_sweep_plan_default_shape(service, config):
    """Por defecto: las cinco fracciones por todas las variantes"""
    assert PATCH_FRACTIONS == [0.3, 0.4, 0.5, 0.6, 0.7]
    plan, requested = service.sweep_plan(config)
    runs = plan.runs()
    assert len(runs) == len(Variant) * 5
    assert len(requested) == len(runs)
    assert set(requested) == set(Variant)
    assert {cfg.patch_fraction for cfg, _ in runs} == set(PATCH_FRACTIONS)


def test_sweep_plan_collapses_to_full_at_zero(service, config):
    plan, requested = service.sweep_plan(config, fractions=[0.0],
                                         variants=[Variant.ADAPT_IMPUTE, Variant.SOURCE_ZERO], n_seeds=2)
    assert [cfg.variant for cfg, _ in plan.runs()] == [Variant.ADAPT_FULL] * 2 + [Variant.SOURCE_FULL] * 2
    assert requested == [Variant.ADAPT_IMPUTE] * 2 + [Variant.SOURCE_ZERO] * 2


def test_mark_best_per_cell():
    summary = pd.DataFrame({
        "pair": ["p"] * 4,
        "patch_fraction": [0.5] * 4,
        "variant": ["adapt_impute", "adapt_zero"] * 2,
        "backend": ["adv"] * 4,
        "refined": [False] * 4,
        "metric_name": ["final_target_accuracy"] * 2 + ["final_target_cross_entropy"] * 2,
        "mean": [0.9, 0.7, 0.4, 0.2],
        "std": [0.01, 0.02, 0.0, 0.0],
        "n": [5] * 4,
    })
    marked = mark_best(summary)
    assert marked["best"].tolist() == [True, False, False, True]
    assert marked["display"].iloc[0] == "**0.9000 ± 0.0100**"
    assert marked["display"].iloc[1] == "0.7000 ± 0.0200"


def test_same_seed_gives_identical_metrics_file(service, config):
    """Misma configuración y semilla: metrics.csv idéntico byte a byte"""
    first = service.run(config, seed=0)
    second = service.run(config, seed=0)
    assert first.run_id != second.run_id
    first_bytes = (service.runs.run_dir(first.run_id) / "metrics.csv").read_bytes()
    second_bytes = (service.runs.run_dir(second.run_id) / "metrics.csv").read_bytes()
    assert first_bytes == second_bytes

    # un directorio de corrida alcanza para reproducir sus filas del reporte
    once = service.report([first.run_id])
    again = service.report([first.run_id])
    pd.testing.assert_frame_equal(once.summary, again.summary)
    pd.testing.assert_frame_equal(once.metrics, again.metrics)
    row = once.summary[once.summary["metric_name"] == "final_target_accuracy"].iloc[0]
    assert row["mean"] == first.summary["final_target_accuracy"]
    assert row["std"] == 0.0


def test_report_tables(service, config):
    service.run(config, seed=0)
    service.run(config.with_overrides(variant=Variant.ADAPT_ZERO), seed=0)
    result = service.report()

    assert {"best", "display"} <= set(result.summary.columns)
    accuracy = result.per_metric["final_target_accuracy"]
    assert len(accuracy) == 2
    assert "metric_name" not in accuracy.columns
    assert accuracy["best"].sum() >= 1
    assert set(result.per_metric) == set(result.summary["metric_name"])

    sweep = result.patch_sweep_plot
    assert list(sweep.columns) == ["pair", "backend", "variant", "patch_fraction", "mean", "std", "n"]
    assert set(sweep["variant"]) == {"adapt_impute", "adapt_zero"}

    ablation = result.ablation_plot
    assert list(ablation.columns) == ["pair", "imputation_mode", "lambda_mse", "with_l1", "mean", "std", "n"]
    assert len(ablation) == 1
    assert bool(ablation["with_l1"].iloc[0])


def test_run_ids_are_descriptive(config):
    run_id = make_run_id(config, 3)
    assert run_id.startswith("synthetic-synthetic_adapt_impute_adv_3_")


def test_cli_train_and_report(config_file, isolated_settings):
    assert main(["train", config_file]) == 0
    runs = get_run_repository().list_runs()
    assert len(runs) == 1

    out_dir = isolated_settings / "report"
    assert main(["report", "--out-dir", str(out_dir)]) == 0
    summary = pd.read_csv(out_dir / "report_summary.csv")
    assert {"mean", "best", "display"} <= set(summary.columns)
    for name in ("report_final_target_accuracy.csv", "patch_sweep_plot.csv", "ablation_plot.csv"):
        assert (out_dir / name).exists(), name


def test_cli_rejects_unknown_keys(config_file, capsys):
    assert main(["train", config_file, "--set", "learning_rate=0.1"]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_cli_missing_run(capsys):
    assert main(["diagnose", "no_such_run"]) == 1
    assert "no_such_run" in capsys.readouterr().err
