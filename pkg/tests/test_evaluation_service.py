"""
Tests para métricas, ponderación por importancia, diagnósticos y exportación
"""
import math

import numpy as np
import pandas as pd
import pytest
import torch

from app.models.training import DiagnosticsReport, Variant
from app.services import ContractViolationError
from app.services.evaluation_service import (
    EvaluationService,
    accuracy,
    aggregate,
    aggregate_frame,
    cross_entropy,
    density_ratio,
    dev_risk,
    error_rate,
    heldout_domain_error,
    importance_weights,
    max_density_ratio,
    proxy_divergence,
)
from tests.helpers import make_bundle


@pytest.fixture
def evaluation():
    return EvaluationService(device="cpu", batch_size=128)


def test_accuracy_and_error_rate():
    predictions = torch.tensor([0, 1, 2, 2])
    labels = torch.tensor([0, 1, 1, 2])
    assert accuracy(predictions, labels) == 0.75
    assert error_rate(predictions, labels) == 0.25
    with pytest.raises(ContractViolationError):
        accuracy(predictions, labels[:2])


def test_cross_entropy_of_uniform_prediction():
    probs = torch.full((5, 3), 1 / 3)
    assert cross_entropy(probs, torch.tensor([0, 1, 2, 0, 1])) == pytest.approx(math.log(3))


def test_domain_error_on_separated_sets():
    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 1.0, size=(2000, 2))
    b = rng.normal(8.0, 1.0, size=(2000, 2))
    assert heldout_domain_error(a, b) < 0.1
    assert proxy_divergence(a, b) > 1.5


def test_proxy_divergence_is_bounded():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(150, 3))
    b = rng.normal(size=(150, 3))
    assert 0.0 <= proxy_divergence(a, b) <= 2.0


def test_domain_error_requires_enough_samples():
    with pytest.raises(ContractViolationError):
        heldout_domain_error(np.zeros((50, 2)), np.ones((200, 2)))


def test_max_density_ratio_at_least_one():
    p = np.array([0.1, 0.2, 0.7])
    q = np.array([0.3, 0.3, 0.4])
    assert max_density_ratio(p, q) == pytest.approx(0.7 / 0.4)
    assert max_density_ratio(q, q) == pytest.approx(1.0)


def test_density_ratio_from_source_probability():
    """D1 da P(fuente): D1 = 0.8 implica p_T/p_S = 0.25"""
    np.testing.assert_allclose(density_ratio([0.5, 0.8]), [1.0, 0.25])


def test_importance_weights_have_unit_mean():
    weights = importance_weights(np.array([0.2, 0.5, 0.9, 0.6]))
    assert weights.mean() == pytest.approx(1.0)


def test_dev_risk_with_uninformative_discriminator_is_mean_loss():
    losses = np.array([0.2, 1.0, 0.4, 0.6])
    raw = density_ratio(np.full(4, 0.5))
    assert dev_risk(losses, raw) == pytest.approx(losses.mean())


def test_dev_risk_control_variate():
    losses = np.array([1.0, 2.0, 3.0])
    w = np.array([0.5, 1.0, 1.5])
    wl = w * losses
    eta = -np.cov(wl, w, bias=True)[0, 1] / w.var()
    assert dev_risk(losses, w) == pytest.approx(wl.mean() + eta * (w.mean() - 1.0))


def test_aggregate_uses_population_std():
    mean, std = aggregate([1.0, 2.0, 3.0])
    assert mean == 2.0
    assert std == pytest.approx(math.sqrt(2 / 3))


def test_aggregate_frame():
    frame = pd.DataFrame({"variant": ["a", "a", "b"], "value": [1.0, 3.0, 5.0]})
    result = aggregate_frame(frame, ["variant"])
    row = result[result["variant"] == "a"].iloc[0]
    assert row["mean"] == 2.0 and row["std"] == 1.0 and row["n"] == 2
    assert result[result["variant"] == "b"].iloc[0]["std"] == 0.0


def test_diagnose_report_ranges(evaluation, bundle, training_data):
    report = evaluation.diagnose(bundle, Variant.ADAPT_IMPUTE,
                                 training_data.source_train, training_data.target_test)
    assert isinstance(report, DiagnosticsReport)
    assert report.imputation_mse_source is not None
    assert report.oracle_target_risk is not None
    assert 0.0 <= report.lambda_proxy <= 2.0
    assert report.lambda_oracle_term is not None


def test_lambda_terms_use_a_separate_labeller(evaluation, bundle, training_data):
    """Con un etiquetador fresco el término observable no colapsa a cero"""
    terms = evaluation.lambda_terms(bundle, Variant.ADAPT_IMPUTE, training_data.source_train,
                                    training_data.target_test, threshold=0.0)
    assert terms["pseudo_label_count"] == 300.0
    assert terms["pseudo_target_error"] > 0.0
    assert terms["pseudo_label_error"] is not None


def test_lambda_terms_with_true_pseudo_labels(evaluation, bundle, training_data):
    """Pseudo-etiquetas iguales a las predicciones de h: término observable nulo"""
    from app.services.refinement_service import select_pseudo_labels

    target = training_data.target_test
    probs = evaluation._latents(bundle, target, Variant.ADAPT_IMPUTE.value)["probs"]
    own = select_pseudo_labels(probs, target.ids, 0.0)
    terms = evaluation.lambda_terms(bundle, Variant.ADAPT_IMPUTE, training_data.source_train,
                                    target, pseudo_labels=own)
    assert terms["pseudo_target_error"] == 0.0


def test_lambda_terms_upper_bound_oracle_joint_risk(evaluation, bundle, training_data):
    """En datos sintéticos los tres términos acotan el riesgo conjunto medido con oráculo"""
    source, target = training_data.source_train, training_data.target_test
    terms = evaluation.lambda_terms(bundle, Variant.ADAPT_IMPUTE, source, target, threshold=0.0)
    bound = terms["source_error"] + terms["pseudo_target_error"] + terms["pseudo_label_error"]

    # desigualdad triangular sobre el objetivo completo
    probs = evaluation._latents(bundle, target, Variant.ADAPT_IMPUTE.value)["probs"]
    target_error = error_rate(probs.argmax(dim=1), target.labels)
    assert bound >= terms["source_error"] + target_error - 1e-12

    report = evaluation.diagnose(bundle, Variant.ADAPT_IMPUTE, source, target, threshold=0.0)
    assert report.oracle_joint_risk is not None
    assert bound >= report.oracle_joint_risk


def test_lambda_terms_without_confident_predictions(evaluation, bundle, training_data):
    terms = evaluation.lambda_terms(bundle, Variant.ADAPT_IMPUTE, training_data.source_val,
                                    training_data.target_train, threshold=1.01)
    assert terms["pseudo_label_count"] == 0.0
    assert terms["pseudo_target_error"] == 0.0
    assert terms["pseudo_label_error"] is None


def test_select_model_is_deterministic(evaluation, synthetic_mask, training_data):
    candidates = [("run_a", make_bundle(synthetic_mask, seed=0), Variant.ADAPT_IMPUTE),
                  ("run_b", make_bundle(synthetic_mask, seed=1), Variant.SOURCE_ZERO)]
    best, risks = evaluation.select_model_iw(candidates, training_data.source_train,
                                             training_data.target_train)
    again, _ = evaluation.select_model_iw(candidates, training_data.source_train,
                                          training_data.target_train)
    assert best == again
    assert set(risks) == {"run_a", "run_b"}
    assert all(np.isfinite(r["dev_risk"]) for r in risks.values())


def test_select_model_needs_candidates(evaluation, training_data):
    with pytest.raises(ContractViolationError):
        evaluation.select_model_iw([], training_data.source_val, training_data.target_train)


def test_export_embeddings(evaluation, bundle, training_data, tmp_path):
    out = tmp_path / "embeddings.csv"
    frame = evaluation.export_embeddings(bundle, Variant.ADAPT_IMPUTE,
                                         [training_data.source_val, training_data.target_train],
                                         str(out))
    assert list(frame.columns) == ["id", "domain", "label", "x", "y"]
    assert len(frame) == 50 + 300
    assert frame[frame["domain"] == "target"]["label"].isna().all()
    assert out.exists()
