"""
EvaluationService - Métricas, selección de modelos no supervisada, diagnósticos y exportación
"""
import time
import warnings
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from sklearn.decomposition import PCA
from sklearn.exceptions import ConvergenceWarning
from sklearn.model_selection import train_test_split
from sklearn.neural_network import MLPClassifier
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from app.core.logger import get_logger
from app.models.data import MaskedDataset
from app.models.networks import ComponentBundle
from app.models.training import DiagnosticsReport, PseudoLabelSet, Variant
from app.services import ContractViolationError
from app.services.batching import sequential_batches
from app.services.losses import EPS

logger = get_logger("evaluation_service")

TensorLike = Union[torch.Tensor, np.ndarray, Sequence]

MIN_DIAGNOSTIC_SAMPLES = 100
DEGENERATE_WEIGHT = 1e-12


def _as_tensor(values: TensorLike) -> torch.Tensor:
    return values if isinstance(values, torch.Tensor) else torch.as_tensor(np.asarray(values))


def _as_numpy(values: TensorLike) -> np.ndarray:
    if isinstance(values, torch.Tensor):
        return values.detach().cpu().numpy()
    return np.asarray(values)


# ------------------------------------------------------------------ métricas

def accuracy(predictions: TensorLike, labels: TensorLike) -> float:
    """Fracción de aciertos"""
    predictions, labels = _as_tensor(predictions), _as_tensor(labels)
    if predictions.shape[0] != labels.shape[0]:
        raise ContractViolationError("predictions and labels differ in length")
    if labels.numel() == 0:
        return 0.0
    return float((predictions.long() == labels.long()).sum().item()) / labels.shape[0]


def error_rate(predictions: TensorLike, labels: TensorLike) -> float:
    return 1.0 - accuracy(predictions, labels)


def cross_entropy(probabilities: TensorLike, labels: TensorLike) -> float:
    """Entropía cruzada media con log natural acotado en 1e-7"""
    probabilities, labels = _as_tensor(probabilities).double(), _as_tensor(labels).long()
    if probabilities.shape[0] != labels.shape[0]:
        raise ContractViolationError("probabilities and labels differ in length")
    picked = probabilities.gather(1, labels.view(-1, 1)).flatten()
    return float(-torch.log(picked.clamp(min=EPS)).mean().item())


# ------------------------------------------------------- clasificadores de dominio

def _domain_classifier(seed: int):
    """Clasificador de diagnóstico: 100 unidades ocultas, 20 épocas, semilla fija"""
    return make_pipeline(
        StandardScaler(),
        MLPClassifier(hidden_layer_sizes=(100,), max_iter=20, random_state=seed),
    )


def heldout_domain_error(first: TensorLike, second: TensorLike, seed: int = 0,
                         test_size: float = 0.5) -> float:
    """Error de un clasificador fresco que separa dos conjuntos, medido en una partición retenida"""
    a, b = _as_numpy(first).astype(np.float64), _as_numpy(second).astype(np.float64)
    if len(a) < MIN_DIAGNOSTIC_SAMPLES or len(b) < MIN_DIAGNOSTIC_SAMPLES:
        raise ContractViolationError(
            f"diagnostics need >= {MIN_DIAGNOSTIC_SAMPLES} samples per set, got {len(a)} and {len(b)}"
        )
    x = np.concatenate([a.reshape(len(a), -1), b.reshape(len(b), -1)])
    y = np.concatenate([np.zeros(len(a), dtype=np.int64), np.ones(len(b), dtype=np.int64)])
    x_train, x_test, y_train, y_test = train_test_split(
        x, y, test_size=test_size, random_state=seed, stratify=y
    )
    classifier = _domain_classifier(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=ConvergenceWarning)
        classifier.fit(x_train, y_train)
    return float(1.0 - classifier.score(x_test, y_test))


def proxy_divergence(latents_s: TensorLike, latents_t: TensorLike, seed: int = 0) -> float:
    """d̂ = 2 (1 - 2 ε_heldout) acotado a [0, 2]"""
    error = heldout_domain_error(latents_s, latents_t, seed)
    return float(np.clip(2.0 * (1.0 - 2.0 * error), 0.0, 2.0))


def oracle_joint_risk(latents_s: TensorLike, labels_s: TensorLike,
                      latents_t: TensorLike, labels_t: TensorLike, seed: int = 0) -> float:
    """
    λ̂_H medido: un clasificador entrenado con etiquetas verdaderas de ambos
    dominios; se devuelve ε_S + ε_T retenidos
    """
    xs, xt = _as_numpy(latents_s).astype(np.float64), _as_numpy(latents_t).astype(np.float64)
    ys, yt = _as_numpy(labels_s).astype(np.int64), _as_numpy(labels_t).astype(np.int64)
    domain = np.concatenate([np.zeros(len(xs)), np.ones(len(xt))])
    x = np.concatenate([xs, xt])
    y = np.concatenate([ys, yt])
    x_train, x_test, y_train, y_test, _, d_test = train_test_split(
        x, y, domain, test_size=0.5, random_state=seed, stratify=domain
    )
    classifier = make_pipeline(StandardScaler(),
                               MLPClassifier(hidden_layer_sizes=(100,), max_iter=200, random_state=seed))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=ConvergenceWarning)
        classifier.fit(x_train, y_train)
    predictions = classifier.predict(x_test)
    risks = [float((predictions[d_test == d] != y_test[d_test == d]).mean()) for d in (0, 1)]
    return float(sum(risks))


def max_density_ratio(p: TensorLike, q: TensorLike) -> float:
    """max p/q sobre la grilla donde q > 0; >= 1 para densidades normalizadas"""
    p, q = _as_numpy(p).astype(np.float64), _as_numpy(q).astype(np.float64)
    if p.shape != q.shape:
        raise ContractViolationError("densities must share the grid")
    p, q = p / p.sum(), q / q.sum()
    support = q > 0
    return float((p[support] / q[support]).max())


# -------------------------------------------------------------- ponderación

def density_ratio(d1_source_probs: TensorLike) -> np.ndarray:
    """
    Razón p_T / p_S estimada con D1 (que da la probabilidad de 'fuente'):
    w = (1 - D1) / D1
    """
    d = np.clip(_as_numpy(d1_source_probs).astype(np.float64).ravel(), EPS, 1.0 - EPS)
    return (1.0 - d) / d


def importance_weights(d1_source_probs: TensorLike) -> Optional[np.ndarray]:
    """Pesos normalizados a media 1; None si son degenerados (todos ~0)"""
    raw = density_ratio(d1_source_probs)
    if raw.mean() < DEGENERATE_WEIGHT:
        return None
    return raw / raw.mean()


def dev_risk(losses: TensorLike, raw_weights: TensorLike) -> float:
    """
    Riesgo objetivo ponderado con variable de control sobre los pesos:
    mean(w l) + η (mean(w) - 1), η = -Cov(w l, w) / Var(w)
    """
    l = _as_numpy(losses).astype(np.float64).ravel()
    w = _as_numpy(raw_weights).astype(np.float64).ravel()
    weighted = w * l
    variance = w.var()
    eta = 0.0 if variance <= 0 else -np.cov(weighted, w, bias=True)[0, 1] / variance
    return float(weighted.mean() + eta * (w.mean() - 1.0))


# -------------------------------------------------------------- agregación

def aggregate(values: Sequence[float]) -> Tuple[float, float]:
    """Media y desviación estándar poblacional"""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    return float(arr.mean()), float(arr.std(ddof=0))


def aggregate_frame(frame: pd.DataFrame, group_by: List[str], value: str = "value") -> pd.DataFrame:
    """mean, std (ddof=0) y n por grupo"""
    grouped = frame.groupby(group_by, sort=True)[value]
    result = grouped.agg(mean="mean", std=lambda s: float(np.std(s.to_numpy(), ddof=0)), n="count")
    return result.reset_index()


class EvaluationService:
    """
    Servicio de evaluación
    Opera sobre bundles congelados; seguro para correr en paralelo entre corridas
    """

    def __init__(self, device: str = "cpu", batch_size: int = 1000):
        self.device = device
        self.batch_size = batch_size

    @torch.no_grad()
    def _latents(self, bundle: ComponentBundle, dataset: MaskedDataset, mode: str) -> Dict[str, torch.Tensor]:
        """
        Latentes de un dataset completo en modo evaluación

        mode: "hat" (g1, r∘g1), "full" (g1, g2) o la variante a usar
        """
        from app.services.encoding import inference_latents

        was_training = bundle.training
        bundle.eval()
        parts: Dict[str, List[torch.Tensor]] = {"z1": [], "z2": [], "domain_input": [], "probs": [],
                                                "z_s2": []}
        for indices in sequential_batches(len(dataset), self.batch_size):
            batch = dataset.batch(indices).to(self.device)
            if mode == "hat":
                latent = bundle.encode_hat(batch.x1)
            elif mode == "full":
                latent = bundle.encode_full(batch)
            else:
                latent = inference_latents(bundle, Variant(mode), batch)
            parts["z1"].append(latent.z1.cpu())
            if latent.z2 is not None:
                parts["z2"].append(latent.z2.cpu())
            parts["domain_input"].append(bundle.domain_input(latent).cpu())
            parts["probs"].append(bundle.classify(latent).cpu())
            if mode == "hat" and batch.x2_observed and dataset.mask.n_missing:
                parts["z_s2"].append(bundle.encode_missing(batch.x2).cpu())
        bundle.train(was_training)
        return {k: torch.cat(v) for k, v in parts.items() if v}

    def imputation_diagnostics(self, bundle: ComponentBundle, source: MaskedDataset,
                               target: MaskedDataset, seed: int = 0) -> Dict[str, Optional[float]]:
        """
        Proxies (IS) y (TI) sobre datos retenidos

        (IS): MSE entre z_S2 y ẑ_S2 y error de un discriminador fresco entre ambos.
        (TI): error de un clasificador de dominio fresco sobre (z1, ẑ2) de S contra T.
        Son proxies: las razones de densidad supremas no son estimables.
        """
        src = self._latents(bundle, source, "hat")
        tgt = self._latents(bundle, target, "hat")
        report: Dict[str, Optional[float]] = {"imputation_mse_source": None,
                                              "imputation_discriminator_error": None}
        if "z_s2" in src:
            z_s2, z_hat_s2 = src["z_s2"], src["z2"]
            report["imputation_mse_source"] = float(((z_s2 - z_hat_s2) ** 2).sum(dim=1).mean().item())
            report["imputation_discriminator_error"] = heldout_domain_error(z_s2, z_hat_s2, seed)
        src_joint = torch.cat([src["z1"], src["z2"]], dim=1)
        tgt_joint = torch.cat([tgt["z1"], tgt["z2"]], dim=1)
        report["transfer_proxy"] = heldout_domain_error(src_joint, tgt_joint, seed)
        return report

    def _fresh_labeler_probabilities(self, source_latents: torch.Tensor, source_labels: torch.Tensor,
                                     target_latents: torch.Tensor, num_classes: int,
                                     seed: int) -> torch.Tensor:
        """Probabilidades (N_T, K) de un clasificador fresco entrenado con las etiquetas de S"""
        classifier = make_pipeline(StandardScaler(),
                                   MLPClassifier(hidden_layer_sizes=(100,), max_iter=200, random_state=seed))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", category=ConvergenceWarning)
            classifier.fit(_as_numpy(source_latents).astype(np.float64),
                           _as_numpy(source_labels).astype(np.int64))
        partial = classifier.predict_proba(_as_numpy(target_latents).astype(np.float64))
        # clases ausentes en la fuente quedan con probabilidad 0
        probs = np.zeros((partial.shape[0], num_classes), dtype=np.float64)
        probs[:, classifier.classes_] = partial
        return torch.as_tensor(probs)

    def lambda_terms(self, bundle: ComponentBundle, variant: Variant, source: MaskedDataset,
                     target: MaskedDataset, pseudo_labels: Optional[PseudoLabelSet] = None,
                     labeler: Optional[Tuple[ComponentBundle, Variant]] = None,
                     threshold: float = 0.95, seed: int = 0) -> Dict[str, Optional[float]]:
        """
        ε̂_S(h), ε̂_T̃(h) con pseudo-etiquetas y, si el objetivo trae etiquetas
        verdaderas, ε_T(f_T̃) (solo observable con oráculo)

        El etiquetador f_T̃ es distinto de h: pseudo-etiquetas ya guardadas, un
        bundle etiquetador (p. ej. la corrida previa al refinamiento) o, por
        defecto, un clasificador fresco entrenado sobre las latentes de S.
        """
        from app.services.refinement_service import select_pseudo_labels

        src = self._latents(bundle, source, variant.value)
        source_error = error_rate(src["probs"].argmax(dim=1), source.labels)

        tgt = self._latents(bundle, target, variant.value)
        if pseudo_labels is None:
            if labeler is not None:
                labeler_bundle, labeler_variant = labeler
                labeler_probs = self._latents(labeler_bundle, target, labeler_variant.value)["probs"]
            else:
                labeler_probs = self._fresh_labeler_probabilities(
                    src["domain_input"], source.labels, tgt["domain_input"],
                    tgt["probs"].shape[1], seed)
            pseudo_labels = select_pseudo_labels(labeler_probs, target.ids, threshold)
        pseudo_error = 0.0
        pseudo_truth_error = None
        if not pseudo_labels.is_empty:
            predictions = tgt["probs"][pseudo_labels.positions].argmax(dim=1)
            pseudo_error = error_rate(predictions, pseudo_labels.labels)
            if target.labels is not None:
                pseudo_truth_error = error_rate(pseudo_labels.labels, target.labels[pseudo_labels.positions])
        return {
            "source_error": source_error,
            "pseudo_target_error": pseudo_error,
            "pseudo_label_error": pseudo_truth_error,
            "pseudo_label_count": float(len(pseudo_labels)),
        }

    def lambda_proxy(self, bundle: ComponentBundle, variant: Variant, source: MaskedDataset,
                     target: MaskedDataset, pseudo_labels: Optional[PseudoLabelSet] = None,
                     labeler: Optional[Tuple[ComponentBundle, Variant]] = None,
                     threshold: float = 0.95, seed: int = 0) -> float:
        """ε̂_S(h) + ε̂_T̃(h), en [0, 2]"""
        terms = self.lambda_terms(bundle, variant, source, target, pseudo_labels, labeler,
                                  threshold, seed)
        return terms["source_error"] + terms["pseudo_target_error"]

    def diagnose(self, bundle: ComponentBundle, variant: Variant, source: MaskedDataset,
                 target: MaskedDataset, seed: int = 0, threshold: float = 0.95,
                 labeler: Optional[Tuple[ComponentBundle, Variant]] = None,
                 pseudo_labels: Optional[PseudoLabelSet] = None) -> DiagnosticsReport:
        """
        Reporte de diagnósticos de una corrida

        Args:
            source: fuente retenida (validación) con ambas componentes
            target: objetivo enmascarado; con etiquetas se agregan términos de oráculo
            labeler: bundle etiquetador distinto del evaluado (ver lambda_terms)
        """
        start_time = time.time()
        logger.info("Diagnostics started", variant=variant.value, source=len(source), target=len(target))

        src = self._latents(bundle, source, variant.value)
        tgt = self._latents(bundle, target, variant.value)
        source_risk = error_rate(src["probs"].argmax(dim=1), source.labels)
        divergence = proxy_divergence(src["domain_input"], tgt["domain_input"], seed)
        imputation = self.imputation_diagnostics(bundle, source, target, seed)
        terms = self.lambda_terms(bundle, variant, source, target, pseudo_labels, labeler,
                                  threshold=threshold, seed=seed)

        oracle_target = oracle_joint = None
        if target.labels is not None:
            oracle_target = error_rate(tgt["probs"].argmax(dim=1), target.labels)
            oracle_joint = oracle_joint_risk(src["domain_input"], source.labels,
                                             tgt["domain_input"], target.labels, seed)

        report = DiagnosticsReport(
            source_risk=source_risk,
            proxy_divergence=divergence,
            imputation_mse_source=imputation["imputation_mse_source"],
            imputation_discriminator_error=imputation["imputation_discriminator_error"],
            transfer_proxy=imputation["transfer_proxy"],
            lambda_proxy=terms["source_error"] + terms["pseudo_target_error"],
            lambda_oracle_term=terms["pseudo_label_error"],
            pseudo_label_count=int(terms["pseudo_label_count"]),
            oracle_target_risk=oracle_target,
            oracle_joint_risk=oracle_joint,
        )
        logger.info("Diagnostics completed",
                    proxy_divergence=report.proxy_divergence,
                    transfer_proxy=report.transfer_proxy,
                    elapsed_ms=int((time.time() - start_time) * 1000))
        return report

    def source_validation_risk(self, bundle: ComponentBundle, variant: Variant,
                               source_val: MaskedDataset, target: MaskedDataset,
                               seed: int = 0) -> Dict[str, float]:
        """Riesgo DEV de un candidato y su riesgo sin ponderar"""
        src = self._latents(bundle, source_val, variant.value)
        probs = src["probs"].double()
        losses = -torch.log(probs.gather(1, source_val.labels.long().view(-1, 1)).clamp(min=EPS)).flatten()
        plain = float(losses.mean().item())

        if variant.adapts:
            with torch.no_grad():
                d1 = bundle.D1(src["domain_input"].to(self.device)).flatten().cpu()
        else:
            # sin D1 entrenado: discriminador fresco sobre latentes de S y T
            tgt = self._latents(bundle, target, variant.value)
            d1 = torch.as_tensor(self._fresh_source_probability(src["domain_input"],
                                                                tgt["domain_input"], seed))
        weights = importance_weights(d1)
        if weights is None:
            logger.warning("Degenerate importance weights, falling back to source CE")
            return {"dev_risk": plain, "source_ce": plain, "degenerate": 1.0}
        return {"dev_risk": dev_risk(losses, density_ratio(d1)), "source_ce": plain, "degenerate": 0.0}

    def _fresh_source_probability(self, source_latents: torch.Tensor,
                                  target_latents: torch.Tensor, seed: int) -> np.ndarray:
        x = np.concatenate([_as_numpy(source_latents), _as_numpy(target_latents)]).astype(np.float64)
        y = np.concatenate([np.ones(len(source_latents)), np.zeros(len(target_latents))]).astype(np.int64)
        classifier = _domain_classifier(seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", category=ConvergenceWarning)
            classifier.fit(x, y)
        return classifier.predict_proba(_as_numpy(source_latents).astype(np.float64))[:, 1]

    def select_model_iw(self, candidates: List[Tuple[str, ComponentBundle, Variant]],
                        source_val: MaskedDataset, target: MaskedDataset,
                        seed: int = 0) -> Tuple[str, Dict[str, Dict[str, float]]]:
        """
        Selección no supervisada por validación ponderada (DEV simplificado)

        Returns:
            (run_id elegido, riesgos por candidato)
        """
        if not candidates:
            raise ContractViolationError("model selection needs at least one candidate")
        risks = {run_id: self.source_validation_risk(bundle, variant, source_val, target, seed)
                 for run_id, bundle, variant in candidates}
        best = min(risks, key=lambda run_id: (risks[run_id]["dev_risk"], run_id))
        logger.info("Model selected", run_id=best, candidates=len(candidates),
                    dev_risk=risks[best]["dev_risk"])
        return best, risks

    def export_embeddings(self, bundle: ComponentBundle, variant: Variant,
                          datasets: List[MaskedDataset], out_path: Optional[str] = None) -> pd.DataFrame:
        """
        Proyección 2D determinista (PCA) de las latentes de entrada a D1

        Returns:
            DataFrame con id, domain, label, x, y (también escrito en out_path)
        """
        frames, latents = [], []
        for dataset in datasets:
            parts = self._latents(bundle, dataset, variant.value)
            latents.append(parts["domain_input"].double().numpy())
            labels = (pd.array(dataset.labels.tolist(), dtype="Int64") if dataset.labels is not None
                      else pd.array([None] * len(dataset), dtype="Int64"))
            frames.append(pd.DataFrame({"id": dataset.ids.tolist(),
                                        "domain": dataset.domain.value,
                                        "label": labels}))
        pooled = np.concatenate(latents)
        coords = PCA(n_components=2, svd_solver="full").fit_transform(pooled)
        frame = pd.concat(frames, ignore_index=True)
        frame["x"] = coords[:, 0]
        frame["y"] = coords[:, 1]
        if out_path:
            Path(out_path).parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(out_path, index=False, encoding="utf-8")
            logger.info("Embeddings exported", path=str(out_path), rows=len(frame))
        return frame


# Instancia por defecto
_evaluation_service = None

def get_evaluation_service() -> EvaluationService:
    """Factory function para obtener instancia de EvaluationService"""
    global _evaluation_service
    if _evaluation_service is None:
        from app.core.config import get_settings
        _evaluation_service = EvaluationService(device=get_settings().device)
    return _evaluation_service
