"""Evaluation and diagnostic metrics.

All metrics take plain arrays: ``probs`` and ``labels`` are ``(N, M)`` with
rows on the simplex. Logs use a probability floor of 1e-12.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from specdapt.autodiff import Tensor, cross_entropy
from specdapt.autodiff.layers import _softmax, check_simplex
from specdapt.errors import NonFiniteError, ValidationError
from specdapt.models import forward
from specdapt.models import logits as model_logits

PROB_FLOOR = 1e-12
N_ECE_BINS = 15
KNN_K = 10


def _as_matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValidationError(f"{name} must be an (N, M) matrix, got shape {a.shape}")
    return a


def _hard_labels(labels) -> np.ndarray:
    labels = _as_matrix(labels, "labels")
    if not np.all((labels == 0) | (labels == 1)) or np.any(labels.sum(axis=1) != 1):
        raise ValidationError("this metric requires one-hot labels")
    return np.argmax(labels, axis=1)


def ape_score(y_pred, y_true) -> float:
    """Absolute proportion error score: ``1 - sum|y_pred - y_true| / (2N)``."""
    y_pred, y_true = _as_matrix(y_pred, "y_pred"), _as_matrix(y_true, "y_true")
    if y_pred.shape != y_true.shape:
        raise ValidationError(f"shape mismatch {y_pred.shape} vs {y_true.shape}")
    check_simplex(y_pred)
    check_simplex(y_true)
    n = y_pred.shape[0]
    return float(1.0 - np.abs(y_pred - y_true).sum() / (2.0 * n))


def accuracy(probs, labels) -> float:
    """Top-1 accuracy; ``np.argmax`` breaks ties toward the lowest class index."""
    probs = _as_matrix(probs, "probs")
    return float(np.mean(np.argmax(probs, axis=1) == _hard_labels(labels)))


def calibration_suite(probs, labels, n_ece_bins: int = N_ECE_BINS):
    """Return ``(nll, brier, ece)`` for one-hot labels.

    ECE uses ``n_ece_bins`` equal-width bins over the top-class confidence;
    bin ``b`` covers ``(b/n, (b+1)/n]`` with zero folded into the first bin.
    """
    probs, labels = _as_matrix(probs, "probs"), _as_matrix(labels, "labels")
    y = _hard_labels(labels)
    n = len(y)
    p_true = probs[np.arange(n), y]
    nll = float(np.mean(-np.log(np.maximum(p_true, PROB_FLOOR))))
    brier = float(np.mean(np.sum((probs - labels) ** 2, axis=1)))
    conf = probs.max(axis=1)
    correct = (np.argmax(probs, axis=1) == y).astype(np.float64)
    bins = np.clip(np.ceil(conf * n_ece_bins).astype(np.int64) - 1, 0, n_ece_bins - 1)
    ece = 0.0
    for b in range(n_ece_bins):
        sel = bins == b
        if sel.any():
            ece += sel.sum() / n * abs(correct[sel].mean() - conf[sel].mean())
    return nll, brier, float(ece)


def sample_margins(scores, labels) -> np.ndarray:
    """Top-1 minus top-2 score per sample, negated where the top class is wrong."""
    scores = _as_matrix(scores, "scores")
    if scores.shape[1] < 2:
        raise ValidationError("margins need at least two classes")
    y = np.argmax(_as_matrix(labels, "labels"), axis=1)
    top2 = np.sort(scores, axis=1)[:, -2:]
    gap = top2[:, 1] - top2[:, 0]
    return np.where(np.argmax(scores, axis=1) == y, gap, -gap)


def margins(scores, labels, space: str = "logit"):
    """``(margin_mean, margin_p10)``; pass logits for ``space='logit'``, probabilities for ``'prob'``."""
    if space not in ("logit", "prob"):
        raise ValidationError(f"space must be 'logit' or 'prob', got {space!r}")
    m = sample_margins(scores, labels)
    return float(np.mean(m)), float(np.percentile(m, 10, method="linear"))


def entropy_mean(probs) -> float:
    probs = _as_matrix(probs, "probs")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, -probs * np.log(probs), 0.0)
    return float(np.mean(terms.sum(axis=1)))


def input_gradients(model, x, labels, batch_size: int = 256) -> np.ndarray:
    """Per-sample ``d loss_i / d x_i`` of the eval-mode cross-entropy at normalized inputs ``x``."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    p = {n: Tensor(v) for n, v in model.params.items()}
    out = []
    for i in range(0, len(x), batch_size):
        xb = Tensor(x[i : i + batch_size], requires_grad=True)
        yb = labels[i : i + batch_size]
        loss = cross_entropy(forward(model.spec, p, xb), yb)
        # batch loss is the mean of per-sample losses; undo the 1/B to get per-sample gradients
        loss.backward(np.asarray(float(len(yb))))
        out.append(xb.grad if xb.grad is not None else np.zeros_like(xb.data))
    grads = np.concatenate(out, axis=0) if out else np.zeros_like(x)
    if not np.all(np.isfinite(grads)):
        raise NonFiniteError("non-finite input gradient")
    return grads


def jacobian_norm_mean(model, x, labels) -> float:
    """Mean squared l2 norm of the loss gradient with respect to the (normalized) input."""
    g = input_gradients(model, x, labels)
    return float(np.mean(np.sum(g * g, axis=1)))


def knn_edges(spectra, k: int = KNN_K) -> np.ndarray:
    """Undirected, deduplicated k-nearest-neighbour edges over l1-normalized spectra.

    Neighbours are ranked by Euclidean distance with ties broken by index.
    Returns an ``(E, 2)`` array with ``u < v`` rows in lexicographic order.
    """
    x = np.asarray(spectra, dtype=np.float64)
    n = len(x)
    if n <= k:
        raise ValidationError(f"k-nn graph needs more than k={k} samples, got {n}")
    mass = np.abs(x).sum(axis=1, keepdims=True)
    x = x / np.where(mass > 0, mass, 1.0)
    d = cdist(x, x)
    np.fill_diagonal(d, np.inf)
    nbrs = np.argsort(d, axis=1, kind="stable")[:, :k]
    u = np.repeat(np.arange(n), k)
    v = nbrs.ravel()
    pairs = np.stack([np.minimum(u, v), np.maximum(u, v)], axis=1)
    return np.unique(pairs, axis=0)


def knn_smoothness(probs, spectra, labels, k: int = KNN_K):
    """``(tv_hard, prob_l2, conf_absdiff, margin_absdiff)`` averaged over k-nn edges."""
    probs = _as_matrix(probs, "probs")
    edges = knn_edges(spectra, k)
    u, v = edges[:, 0], edges[:, 1]
    hard = np.argmax(probs, axis=1)
    conf = probs.max(axis=1)
    y = np.argmax(_as_matrix(labels, "labels"), axis=1)
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    true_lp = logp[np.arange(len(y)), y]
    others = logp.copy()
    others[np.arange(len(y)), y] = -np.inf
    m = true_lp - others.max(axis=1)
    tv = float(np.mean(hard[u] != hard[v]))
    l2 = float(np.mean(np.sum((probs[u] - probs[v]) ** 2, axis=1)))
    dconf = float(np.mean(np.abs(conf[u] - conf[v])))
    dmargin = float(np.mean(np.abs(m[u] - m[v])))
    return tv, l2, dconf, dmargin


@dataclass
class PredictionSet:
    probs: np.ndarray
    logits: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if not (self.probs.shape == self.logits.shape == self.labels.shape):
            raise ValidationError("probs, logits and labels must share a shape")
        if np.max(np.abs(self.probs.sum(axis=1) - 1.0)) > 1e-6:
            raise ValidationError("probability rows must sum to 1")

    @property
    def hard_true(self):
        return _hard_labels(self.labels)


@dataclass
class DiagnosticsReport:
    acc: float
    nll: float
    brier: float
    ece: float
    margin_mean: float
    margin_p10: float
    entropy_mean: float
    jacobian_norm_mean: float
    knn_tv_hard: float
    knn_prob_l2: float
    knn_conf_absdiff: float
    knn_margin_absdiff: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# metric name -> True if higher is better
METRIC_DIRECTION = {
    "acc": True, "nll": False, "brier": False, "ece": False, "margin_mean": True, "margin_p10": True,
    "entropy_mean": False, "jacobian_norm_mean": False, "knn_tv_hard": False, "knn_prob_l2": False,
    "knn_conf_absdiff": False, "knn_margin_absdiff": False, "ape": True, "score": True,
}


def predictions(model, dataset) -> PredictionSet:
    z = model_logits(model, model.prepare(dataset.counts))
    labels = np.asarray(dataset.labels, dtype=np.float64)
    return PredictionSet(_softmax(z), z, labels / labels.sum(axis=1, keepdims=True))


def diagnostics(model, dataset, margin_space: str = "logit", k: int = KNN_K, jacobian: bool = True):
    """Full diagnostic report of a model on a one-hot labelled dataset."""
    preds = predictions(model, dataset)
    nll, brier, ece = calibration_suite(preds.probs, preds.labels)
    scores = preds.logits if margin_space == "logit" else preds.probs
    m_mean, m_p10 = margins(scores, preds.labels, margin_space)
    jac = jacobian_norm_mean(model, model.prepare(dataset.counts), preds.labels) if jacobian else float("nan")
    if len(dataset) > k:
        tv, l2, dconf, dmargin = knn_smoothness(preds.probs, dataset.counts, preds.labels, k)
    else:
        tv = l2 = dconf = dmargin = float("nan")
    return DiagnosticsReport(
        accuracy(preds.probs, preds.labels), nll, brier, ece, m_mean, m_p10, entropy_mean(preds.probs),
        jac, tv, l2, dconf, dmargin,
    )


def evaluate(model, dataset, jacobian: bool = True) -> dict:
    """Headline score plus diagnostics.

    One-hot data is scored by accuracy and gets the full diagnostic report;
    proportion labels are scored by the APE score.
    """
    preds = predictions(model, dataset)
    out = {"ape": ape_score(preds.probs, preds.labels)}
    if dataset.is_one_hot:
        out.update(diagnostics(model, dataset, jacobian=jacobian).to_dict())
        out["score"] = out["acc"]
    else:
        out["score"] = out["ape"]
        logp = np.log(np.maximum(preds.probs, PROB_FLOOR))
        out["nll"] = float(-np.mean(np.sum(preds.labels * logp, axis=1)))
        out["entropy_mean"] = entropy_mean(preds.probs)
    return out
