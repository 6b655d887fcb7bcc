"""Confusion-matrix metrics, ROC/AUC, bootstrap intervals, relative improvement, Frechet distance."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

METRICS = ("accuracy", "precision", "recall", "specificity", "f1", "auc")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_rows(self):
        """Rows are true labels (0, 1), columns predicted labels (0, 1)."""
        return [[self.tn, self.fp], [self.fn, self.tp]]


@dataclass
class MetricSet:
    accuracy: float
    precision: float
    recall: float
    specificity: float
    f1: float
    auc: float | None = None
    undefined: list[str] = field(default_factory=list)

    @property
    def sensitivity(self) -> float:
        return self.recall

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in METRICS}
        d["sensitivity"] = self.recall
        return d


@dataclass
class BootstrapResult:
    metric: str
    n_resamples: int
    samples: np.ndarray
    mean: float
    std: float
    ci95: tuple[float, float]
    skipped: int = 0


def confusion(preds, labels) -> ConfusionMatrix:
    preds = np.asarray(preds).astype(int)
    labels = np.asarray(labels).astype(int)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape[0] if preds.ndim else 0} predictions vs "
                         f"{labels.shape[0] if labels.ndim else 0} labels")
    if preds.size == 0:
        raise ValueError("no predictions")
    pos, ppos = labels == 1, preds == 1
    return ConfusionMatrix(
        tp=int(np.sum(pos & ppos)), fp=int(np.sum(~pos & ppos)),
        tn=int(np.sum(~pos & ~ppos)), fn=int(np.sum(pos & ~ppos)),
    )


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def metrics_from_confusion(cm: ConfusionMatrix) -> MetricSet:
    """Threshold metrics with label 1 as the positive class; 0/0 ratios become 0 and are flagged."""
    if cm.total <= 0:
        raise ValueError("empty confusion matrix")
    und: list[str] = []
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", und)
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall", und)
    specificity = _ratio(cm.tn, cm.tn + cm.fp, "specificity", und)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1", und)
    return MetricSet((cm.tp + cm.tn) / cm.total, precision, recall, specificity, f1, undefined=und)


def roc_curve(scores, labels):
    """ROC points for thresholds in descending order, from (0, 0) to (1, 1).

    Samples sharing a score move together, so a tie contributes a diagonal segment.
    Returns ``(fpr, tpr, thresholds)``; the first threshold is +inf.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(np.sum(labels == 1))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes in the labels")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # last index of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    thresholds = np.r_[np.inf, s[ends]]
    return fpr, tpr, thresholds


def auc(fpr, tpr) -> float:
    """Trapezoidal area under an ROC curve."""
    fpr, tpr = np.asarray(fpr, dtype=np.float64), np.asarray(tpr, dtype=np.float64)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def roc_auc(scores, labels) -> float:
    fpr, tpr, _ = roc_curve(scores, labels)
    return auc(fpr, tpr)


def evaluate(scores, labels, threshold=0.5) -> tuple[ConfusionMatrix, MetricSet]:
    """Metrics for positive-class scores, predicting 1 when ``score >= threshold``."""
    scores = np.asarray(scores, dtype=np.float64)
    cm = confusion((scores >= threshold).astype(int), labels)
    ms = metrics_from_confusion(cm)
    ms.auc = roc_auc(scores, labels)
    return cm, ms


def _metric_value(metric, scores, preds, labels):
    if metric == "auc":
        return roc_auc(scores, labels)
    return getattr(metrics_from_confusion(confusion(preds, labels)), metric)


def bootstrap(scores, preds, labels, metric="accuracy", n=500, seed=0) -> BootstrapResult:
    """Percentile bootstrap over full-size resamples drawn with replacement.

    AUC resamples that contain a single class are skipped and counted.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if metric not in METRICS and metric != "sensitivity":
        raise ValueError(f"unknown metric {metric!r}")
    metric = "recall" if metric == "sensitivity" else metric
    scores = np.asarray(scores, dtype=np.float64)
    preds = np.asarray(preds).astype(int)
    labels = np.asarray(labels).astype(int)
    m = labels.size
    idx = np.random.default_rng(seed).integers(0, m, size=(n, m))
    vals, skipped = [], 0
    for row in idx:
        y = labels[row]
        if metric == "auc" and (y.min() == y.max()):
            skipped += 1
            continue
        vals.append(_metric_value(metric, scores[row], preds[row], y))
    if not vals:
        raise ValueError(f"all {n} bootstrap resamples were skipped")
    samples = np.array(vals)
    lo, hi = np.percentile(samples, [2.5, 97.5])
    return BootstrapResult(metric, n, samples, float(samples.mean()), float(samples.std()), (float(lo), float(hi)), skipped)


def relative_improvement(score: float, baseline: float) -> float:
    """Percentage change of ``score`` over ``baseline``."""
    if baseline <= 0:
        raise ValueError("baseline must be positive")
    return (score - baseline) / baseline * 100.0


def _check_cov(c, name, tol):
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    if c.shape[0] != c.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(c, c.T, atol=tol, rtol=0):
        raise ValueError(f"{name} is not symmetric")
    return (c + c.T) / 2


def _psd_sqrt(c, name, tol):
    w, v = np.linalg.eigh(c)
    if w.min() < -tol:
        raise ValueError(f"{name} is indefinite (eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(mu1, cov1, mu2, cov2, tol=1e-8) -> float:
    """||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)) for Gaussian fits.

    tr((S1 S2)^(1/2)) is evaluated as tr((A S2 A)^(1/2)) with A = S1^(1/2), which keeps
    every decomposition symmetric.
    """
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    c1, c2 = _check_cov(cov1, "cov1", tol), _check_cov(cov2, "cov2", tol)
    if not (mu1.shape == mu2.shape and c1.shape == c2.shape == (mu1.size, mu1.size)):
        raise ValueError("mean and covariance dimensions disagree")
    a = _psd_sqrt(c1, "cov1", tol)
    _psd_sqrt(c2, "cov2", tol)
    w = np.linalg.eigvalsh((a @ c2 @ a + (a @ c2 @ a).T) / 2)
    if w.min() < -tol:
        raise ValueError("covariance product is indefinite")
    tr_sqrt = float(np.sum(np.sqrt(np.clip(w, 0, None))))
    diff = mu1 - mu2
    return float(diff @ diff + np.trace(c1) + np.trace(c2) - 2 * tr_sqrt)


def feature_frechet(feats_a, feats_b) -> float:
    """Frechet distance between Gaussian fits of two (N, D) feature sets."""
    a, b = np.asarray(feats_a, dtype=np.float64), np.asarray(feats_b, dtype=np.float64)
    return frechet_distance(a.mean(0), np.cov(a, rowvar=False), b.mean(0), np.cov(b, rowvar=False), tol=1e-6)
