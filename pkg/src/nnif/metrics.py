"""ROC/AUC and threshold accuracy for binary detection scores."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise MetricError("scores and labels differ in length")
    if not np.all((labels == 0) | (labels == 1)):
        raise MetricError("labels must be 0/1")
    pos = int(labels.sum())
    if pos == 0 or pos == labels.size:
        raise MetricError("both classes must be present")
    return scores, labels.astype(bool)


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2).

    Computed from the Mann-Whitney rank sum with mid-ranks for ties.
    """
    scores, labels = _check(scores, labels)
    ranks = rankdata(scores)  # average ranks over ties
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def detection_accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction classified correctly when ``score >= threshold`` means positive."""
    scores, labels = _check(scores, labels)
    return float(np.mean((scores >= threshold) == labels))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """ROC points ``(fpr, tpr)`` over all distinct thresholds, starting at (0, 0)."""
    scores, labels = _check(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s, l = scores[order], labels[order]
    cut = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(l)[cut]
    fp = (cut + 1) - tp
    tpr = np.r_[0.0, tp / l.sum()]
    fpr = np.r_[0.0, fp / (~l).sum()]
    return fpr, tpr
