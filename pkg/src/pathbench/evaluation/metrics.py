"""Top-1 accuracy and Mann-Whitney ROC AUC (binary and one-vs-rest macro)."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds).reshape(-1), np.asarray(labels).reshape(-1)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.size} predictions, {labels.size} labels")
    if preds.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean(preds == labels))


def auc_binary(scores, labels) -> float:
    """Share of (positive, negative) pairs ranked correctly; ties count one half.

    Computed from midranks: with ranks doubled every term is an exact integer.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    pos = np.asarray(labels).reshape(-1).astype(bool)
    if scores.shape != pos.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative samples")
    twice_ranks = (2.0 * rankdata(scores, method="average")).astype(np.int64)
    twice_u = int(twice_ranks[pos].sum()) - n_pos * (n_pos + 1)
    return twice_u / (2 * n_pos * n_neg)


def auc_macro_ovr(probs, labels, n_classes: int | None = None) -> tuple[float, list[float]]:
    """Unweighted mean of one-vs-rest AUCs; every class must occur in ``labels``."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(labels).reshape(-1)
    c = probs.shape[1] if n_classes is None else n_classes
    per_class = []
    for k in range(c):
        if not (labels == k).any():
            raise ValueError(f"class {k} missing from labels")
        per_class.append(auc_binary(probs[:, k], labels == k))
    return float(np.mean(per_class)), per_class


def selection_auc(probs, labels) -> float:
    """Macro AUC over the classes whose one-vs-rest split is defined (NaN if none).

    Used for checkpoint selection, where a small validation split may miss a class.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(labels).reshape(-1)
    vals = []
    for k in range(probs.shape[1]):
        hit = labels == k
        if hit.any() and not hit.all():
            vals.append(auc_binary(probs[:, k], hit))
    return float(np.mean(vals)) if vals else float("nan")
