"""Accuracy, macro F1 and macro one-vs-rest AUC."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def binary_auc(y_pos, scores) -> float | None:
    """Mann-Whitney AUC with midranks for ties; ``None`` if a class is empty."""
    y_pos = np.asarray(y_pos, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y_pos.sum())
    n_neg = y_pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s, method="average")
    u = ranks[y_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auc(y_true, scores) -> float | None:
    y = np.asarray(y_true, dtype=np.int64)
    S = np.asarray(scores, dtype=np.float64)
    if S.shape[1] == 2:
        return binary_auc(y == 1, S[:, 1])
    vals = [binary_auc(y == c, S[:, c]) for c in range(S.shape[1])]
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def macro_f1(y_true, y_pred, num_classes: int) -> float:
    y = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    scores = []
    for c in range(num_classes):
        tp = np.sum((p == c) & (y == c))
        fp = np.sum((p == c) & (y != c))
        fn = np.sum((p != c) & (y == c))
        if tp + fp + fn == 0:
            continue  # class absent from both truth and predictions
        scores.append(2.0 * tp / (2.0 * tp + fp + fn))
    return float(np.mean(scores)) if scores else 0.0


def metrics(y_true, scores) -> dict:
    """``{"acc", "auc", "f1"}``; AUC is ``None`` when only one class is present.

    Argmax ties go to the lowest class index.
    """
    y = np.asarray(y_true, dtype=np.int64)
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != y.size:
        raise ValueError(f"scores shape {S.shape} does not match {y.size} labels")
    pred = np.argmax(S, axis=1)
    return {
        "acc": float(np.mean(pred == y)) if y.size else 0.0,
        "auc": macro_auc(y, S),
        "f1": macro_f1(y, pred, S.shape[1]),
    }
