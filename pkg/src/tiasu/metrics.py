"""Classification metrics: unweighted average recall and F1 variants.

UAR averages per-class recall over the classes that actually occur in the
reference labels (macro recall). F1 supports macro, micro, and weighted
averaging; classes absent from both references and predictions are excluded
from the macro mean, and a class with an undefined precision or recall
contributes an F1 of zero.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

F1_AVERAGES = ("macro", "micro", "weighted")


def _as_arrays(y_true: Sequence[int], y_pred: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(y_true, dtype=int)
    p = np.asarray(y_pred, dtype=int)
    if t.size == 0:
        raise ValueError("metrics need at least one sample")
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.shape} labels vs {p.shape} predictions")
    return t, p


def accuracy(y_true: Sequence[int], y_pred: Sequence[int]) -> float:
    t, p = _as_arrays(y_true, y_pred)
    return float((t == p).mean())


def uar(y_true: Sequence[int], y_pred: Sequence[int]) -> float:
    """Mean per-class recall over the classes present in y_true."""
    t, p = _as_arrays(y_true, y_pred)
    recalls = []
    for cls in np.unique(t):
        members = t == cls
        recalls.append(float((p[members] == cls).mean()))
    return float(np.mean(recalls))


def f1(y_true: Sequence[int], y_pred: Sequence[int], average: str = "macro") -> float:
    t, p = _as_arrays(y_true, y_pred)
    if average not in F1_AVERAGES:
        raise ValueError(f"average must be one of {F1_AVERAGES}, got {average!r}")
    classes = np.union1d(np.unique(t), np.unique(p))
    tp = np.array([np.sum((t == c) & (p == c)) for c in classes], dtype=float)
    fp = np.array([np.sum((t != c) & (p == c)) for c in classes], dtype=float)
    fn = np.array([np.sum((t == c) & (p != c)) for c in classes], dtype=float)
    if average == "micro":
        denom = 2 * tp.sum() + fp.sum() + fn.sum()
        return float(2 * tp.sum() / denom) if denom else 0.0
    denom = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    if average == "macro":
        return float(per_class.mean())
    support = np.array([np.sum(t == c) for c in classes], dtype=float)
    if support.sum() == 0:
        return 0.0
    return float((per_class * support).sum() / support.sum())


METRICS = {
    "uar": uar,
    "f1_macro": lambda t, p: f1(t, p, "macro"),
    "f1_micro": lambda t, p: f1(t, p, "micro"),
    "f1_weighted": lambda t, p: f1(t, p, "weighted"),
    "accuracy": accuracy,
}


def metric_fn(name: str):
    if name not in METRICS:
        raise ValueError(f"unknown metric {name!r}; available: {sorted(METRICS)}")
    return METRICS[name]
