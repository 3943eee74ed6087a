"""Classification and regression metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .autograd import log_softmax_array
from .errors import InputError


@dataclass
class MetricsReport:
    n: int
    accuracy: Optional[float] = None
    macro_f1: Optional[float] = None
    per_class_f1: Optional[List[float]] = None
    absent_classes: List[int] = field(default_factory=list)
    weighted_ce: Optional[float] = None
    ce: Optional[float] = None
    confusion: Optional[List[List[int]]] = None
    mse: Optional[float] = None
    r2: Optional[float] = None
    r2_undefined: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["r2"] is not None and math.isnan(d["r2"]):
            d["r2"] = None
        return d


def compute_class_weights(label_counts: Sequence[int]) -> List[float]:
    """``sqrt(N / count_c)``: a class making up 25% of examples gets weight 2."""
    counts = np.asarray(label_counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise InputError("label_counts must be a non-empty list")
    if np.any(counts <= 0):
        raise InputError("every class needs at least one example to get a weight")
    return [float(w) for w in np.sqrt(counts.sum() / counts)]


def label_counts(labels: Sequence[int], num_classes: int) -> List[int]:
    return [int(c) for c in np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)]


def confusion_matrix(gold: Sequence[int], pred: Sequence[int], num_classes: int) -> np.ndarray:
    """Rows are gold labels, columns predictions."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(gold, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def compute_classification_metrics(
    predictions: Sequence[int],
    gold: Sequence[int],
    class_weights: Optional[Sequence[float]] = None,
    logits: Optional[np.ndarray] = None,
    num_classes: int = 3,
) -> MetricsReport:
    """Accuracy, macro F1, confusion matrix and, given logits, weighted and plain CE.

    A class with zero precision+recall (including one absent from both gold
    and predictions) scores F1 = 0; absent classes are listed in the report.
    """
    pred = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if pred.shape != gold.shape or pred.ndim != 1:
        raise InputError(f"predictions ({pred.shape}) and gold ({gold.shape}) lengths differ")
    if pred.size and (min(pred.min(), gold.min()) < 0 or max(pred.max(), gold.max()) >= num_classes):
        raise InputError(f"labels must be in [0, {num_classes})")
    n = int(gold.size)
    cm = confusion_matrix(gold, pred, num_classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros(num_classes), where=denom > 0)
    absent = [c for c in range(num_classes) if cm[c, :].sum() == 0 and cm[:, c].sum() == 0]
    report = MetricsReport(
        n=n,
        accuracy=float(tp.sum() / n) if n else float("nan"),
        macro_f1=float(f1.mean()),
        per_class_f1=[float(x) for x in f1],
        absent_classes=absent,
        confusion=cm.tolist(),
    )
    if logits is not None:
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape != (n, num_classes):
            raise InputError(f"logits must be [{n}, {num_classes}], got {logits.shape}")
        nll = -log_softmax_array(logits)[np.arange(n), gold]
        weights = np.ones(num_classes) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
        report.ce = float(nll.mean())
        report.weighted_ce = float((weights[gold] * nll).mean())
    return report


def compute_regression_metrics(predictions: Sequence[float], targets: Sequence[float]) -> MetricsReport:
    """MSE and R² about the target mean; R² is NaN and flagged when targets are constant."""
    pred = np.asarray(predictions, dtype=np.float64)
    target = np.asarray(targets, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1:
        raise InputError(f"prediction ({pred.shape}) and target ({target.shape}) lengths differ")
    if pred.size == 0:
        raise InputError("cannot score an empty set")
    ss_res = float(((target - pred) ** 2).sum())
    ss_tot = float(((target - target.mean()) ** 2).sum())
    undefined = ss_tot == 0.0
    return MetricsReport(
        n=int(pred.size),
        mse=ss_res / pred.size,
        r2=float("nan") if undefined else 1.0 - ss_res / ss_tot,
        r2_undefined=undefined,
    )


def summarize(reports: Sequence[MetricsReport], keys=("accuracy", "macro_f1", "weighted_ce", "ce", "mse", "r2")) -> Dict[str, float]:
    """Mean of each metric present in every report."""
    out = {}
    for key in keys:
        values = [getattr(r, key) for r in reports]
        if values and all(v is not None for v in values):
            out[key] = float(np.mean(values))
    return out
