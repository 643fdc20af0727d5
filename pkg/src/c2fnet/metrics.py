"""Binary classification metrics: confusion counts, precision/recall/F1,
accuracy, and average precision as the area under the PR curve.

Zero-denominator metrics evaluate to 0 and are listed in the report's
``degenerate`` field instead of raising, so collapsed classifiers still
produce a full report row.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import softmax

CSV_HEADER = "optimizer,accuracy,precision,recall,f1,ap"


@dataclass(frozen=True)
class ConfusionMatrix2:
    tp: int
    fp: int
    fn: int
    tn: int
    positive_class: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(predictions, labels, positive_class: int = 0) -> ConfusionMatrix2:
    """Count TP/FP/FN/TN of predictions against labels."""
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels):
        raise ValueError(
            f"predictions ({len(predictions)}) and labels ({len(labels)}) differ in length"
        )
    if not labels:
        raise ValueError("confusion needs at least one sample")
    tp = fp = fn = tn = 0
    for pred, actual in zip(predictions, labels):
        predicted_pos = pred == positive_class
        actual_pos = actual == positive_class
        if predicted_pos and actual_pos:
            tp += 1
        elif predicted_pos and not actual_pos:
            fp += 1
        elif not predicted_pos and actual_pos:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix2(tp=tp, fp=fp, fn=fn, tn=tn, positive_class=positive_class)


def precision(cm: ConfusionMatrix2) -> float:
    """TP / (TP + FP); 0 when no positive predictions exist."""
    denom = cm.tp + cm.fp
    return cm.tp / denom if denom else 0.0


def recall(cm: ConfusionMatrix2) -> float:
    """TP / (TP + FN); 0 when no actual positives exist."""
    denom = cm.tp + cm.fn
    return cm.tp / denom if denom else 0.0


def f1(cm: ConfusionMatrix2) -> float:
    """Harmonic mean of precision and recall; 0 when both vanish."""
    p = precision(cm)
    r = recall(cm)
    return 2.0 * p * r / (p + r) if p + r else 0.0


def accuracy(cm: ConfusionMatrix2) -> float:
    if cm.total == 0:
        raise ValueError("accuracy of an empty confusion matrix is undefined")
    return (cm.tp + cm.tn) / cm.total


def average_precision(scores, positives) -> float:
    """Area under the PR curve with the monotone precision envelope.

    scores are positive-class scores; positives are 0/1 indicators. Tied
    scores collapse into a single threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(positives, dtype=np.int64)
    if scores.shape != y.shape or scores.ndim != 1:
        raise ValueError("scores and positive indicators must be equal-length vectors")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average_precision requires at least one positive label")
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    y_sorted = y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(1 - y_sorted)
    # last index of each distinct-score group = one threshold
    bounds = np.append(np.nonzero(np.diff(s_sorted))[0], len(s_sorted) - 1)
    p = tp[bounds] / (tp[bounds] + fp[bounds])
    r = tp[bounds] / n_pos
    p_env = np.maximum.accumulate(p[::-1])[::-1]
    prev_r = np.concatenate(([0.0], r[:-1]))
    return float(np.sum((r - prev_r) * p_env))


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    ap: float
    counts: ConfusionMatrix2
    degenerate: tuple[str, ...] = ()

    def as_kv_text(self) -> str:
        lines = [
            f"accuracy={self.accuracy:.6f}",
            f"precision={self.precision:.6f}",
            f"recall={self.recall:.6f}",
            f"f1={self.f1:.6f}",
            f"ap={self.ap:.6f}",
            f"tp={self.counts.tp}",
            f"fp={self.counts.fp}",
            f"fn={self.counts.fn}",
            f"tn={self.counts.tn}",
            f"positive_class={self.counts.positive_class}",
            f"degenerate={','.join(self.degenerate)}",
        ]
        return "\n".join(lines) + "\n"

    def as_csv_row(self, optimizer: str) -> str:
        return (
            f"{optimizer},{self.accuracy:.6f},{self.precision:.6f},"
            f"{self.recall:.6f},{self.f1:.6f},{self.ap:.6f}"
        )


def _degenerate_flags(cm: ConfusionMatrix2) -> tuple[str, ...]:
    flags = []
    if cm.tp + cm.fp == 0:
        flags.append("precision")
    if cm.tp + cm.fn == 0:
        flags.append("recall")
    if precision(cm) + recall(cm) == 0:
        flags.append("f1")
    return tuple(flags)


def report_from_predictions(predictions, labels, scores=None, positive_class: int = 0) -> MetricsReport:
    """Assemble a report from hard predictions (and optional positive scores).

    Without scores, AP falls back to 1/0 scores derived from the predictions.
    """
    cm = confusion(predictions, labels, positive_class)
    if scores is None:
        scores = [1.0 if p == positive_class else 0.0 for p in predictions]
    positives = [1 if l == positive_class else 0 for l in labels]
    return MetricsReport(
        accuracy=accuracy(cm),
        precision=precision(cm),
        recall=recall(cm),
        f1=f1(cm),
        ap=average_precision(scores, positives),
        counts=cm,
        degenerate=_degenerate_flags(cm),
    )


def report(scores_or_logits, labels, positive_class: int = 0) -> MetricsReport:
    """Full report from logits [N,2] or positive-class scores [N].

    Predictions are argmax over class probabilities; ties resolve to the
    lower class index.
    """
    arr = np.asarray(scores_or_logits, dtype=np.float64)
    labels = list(labels)
    if arr.ndim == 2:
        probs = softmax(arr)
    elif arr.ndim == 1:
        probs = np.zeros((arr.shape[0], 2), dtype=np.float64)
        probs[:, positive_class] = arr
        probs[:, 1 - positive_class] = 1.0 - arr
    else:
        raise ValueError(f"expected 1-D scores or 2-D logits, got shape {arr.shape}")
    if probs.shape[0] != len(labels):
        raise ValueError(f"{probs.shape[0]} scores vs {len(labels)} labels")
    predictions = np.argmax(probs, axis=1).tolist()
    pos_scores = probs[:, positive_class].tolist()
    return report_from_predictions(predictions, labels, pos_scores, positive_class)
