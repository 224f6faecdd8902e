"""Classification metrics: confusion matrices, per-class scores, ROC/AUC.

Confusion matrices are oriented rows = true class, columns = predicted
class.  The ROC is micro-averaged: every (sample, class) pair enters a
pooled one-vs-rest sweep, ties are grouped at distinct score values, and
the area accumulates exactly over integer counts before a single final
division, so the trapezoid AUC matches the Mann-Whitney pairwise
statistic to the last bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # (K,K) int64, rows true, columns predicted

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool = False  # a zero denominator was reported as 0


@dataclass(frozen=True)
class RocCurve:
    points: list[tuple[float, float]]  # (fpr, tpr), monotone from (0,0) to (1,1)
    auc: float


def confusion_from_pairs(truths, predictions, num_classes: int) -> ConfusionMatrix:
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(truths, predictions):
        counts[t, p] += 1
    return ConfusionMatrix(counts)


def accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise ValueError("confusion matrix is empty")
    return float(np.trace(cm.counts)) / total


def class_report(cm: ConfusionMatrix) -> list[ClassScore]:
    """Per-class precision/recall/F1; zero denominators yield 0, flagged."""
    if cm.num_classes < 2:
        raise ValueError("class report needs at least two classes")
    scores = []
    col_sums = cm.counts.sum(axis=0)
    row_sums = cm.counts.sum(axis=1)
    for k in range(cm.num_classes):
        tp = int(cm.counts[k, k])
        degenerate = False
        if col_sums[k] > 0:
            precision = tp / int(col_sums[k])
        else:
            precision, degenerate = 0.0, True
        if row_sums[k] > 0:
            recall = tp / int(row_sums[k])
        else:
            recall, degenerate = 0.0, True
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1, degenerate = 0.0, True
        scores.append(
            ClassScore(
                precision=precision,
                recall=recall,
                f1=f1,
                support=int(row_sums[k]),
                degenerate=degenerate,
            )
        )
    return scores


def macro_f1(scores: list[ClassScore]) -> float:
    return sum(s.f1 for s in scores) / len(scores)


def roc_micro(scores: np.ndarray, labels) -> RocCurve:
    """Micro-average one-vs-rest ROC over per-sample class probabilities.

    ``scores`` is (n, K); ``labels`` holds the true class index per sample.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = scores.shape
    positive = np.zeros((n, k), dtype=bool)
    positive[np.arange(n), labels] = True

    flat_scores = scores.ravel()
    flat_pos = positive.ravel()
    p = int(flat_pos.sum())
    q = flat_pos.size - p
    if p == 0 or q == 0:
        raise ValueError("ROC pool needs at least one positive and one negative")

    order = np.argsort(-flat_scores, kind="stable")
    sorted_scores = flat_scores[order]
    sorted_pos = flat_pos[order]

    points = [(0.0, 0.0)]
    # accumulate trapezoids over integer counts; divide once at the end
    area2 = 0  # 2 * P * Q * AUC
    tp = fp = 0
    i = 0
    while i < flat_pos.size:
        j = i
        while j < flat_pos.size and sorted_scores[j] == sorted_scores[i]:
            j += 1
        group_tp = int(sorted_pos[i:j].sum())
        group_fp = (j - i) - group_tp
        area2 += group_fp * (2 * tp + group_tp)
        tp += group_tp
        fp += group_fp
        points.append((fp / q, tp / p))
        i = j
    return RocCurve(points=points, auc=area2 / (2 * p * q))


# ---------------------------------------------------------------------------
# CSV report writers
# ---------------------------------------------------------------------------


def write_metrics_csv(path, class_names, scores: list[ClassScore]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "precision", "recall", "f1", "support"])
        for name, s in zip(class_names, scores):
            writer.writerow(
                [name, f"{s.precision:.6f}", f"{s.recall:.6f}", f"{s.f1:.6f}", s.support]
            )
        writer.writerow(["macro_f1", f"{macro_f1(scores):.6f}"])


def write_confusion_csv(path, class_names, cm: ConfusionMatrix) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", *class_names])
        for name, row in zip(class_names, cm.counts):
            writer.writerow([name, *[int(v) for v in row]])


def write_roc_csv(path, curve: RocCurve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr"])
        for fpr, tpr in curve.points:
            writer.writerow([f"{fpr:.10f}", f"{tpr:.10f}"])
        writer.writerow(["auc", f"{curve.auc:.12f}"])
