"""Classification and regression metrics, binarization and threshold sweeps.

Metrics are computed in full precision and rendered at 3 decimals. Zero
denominators give 0 plus a flag instead of NaN so reports always serialize.
NA predictions (``None``) are excluded and counted.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

from phqscreen.errors import (
    DegenerateClasses,
    EmptyInput,
    InsufficientData,
    MissingLabel,
    ThresholdOutOfRange,
)
from phqscreen.transcripts import histogram

THRESHOLDS = (3, 4, 5, 6, 7)


def fmt3(x: float) -> str:
    return f"{x:.3f}"


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> ConfusionMatrix:
        """Same predictions with the positive and negative classes exchanged."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


def _ratio(num: float, den: float, flag: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def _f1(tp: int, fp: int, fn: int) -> float:
    den = 2 * tp + fp + fn
    return 2 * tp / den if den else 0.0


@dataclass(frozen=True)
class ClassificationReport:
    f1: float
    macro_f1: float
    accuracy: float
    recall: float
    precision: float
    roc_auc: float | None
    n: int
    n_excluded: int = 0
    flags: tuple[str, ...] = ()

    COLUMNS = ("f1", "macro_f1", "accuracy", "recall", "precision", "roc_auc")

    def rounded(self) -> dict[str, str | None]:
        return {
            c: None if getattr(self, c) is None else fmt3(getattr(self, c)) for c in self.COLUMNS
        }

    def to_dict(self) -> dict:
        return {
            "metrics": self.rounded(),
            "raw": {c: getattr(self, c) for c in self.COLUMNS},
            "n": self.n,
            "n_excluded": self.n_excluded,
            "flags": list(self.flags),
        }


def binarize(likelihoods: Mapping[int, int | None], threshold: int) -> dict[int, int | None]:
    """1 where likelihood >= threshold, 0 below, None (NA) preserved."""
    if threshold not in THRESHOLDS:
        raise ThresholdOutOfRange(f"threshold {threshold} outside 3..7")
    return {
        pid: None if v is None else int(v >= threshold) for pid, v in likelihoods.items()
    }


def confusion(
    preds: Mapping[int, int | None], labels: Mapping[int, int]
) -> tuple[ConfusionMatrix, int]:
    """Confusion matrix over non-NA predictions; returns (matrix, n_excluded)."""
    tp = fp = fn = tn = excluded = 0
    for pid, p in preds.items():
        if p is None:
            excluded += 1
            continue
        if pid not in labels:
            raise MissingLabel(f"no label for participant {pid}")
        y = labels[pid]
        if p and y:
            tp += 1
        elif p:
            fp += 1
        elif y:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, fn, tn), excluded


def _pos_neg(scores: Mapping[int, float | None], labels: Mapping[int, int]):
    pos, neg = [], []
    for pid, s in scores.items():
        if s is None:
            continue
        if pid not in labels:
            raise MissingLabel(f"no label for participant {pid}")
        (pos if labels[pid] else neg).append(s)
    if not pos or not neg:
        raise DegenerateClasses("ROC-AUC needs at least one positive and one negative")
    return pos, neg


def roc_auc(scores: Mapping[int, float | None], labels: Mapping[int, int]) -> float:
    """Pair-counting AUC: P(pos > neg) + 0.5 P(pos == neg).

    With binary {0,1} scores this equals balanced accuracy.
    """
    pos, neg = _pos_neg(scores, labels)
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def roc_curve(scores: Mapping[int, float | None], labels: Mapping[int, int]):
    """(fpr, tpr) points, one per distinct score level, from (0, 0) to (1, 1)."""
    pos, neg = _pos_neg(scores, labels)
    points = [(0.0, 0.0)]
    tp = fp = 0
    for level in sorted(set(pos) | set(neg), reverse=True):
        tp += sum(1 for p in pos if p == level)
        fp += sum(1 for q in neg if q == level)
        points.append((fp / len(neg), tp / len(pos)))
    return points


def roc_auc_trapezoid(scores: Mapping[int, float | None], labels: Mapping[int, int]) -> float:
    pts = roc_curve(scores, labels)
    return sum((x1 - x0) * (y0 + y1) / 2 for (x0, y0), (x1, y1) in zip(pts, pts[1:]))


def classification_report(
    cm: ConfusionMatrix,
    scores: Mapping[int, float | None] | None = None,
    labels: Mapping[int, int] | None = None,
    n_excluded: int = 0,
) -> ClassificationReport:
    """Report for a confusion matrix; ROC-AUC comes from the raw scores when given."""
    if cm.n == 0:
        raise EmptyInput("confusion matrix is empty")
    flags: list[str] = []
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision_undefined", flags)
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall_undefined", flags)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1_undefined", flags)
    macro_f1 = (_f1(cm.tp, cm.fp, cm.fn) + _f1(cm.tn, cm.fn, cm.fp)) / 2
    accuracy = (cm.tp + cm.tn) / cm.n
    auc = None
    if scores is not None and labels is not None:
        try:
            auc = roc_auc(scores, labels)
        except DegenerateClasses:
            flags.append("roc_auc_undefined")
            auc = 0.0
    return ClassificationReport(
        f1, macro_f1, accuracy, recall, precision, auc, cm.n, n_excluded, tuple(flags)
    )


def evaluate_likelihoods(
    likelihoods: Mapping[int, int | None], labels: Mapping[int, int], threshold: int
) -> ClassificationReport:
    cm, excluded = confusion(binarize(likelihoods, threshold), labels)
    return classification_report(cm, likelihoods, labels, n_excluded=excluded)


@dataclass(frozen=True)
class ThresholdSweep:
    accuracy: dict[int, float]
    positive_counts: dict[int, int]
    best_threshold: int
    n_excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "accuracy": {str(t): fmt3(a) for t, a in self.accuracy.items()},
            "accuracy_raw": {str(t): a for t, a in self.accuracy.items()},
            "positive_counts": {str(t): c for t, c in self.positive_counts.items()},
            "best_threshold": self.best_threshold,
            "n_excluded": self.n_excluded,
        }


def threshold_sweep(
    likelihoods: Mapping[int, int | None],
    labels: Mapping[int, int],
    thresholds: Iterable[int] = THRESHOLDS,
) -> ThresholdSweep:
    """Accuracy at each threshold; ties go to the lower threshold."""
    acc, counts = {}, {}
    excluded = 0
    for t in sorted(thresholds):
        cm, excluded = confusion(binarize(likelihoods, t), labels)
        acc[t] = (cm.tp + cm.tn) / cm.n if cm.n else 0.0
        counts[t] = cm.tp + cm.fp
    if not acc:
        raise EmptyInput("no thresholds given")
    best = max(acc, key=lambda t: (acc[t], -t))
    return ThresholdSweep(acc, counts, best, excluded)


@dataclass(frozen=True)
class RegressionReport:
    mae: float
    rmse: float
    r_squared: float
    n: int
    n_excluded: int = 0
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "metrics": {"mae": f"{self.mae:.2f}", "rmse": f"{self.rmse:.2f}",
                        "r_squared": f"{self.r_squared:.2f}"},
            "raw": {"mae": self.mae, "rmse": self.rmse, "r_squared": self.r_squared},
            "n": self.n,
            "n_excluded": self.n_excluded,
            "flags": list(self.flags),
        }


def _pairs(preds: Mapping[int, float | None], truths: Mapping[int, float]):
    pairs, excluded = [], 0
    for pid, p in preds.items():
        if p is None:
            excluded += 1
            continue
        if pid not in truths:
            raise MissingLabel(f"no label for participant {pid}")
        pairs.append((p, truths[pid]))
    return pairs, excluded


def regression_report(
    preds: Mapping[int, float | None], truths: Mapping[int, float]
) -> RegressionReport:
    """MAE, RMSE and R^2 = 1 - SS_res / SS_tot over non-NA predictions."""
    pairs, excluded = _pairs(preds, truths)
    if len(pairs) < 2:
        raise InsufficientData(f"need at least 2 non-NA predictions, got {len(pairs)}")
    n = len(pairs)
    abs_err = [abs(p - t) for p, t in pairs]
    ss_res = math.fsum(e * e for e in abs_err)
    mae = math.fsum(abs_err) / n
    rmse = math.sqrt(ss_res / n)
    mean_t = math.fsum(t for _, t in pairs) / n
    ss_tot = math.fsum((t - mean_t) ** 2 for _, t in pairs)
    flags = []
    if ss_tot == 0:
        flags.append("r_squared_undefined")
        r2 = 0.0
    else:
        r2 = 1 - ss_res / ss_tot
    return RegressionReport(mae, rmse, r2, n, excluded, tuple(flags))


def abs_difference_histogram(
    preds: Mapping[int, float | None], truths: Mapping[int, float], bin_width: int = 1
) -> list[tuple[int, int]]:
    pairs, _ = _pairs(preds, truths)
    return histogram([abs(p - t) for p, t in pairs], bin_width)
