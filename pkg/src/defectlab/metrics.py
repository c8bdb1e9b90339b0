"""Binary-classification evaluation: confusion matrix, per-class P/R/F1, ROC-AUC.

The AUC is the rank statistic (Mann-Whitney): the probability that a random
positive outscores a random negative, with ties counting one half. For binary
problems this is exactly the pairwise definition, which the test suite checks
against by brute force.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import MissingLabelError, RangeError, ShapeError, UndefinedMetricError


@dataclass(frozen=True)
class ConfusionMatrix:
    """2x2 counts; rows are true class 0/1, columns predicted 0/1."""

    tn: int
    fp: int
    fn: int
    tp: int

    def __post_init__(self):
        for name in ("tn", "fp", "fn", "tp"):
            if getattr(self, name) < 0:
                raise RangeError(f"confusion count {name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    def as_rows(self) -> list[list[int]]:
        return [[self.tn, self.fp], [self.fn, self.tp]]


@dataclass(frozen=True)
class EvalReport:
    """Accuracy, per-class precision/recall/F1, and AUC for one evaluation."""

    cm: ConfusionMatrix
    accuracy: float
    precision_0: float
    recall_0: float
    f1_0: float
    precision_1: float
    recall_1: float
    f1_1: float
    auc: float | None = None
    degenerate: tuple[str, ...] = field(default=())

    def to_json_dict(self) -> dict:
        out = {
            "confusion": self.cm.as_rows(),
            "accuracy": self.accuracy,
            "precision_0": self.precision_0,
            "recall_0": self.recall_0,
            "f1_0": self.f1_0,
            "precision_1": self.precision_1,
            "recall_1": self.recall_1,
            "f1_1": self.f1_1,
            "auc": self.auc,
        }
        if self.degenerate:
            out["degenerate"] = list(self.degenerate)
        return out

    def save_json(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    def render(self, ndigits: int = 3) -> str:
        """Human-readable block; values rounded for display only."""
        r = lambda v: "n/a" if v is None else f"{v:.{ndigits}f}"
        lines = [
            f"confusion  [[{self.cm.tn:5d} {self.cm.fp:5d}]",
            f"            [{self.cm.fn:5d} {self.cm.tp:5d}]]",
            f"accuracy   {r(self.accuracy)}",
            f"class 0    P={r(self.precision_0)} R={r(self.recall_0)} F1={r(self.f1_0)}",
            f"class 1    P={r(self.precision_1)} R={r(self.recall_1)} F1={r(self.f1_1)}",
            f"auc        {r(self.auc)}",
        ]
        if self.degenerate:
            lines.append(f"degenerate {', '.join(self.degenerate)}")
        return "\n".join(lines)


def _check_binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise RangeError(f"{name} must contain only 0/1 values")
    return arr.astype(int)


def confusion(true_labels, pred_labels) -> ConfusionMatrix:
    """Count the 2x2 confusion matrix."""
    t = _check_binary(true_labels, "true_labels")
    p = _check_binary(pred_labels, "pred_labels")
    if t.shape != p.shape:
        raise ShapeError(f"length mismatch: {t.shape[0]} true vs {p.shape[0]} predicted")
    if t.size == 0:
        raise ShapeError("cannot build a confusion matrix from zero samples")
    return ConfusionMatrix(
        tn=int(((t == 0) & (p == 0)).sum()),
        fp=int(((t == 0) & (p == 1)).sum()),
        fn=int(((t == 1) & (p == 0)).sum()),
        tp=int(((t == 1) & (p == 1)).sum()),
    )


def _safe_ratio(num: int, den: int, name: str, flags: list[str]) -> float:
    # Degenerate denominators report 0 and a flag so sweeps never abort.
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def summarize(cm: ConfusionMatrix, scores=None, true_labels=None) -> EvalReport:
    """Derive the full report from a confusion matrix, plus AUC when scores given."""
    flags: list[str] = []
    precision_0 = _safe_ratio(cm.tn, cm.tn + cm.fn, "precision_0", flags)
    recall_0 = _safe_ratio(cm.tn, cm.tn + cm.fp, "recall_0", flags)
    precision_1 = _safe_ratio(cm.tp, cm.tp + cm.fp, "precision_1", flags)
    recall_1 = _safe_ratio(cm.tp, cm.tp + cm.fn, "recall_1", flags)

    def _f1(p: float, r: float, name: str) -> float:
        if p + r == 0:
            flags.append(name)
            return 0.0
        return 2 * p * r / (p + r)

    f1_0 = _f1(precision_0, recall_0, "f1_0")
    f1_1 = _f1(precision_1, recall_1, "f1_1")
    auc = None
    if scores is not None:
        if true_labels is None:
            raise ShapeError("AUC requires true_labels alongside scores")
        auc = roc_auc(scores, true_labels)
    return EvalReport(
        cm=cm,
        accuracy=(cm.tn + cm.tp) / cm.total,
        precision_0=precision_0,
        recall_0=recall_0,
        f1_0=f1_0,
        precision_1=precision_1,
        recall_1=recall_1,
        f1_1=f1_1,
        auc=auc,
        degenerate=tuple(flags),
    )


def roc_auc(scores, true_labels) -> float:
    """Rank-based AUC; a tied positive/negative pair contributes 0.5."""
    s = np.asarray(scores, dtype=float)
    t = _check_binary(true_labels, "true_labels")
    if s.shape != t.shape:
        raise ShapeError(f"length mismatch: {s.shape[0]} scores vs {t.shape[0]} labels")
    if s.size == 0:
        raise ShapeError("cannot compute AUC on zero samples")
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC requires both classes present")
    ranks = rankdata(s, method="average")
    pos_rank_sum = float(ranks[t == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


def evaluate_model(model, samples, threshold: float = 0.5, root=None) -> EvalReport:
    """Score samples with the model and report against their true labels."""
    from . import classifier

    if not samples:
        raise ShapeError("cannot evaluate on an empty sample list")
    missing = [s.id for s in samples if s.true_label is None]
    if missing:
        raise MissingLabelError(f"samples lack true labels: {missing[:5]}")
    probs = classifier.predict_proba(model, samples, root=root)
    preds = classifier.labels_from_probs(probs, threshold)
    truth = [s.true_label for s in samples]
    cm = confusion(truth, preds)
    try:
        return summarize(cm, scores=probs, true_labels=truth)
    except UndefinedMetricError:
        return summarize(cm)
