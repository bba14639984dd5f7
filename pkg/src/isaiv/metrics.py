"""Accuracy, macro-F1 and explicit/implicit subset scoring for three-class sentiment."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

LABELS = ("positive", "neutral", "negative")
N_CLASSES = 3


def _label_index(label) -> int:
    if isinstance(label, str):
        try:
            return LABELS.index(label)
        except ValueError:
            raise ValueError(f"unknown label {label!r}") from None
    idx = int(label)
    if not 0 <= idx < N_CLASSES:
        raise ValueError(f"label index {idx} out of range")
    return idx


@dataclass(frozen=True)
class ConfusionMatrix:
    """Gold-by-predicted counts; ``counts[g, p]``."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    n_total: int
    n_explicit: int = 0
    n_implicit: int = 0
    ese_f1: Optional[float] = None
    ise_f1: Optional[float] = None
    ese_accuracy: Optional[float] = None
    ise_accuracy: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def confusion(golds: Sequence, preds: Sequence) -> ConfusionMatrix:
    """Count (gold, predicted) pairs. Labels may be strings or class indices."""
    if len(golds) != len(preds):
        raise ValueError(f"length mismatch: {len(golds)} golds vs {len(preds)} preds")
    if len(golds) == 0:
        raise ValueError("cannot score an empty prediction set")
    g = np.fromiter((_label_index(x) for x in golds), dtype=np.int64, count=len(golds))
    p = np.fromiter((_label_index(x) for x in preds), dtype=np.int64, count=len(preds))
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (g, p), 1)
    return ConfusionMatrix(counts)


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    pred_tot = counts.sum(axis=0)
    gold_tot = counts.sum(axis=1)
    precision = np.divide(tp, pred_tot, out=np.zeros(N_CLASSES), where=pred_tot > 0)
    recall = np.divide(tp, gold_tot, out=np.zeros(N_CLASSES), where=gold_tot > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros(N_CLASSES), where=denom > 0)


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean F1 over the classes that occur in gold.

    A class absent from gold is left out of the mean; a gold class that is
    never predicted contributes 0.
    """
    if cm.total < 1:
        raise ValueError("empty confusion matrix")
    present = cm.counts.sum(axis=1) > 0
    return float(per_class_f1(cm)[present].mean())


def subset_report(golds: Sequence, preds: Sequence, implicit_flags: Optional[Sequence] = None) -> MetricsReport:
    """Overall accuracy/macro-F1 plus per-subset scores for explicit and implicit examples.

    ``implicit_flags`` may be ``None`` or contain ``None`` entries for
    examples without a flag; those examples count toward the overall scores
    only. Subset scores are ``None`` when the subset is empty.
    """
    cm = confusion(golds, preds)
    report = MetricsReport(accuracy=cm.accuracy(), macro_f1=macro_f1(cm), n_total=cm.total)
    if implicit_flags is None:
        return report
    if len(implicit_flags) != len(golds):
        raise ValueError(f"length mismatch: {len(implicit_flags)} flags vs {len(golds)} examples")
    explicit_idx = [i for i, f in enumerate(implicit_flags) if f is not None and not f]
    implicit_idx = [i for i, f in enumerate(implicit_flags) if f is not None and f]
    report.n_explicit = len(explicit_idx)
    report.n_implicit = len(implicit_idx)
    if explicit_idx:
        sub = confusion([golds[i] for i in explicit_idx], [preds[i] for i in explicit_idx])
        report.ese_f1, report.ese_accuracy = macro_f1(sub), sub.accuracy()
    if implicit_idx:
        sub = confusion([golds[i] for i in implicit_idx], [preds[i] for i in implicit_idx])
        report.ise_f1, report.ise_accuracy = macro_f1(sub), sub.accuracy()
    return report
