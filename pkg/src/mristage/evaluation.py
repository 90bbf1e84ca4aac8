"""Confusion matrices, per-class precision/recall/F1/support, macro and
weighted averages, and text/JSON report rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import model as model_mod
from .imaging import Batch
from .manifest import ClassLabel
from .model import ModelGraph


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # K x K ints, rows = true class, cols = predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]


@dataclass(frozen=True)
class ClassMetrics:
    label: ClassLabel
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool = False  # a zero denominator was coerced to 0


@dataclass(frozen=True)
class Averages:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvaluationReport:
    per_class: tuple[ClassMetrics, ...]
    accuracy: float
    macro_avg: Averages
    weighted_avg: Averages
    total_support: int


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], num_classes: int) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise EvaluationError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size and (
        y_true.min() < 0 or y_true.max() >= num_classes or y_pred.min() < 0 or y_pred.max() >= num_classes
    ):
        raise EvaluationError(f"class index out of range [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts=counts)


def per_class_metrics(cm: ConfusionMatrix, classes: Sequence[ClassLabel] | None = None) -> tuple[ClassMetrics, ...]:
    """Precision/recall/F1/support per class; zero denominators yield 0 and
    flag the class as degenerate."""
    k = cm.num_classes
    if classes is None:
        classes = [ClassLabel(i, f"class_{i}") for i in range(k)]
    tp = np.diag(cm.counts).astype(float)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp

    out = []
    for i in range(k):
        degenerate = False
        if tp[i] + fp[i] > 0:
            p = tp[i] / (tp[i] + fp[i])
        else:
            p, degenerate = 0.0, True
        if tp[i] + fn[i] > 0:
            r = tp[i] / (tp[i] + fn[i])
        else:
            r, degenerate = 0.0, True
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        out.append(
            ClassMetrics(
                label=classes[i],
                precision=float(p),
                recall=float(r),
                f1=float(f1),
                support=int(tp[i] + fn[i]),
                degenerate=degenerate,
            )
        )
    return tuple(out)


def aggregate(per_class: Sequence[ClassMetrics], cm: ConfusionMatrix) -> tuple[float, Averages, Averages]:
    """Accuracy plus macro (unweighted) and weighted (support) averages."""
    total = cm.total
    if total == 0:
        raise EvaluationError("empty evaluation")
    accuracy = float(np.trace(cm.counts) / total)
    k = len(per_class)
    macro = Averages(
        precision=sum(m.precision for m in per_class) / k,
        recall=sum(m.recall for m in per_class) / k,
        f1=sum(m.f1 for m in per_class) / k,
    )
    supports = np.array([m.support for m in per_class], dtype=float)
    weights = supports / supports.sum()
    weighted = Averages(
        precision=float(sum(w * m.precision for w, m in zip(weights, per_class))),
        recall=float(sum(w * m.recall for w, m in zip(weights, per_class))),
        f1=float(sum(w * m.f1 for w, m in zip(weights, per_class))),
    )
    return accuracy, macro, weighted


def build_report(
    y_true: Sequence[int],
    y_pred: Sequence[int],
    classes: Sequence[ClassLabel],
) -> EvaluationReport:
    cm = confusion_matrix(y_true, y_pred, len(classes))
    per_class = per_class_metrics(cm, classes)
    accuracy, macro, weighted = aggregate(per_class, cm)
    return EvaluationReport(
        per_class=per_class,
        accuracy=accuracy,
        macro_avg=macro,
        weighted_avg=weighted,
        total_support=cm.total,
    )


def evaluate(graph: ModelGraph, stream: Iterable[Batch], classes: Sequence[ClassLabel]) -> EvaluationReport:
    """Run inference over an ordered (shuffle=false) batch stream and
    assemble the report. Argmax ties resolve to the lowest class index."""
    y_true: list[int] = []
    y_pred: list[int] = []
    for batch in stream:
        probs = model_mod.forward(graph, batch.images, training_mode=False)
        y_pred.extend(probs.argmax(axis=1).tolist())
        y_true.extend(batch.labels.argmax(axis=1).tolist())
    if not y_true:
        raise EvaluationError("empty evaluation")
    return build_report(y_true, y_pred, classes)


def render_report(report: EvaluationReport) -> str:
    """Table-style text report: Class/Precision/Recall/F1-score/Support rows
    with two-decimal metrics, then accuracy (one-decimal percent) and
    macro/weighted average rows."""
    name_width = max(
        [len("Class"), len("Weighted avg")] + [len(m.label.name) for m in report.per_class]
    )
    header = f"{'Class':<{name_width}}  {'Precision':>9}  {'Recall':>6}  {'F1-score':>8}  {'Support':>7}"
    lines = [header]
    footnote = False
    for m in report.per_class:
        lines.append(
            f"{m.label.name:<{name_width}}  {m.precision:>9.2f}  {m.recall:>6.2f}  {m.f1:>8.2f}  {m.support:>7d}"
        )
        footnote = footnote or m.degenerate
    lines.append("")
    lines.append(f"Accuracy: {report.accuracy * 100:.1f}%  ({report.total_support} samples)")
    for title, avg in (("Macro avg", report.macro_avg), ("Weighted avg", report.weighted_avg)):
        lines.append(
            f"{title:<{name_width}}  {avg.precision:>9.2f}  {avg.recall:>6.2f}  {avg.f1:>8.2f}  {report.total_support:>7d}"
        )
    if footnote:
        lines.append("")
        lines.append("Note: metrics reported as 0 for classes with zero-count denominators.")
    return "\n".join(lines) + "\n"


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "per_class": [
            {
                "label": m.label.name,
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "support": m.support,
            }
            for m in report.per_class
        ],
        "accuracy": report.accuracy,
        "macro_avg": {
            "precision": report.macro_avg.precision,
            "recall": report.macro_avg.recall,
            "f1": report.macro_avg.f1,
        },
        "weighted_avg": {
            "precision": report.weighted_avg.precision,
            "recall": report.weighted_avg.recall,
            "f1": report.weighted_avg.f1,
        },
        "total_support": report.total_support,
    }


def save_report_json(report: EvaluationReport, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report_to_dict(report), indent=2) + "\n", encoding="utf-8")
