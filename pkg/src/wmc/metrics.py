"""Confusion-matrix statistics: accuracy, precision, recall, F1, specificity.

Multi-class tasks are scored one-vs-rest per class and macro-averaged
(unweighted class means); accuracy is micro (correct / total).
Sensitivity is reported as a synonym for recall.  Ratios with a zero
denominator are reported as 0.0 and flagged.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class ClassScores:
    label: str
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    specificity: float
    degenerate: bool  # some denominator was zero


@dataclass
class MetricsReport:
    labels: list[str]
    confusion: np.ndarray  # rows = true, cols = predicted
    accuracy: float
    per_class: list[ClassScores]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    macro_specificity: float
    total: int
    averaging: str = "macro"
    notes: list[str] = field(default_factory=list)

    @property
    def macro_sensitivity(self):
        return self.macro_recall

    def to_dict(self):
        return {
            "labels": self.labels,
            "confusion": self.confusion.tolist(),
            "total": self.total,
            "accuracy": self.accuracy,
            "averaging": self.averaging,
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "sensitivity": self.macro_sensitivity,
                "f1": self.macro_f1,
                "specificity": self.macro_specificity,
            },
            "per_class": {
                s.label: {
                    "tp": s.tp, "fp": s.fp, "fn": s.fn, "tn": s.tn,
                    "precision": s.precision, "recall": s.recall,
                    "sensitivity": s.recall, "f1": s.f1,
                    "specificity": s.specificity, "degenerate": s.degenerate,
                }
                for s in self.per_class
            },
            "notes": self.notes,
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    CSV_FIELDS = ["accuracy", "macro_precision", "macro_recall", "macro_f1",
                  "macro_specificity", "total"]

    def csv_row(self):
        return [f"{self.accuracy:.6f}", f"{self.macro_precision:.6f}",
                f"{self.macro_recall:.6f}", f"{self.macro_f1:.6f}",
                f"{self.macro_specificity:.6f}", str(self.total)]


def _safe_ratio(num, den):
    if den == 0:
        return 0.0, True
    return num / den, False


def confusion_matrix(true_labels, predicted_labels, class_set):
    labels = list(class_set)
    index = {lab: i for i, lab in enumerate(labels)}
    if len(true_labels) != len(predicted_labels):
        raise DataError(f"label sequences differ in length: "
                        f"{len(true_labels)} vs {len(predicted_labels)}")
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        if t not in index:
            raise DataError(f"unknown true label {t!r} (classes: {labels})")
        if p not in index:
            raise DataError(f"unknown predicted label {p!r} (classes: {labels})")
        counts[index[t], index[p]] += 1
    return counts, labels


def score(true_labels, predicted_labels, class_set) -> MetricsReport:
    counts, labels = confusion_matrix(true_labels, predicted_labels, class_set)
    total = int(counts.sum())
    accuracy = float(np.trace(counts) / total) if total else 0.0

    per_class = []
    notes = []
    for k, lab in enumerate(labels):
        tp = int(counts[k, k])
        fp = int(counts[:, k].sum() - tp)
        fn = int(counts[k, :].sum() - tp)
        tn = total - tp - fp - fn
        precision, d1 = _safe_ratio(tp, tp + fp)
        recall, d2 = _safe_ratio(tp, tp + fn)
        f1, d3 = _safe_ratio(2 * precision * recall, precision + recall)
        specificity, d4 = _safe_ratio(tn, tn + fp)
        degenerate = d1 or d2 or d3 or d4
        if degenerate:
            notes.append(f"class {lab}: zero denominator, affected metrics reported as 0")
        per_class.append(ClassScores(lab, tp, fp, fn, tn,
                                     precision, recall, f1, specificity, degenerate))

    n = len(per_class)
    return MetricsReport(
        labels=labels,
        confusion=counts,
        accuracy=accuracy,
        per_class=per_class,
        macro_precision=sum(s.precision for s in per_class) / n,
        macro_recall=sum(s.recall for s in per_class) / n,
        macro_f1=sum(s.f1 for s in per_class) / n,
        macro_specificity=sum(s.specificity for s in per_class) / n,
        total=total,
        notes=notes,
    )


def write_csv(reports: dict[str, MetricsReport], path):
    """One row per named report, for sweep-style aggregation."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name"] + MetricsReport.CSV_FIELDS)
        for name, report in reports.items():
            writer.writerow([name] + report.csv_row())
