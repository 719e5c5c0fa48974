from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from ..observability.telemetry_collector import TelemetryCollector


class ClassScore(BaseModel):
    label: int
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int


class ClassificationReport(BaseModel):
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float
    per_class: List[ClassScore] = Field(default_factory=list)
    # classes that are neither gold nor predicted anywhere; they count as zeros
    absent_classes: List[int] = Field(default_factory=list)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def confusion_matrix(predictions: Sequence[Tuple[int, int]], classes: int) -> np.ndarray:
    """rows = gold, columns = predicted"""
    matrix = np.zeros((classes, classes), dtype=np.int64)
    for gold, pred in predictions:
        if not (0 <= gold < classes and 0 <= pred < classes):
            raise ValueError(f"label pair ({gold}, {pred}) outside 0..{classes - 1}")
        matrix[gold, pred] += 1
    return matrix


def eval_classify(predictions: Sequence[Tuple[int, int]], classes: int) -> ClassificationReport:
    matrix = confusion_matrix(predictions, classes)
    per_class, absent = [], []
    for k in range(classes):
        tp = matrix[k, k]
        predicted = int(matrix[:, k].sum())
        support = int(matrix[k, :].sum())
        p = _ratio(tp, predicted)
        r = _ratio(tp, support)
        per_class.append(ClassScore(label=k, precision=p, recall=r, f1=_ratio(2 * p * r, p + r),
                                    support=support, predicted=predicted))
        if predicted == 0 and support == 0:
            absent.append(k)
    report = ClassificationReport(
        macro_precision=float(np.mean([c.precision for c in per_class])),
        macro_recall=float(np.mean([c.recall for c in per_class])),
        macro_f1=float(np.mean([c.f1 for c in per_class])),
        accuracy=_ratio(float(np.trace(matrix)), float(matrix.sum())),
        per_class=per_class,
        absent_classes=absent,
    )
    TelemetryCollector("eval").collect("classification_evaluated", {
        "examples": int(matrix.sum()), "macro_f1": report.macro_f1,
    })
    return report
