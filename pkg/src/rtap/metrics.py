"""Evaluation mathematics: RMSE, confusion matrices and F-beta scores.

Conventions: a ratio with zero denominator is 0, and F-beta is 0 whenever its
denominator is 0. Recall is ``TP / (TP + FN)``.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

BETA = 0.5
SEVERITY_CLASSES = ("normal", "low", "medium", "high")
BINARY_CLASSES = ("normal", "anomaly")


def rmse(predicted: Sequence[float], actual: Sequence[float]) -> float:
    p = np.asarray(predicted, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {a.shape}")
    if p.size == 0:
        raise ValueError("rmse of an empty sequence is undefined")
    return math.sqrt(float(np.mean((p - a) ** 2)))


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[i, j]`` = instances of true class ``i`` predicted as class ``j``."""

    counts: np.ndarray
    classes: tuple[str, ...]

    def __post_init__(self):
        c = np.asarray(self.counts)
        k = len(self.classes)
        if c.shape != (k, k):
            raise ValueError(f"counts must be {k}x{k} for classes {self.classes}")
        if (c < 0).any():
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @classmethod
    def from_labels(cls, y_true: Sequence[int], y_pred: Sequence[int], classes: Sequence[str]) -> "ConfusionMatrix":
        """Codes ``0 .. len(classes) - 1`` index ``classes``."""
        t = np.asarray(y_true, dtype=np.int64)
        p = np.asarray(y_pred, dtype=np.int64)
        if t.shape != p.shape:
            raise ValueError("y_true and y_pred differ in length")
        k = len(classes)
        if t.size and (t.min() < 0 or p.min() < 0 or t.max() >= k or p.max() >= k):
            raise ValueError(f"label codes must lie in [0, {k})")
        counts = np.bincount(t * k + p, minlength=k * k).reshape(k, k)
        return cls(counts, tuple(classes))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def index(self, cls_: int | str) -> int:
        return self.classes.index(cls_) if isinstance(cls_, str) else int(cls_)

    def tp(self, c) -> int:
        i = self.index(c)
        return int(self.counts[i, i])

    def fp(self, c) -> int:
        i = self.index(c)
        return int(self.counts[:, i].sum() - self.counts[i, i])

    def fn(self, c) -> int:
        i = self.index(c)
        return int(self.counts[i, :].sum() - self.counts[i, i])

    def tn(self, c) -> int:
        return self.total - self.tp(c) - self.fp(c) - self.fn(c)

    def support(self, c) -> int:
        return int(self.counts[self.index(c), :].sum())

    def accuracy(self) -> float:
        return _ratio(int(np.trace(self.counts)), self.total)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f_beta(precision: float, recall: float, beta: float = BETA) -> float:
    if beta <= 0:
        raise ValueError("beta must be positive")
    if precision == recall:
        return float(precision)
    b2 = beta * beta
    return _ratio((1 + b2) * precision * recall, b2 * precision + recall)


def precision_recall_f(cm: ConfusionMatrix, positive, beta: float = BETA) -> tuple[float, float, float]:
    tp, fp, fn = cm.tp(positive), cm.fp(positive), cm.fn(positive)
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    return p, r, f_beta(p, r, beta)


def macro_f(cm: ConfusionMatrix, beta: float = BETA, exclude_absent: bool = False) -> float:
    """Unweighted mean of per-class F-beta.

    With ``exclude_absent`` classes that have no true instances are left out of
    the mean; if none remain the result is 0.
    """
    scores = [precision_recall_f(cm, c, beta)[2] for c in range(len(cm.classes))
              if not exclude_absent or cm.support(c) > 0]
    return float(np.mean(scores)) if scores else 0.0


def micro_f(cm: ConfusionMatrix, beta: float = BETA) -> float:
    """F-beta of precision and recall pooled over all classes."""
    tp = int(np.trace(cm.counts))
    fp = sum(cm.fp(c) for c in range(len(cm.classes)))
    fn = sum(cm.fn(c) for c in range(len(cm.classes)))
    return f_beta(_ratio(tp, tp + fp), _ratio(tp, tp + fn), beta)


@dataclass(frozen=True)
class ClassScores:
    precision: float | None
    recall: float | None
    f_beta: float | None
    support: int


@dataclass(frozen=True)
class EvaluationReport:
    """Serialized with fields in declaration order; absent classes have null scores."""

    rmse: dict[str, float]
    baseline_rmse: dict[str, dict[str, float]]
    anomaly: ClassScores
    severity: dict[str, ClassScores]
    macro_f: float
    micro_f: float
    imbalance_ratio: float | None
    beta: float = BETA
    n_instances: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def scores(s: ClassScores) -> dict:
            return {"precision": s.precision, "recall": s.recall, "f_beta": s.f_beta, "support": s.support}

        return {
            "beta": self.beta,
            "n_instances": self.n_instances,
            "imbalance_ratio": self.imbalance_ratio,
            "rmse": dict(self.rmse),
            "baseline_rmse": {k: dict(v) for k, v in self.baseline_rmse.items()},
            "anomaly": scores(self.anomaly),
            "severity": {k: scores(v) for k, v in self.severity.items()},
            "macro_f": self.macro_f,
            "micro_f": self.micro_f,
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _class_scores(cm: ConfusionMatrix, c: int, beta: float) -> ClassScores:
    support = cm.support(c)
    if support == 0:
        return ClassScores(None, None, None, 0)
    return ClassScores(*precision_recall_f(cm, c, beta), support)


def assemble_report(
    rmse_per_target: Mapping[str, float],
    cm_binary: ConfusionMatrix,
    cm_severity: ConfusionMatrix,
    baseline_rmse: Mapping[str, Mapping[str, float]] | None = None,
    beta: float = BETA,
) -> EvaluationReport:
    """Combine regression errors and both confusion matrices into one report.

    Macro F-beta averages over severity classes present in the truth.
    """
    if cm_binary.classes != BINARY_CLASSES:
        raise ValueError(f"binary matrix must be over {BINARY_CLASSES}, got {cm_binary.classes}")
    if cm_severity.classes != SEVERITY_CLASSES:
        raise ValueError(f"severity matrix must be over {SEVERITY_CLASSES}, got {cm_severity.classes}")
    if cm_binary.total != cm_severity.total:
        raise ValueError("binary and severity matrices count different instances")
    # The binary truth must agree with the collapsed severity truth.
    sev_true = cm_severity.counts.sum(axis=1)
    if cm_binary.support(0) != sev_true[0] or cm_binary.support(1) != sev_true[1:].sum():
        raise ValueError("binary and severity matrices disagree on true class counts")

    n_anom = cm_binary.support(1)
    ratio = cm_binary.support(0) / n_anom if n_anom else None
    return EvaluationReport(
        rmse={k: float(v) for k, v in rmse_per_target.items()},
        baseline_rmse={k: {t: float(x) for t, x in v.items()} for k, v in (baseline_rmse or {}).items()},
        anomaly=_class_scores(cm_binary, 1, beta),
        severity={name: _class_scores(cm_severity, i, beta) for i, name in enumerate(SEVERITY_CLASSES)},
        macro_f=macro_f(cm_severity, beta, exclude_absent=True),
        micro_f=micro_f(cm_severity, beta),
        imbalance_ratio=ratio,
        beta=beta,
        n_instances=cm_severity.total,
    )
