"""ROC analysis, balanced accuracy and forgetting matrices.

Scores are fake-class probabilities; a row is predicted fake iff
``score >= threshold``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataio import TaskDataset
from .errors import MetricError, ReportError
from .netmodel import SplitModel, predict_scores


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def __len__(self) -> int:
        return len(self.fpr)

    def points(self):
        return zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist())


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    if not np.isin(labels, (0, 1)).all():
        raise MetricError("labels must be 0 or 1")
    if labels.min() == labels.max():
        raise MetricError("both classes must be present")
    return scores, labels


def roc(scores, labels) -> RocCurve:
    """One point per distinct score (descending), framed by the (0,0) and (1,1) anchors.

    Anchor thresholds are +inf and -inf.
    """
    scores, labels = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    # last index of each run of tied scores
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    P, N = tp[-1], fp[-1]
    fpr = np.r_[0.0, fp[last] / N, 1.0]
    tpr = np.r_[0.0, tp[last] / P, 1.0]
    thr = np.r_[np.inf, s[last], -np.inf]
    return RocCurve(fpr, tpr, thr)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve."""
    dx = np.diff(curve.fpr)
    return float(np.sum(dx * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


def roc_auc(scores, labels) -> float:
    return auc(roc(scores, labels))


def youden_threshold(curve: RocCurve) -> float:
    """Threshold of the point maximizing ``tpr - fpr``.

    Only score-valued points are candidates; ties go to the lower fpr, then
    the lower threshold.
    """
    fpr, tpr, thr = curve.fpr[1:-1], curve.tpr[1:-1], curve.thresholds[1:-1]
    j = tpr - fpr
    best = np.flatnonzero(j == j.max())
    best = best[fpr[best] == fpr[best].min()]
    return float(thr[best].min())


def balanced_accuracy(scores, labels, threshold: float) -> float:
    scores, labels = _check_binary(scores, labels)
    pred = scores >= threshold
    tpr = np.mean(pred[labels == 1])
    tnr = np.mean(~pred[labels == 0])
    return float(0.5 * (tpr + tnr))


@dataclass
class EvalReport:
    strategy: str
    stage: int
    threshold: float
    union_auc: float
    union_bal_acc: float
    task_ids: list[str]
    task_auc: list[float]
    task_bal_acc: list[float]
    union_roc: RocCurve = field(repr=False)

    @property
    def mean_bal_acc(self) -> float:
        return float(np.mean(self.task_bal_acc))


def evaluate(model: SplitModel, tasks: Sequence[TaskDataset], strategy: str = "", stage: int = 0) -> EvalReport:
    """Score every task's eval split with one threshold taken from the union ROC."""
    per_task = []
    for t in tasks:
        X, y = t.split("eval")
        per_task.append((predict_scores(model, X), y))
    all_s = np.concatenate([s for s, _ in per_task])
    all_y = np.concatenate([y for _, y in per_task])
    curve = roc(all_s, all_y)
    thr = youden_threshold(curve)
    return EvalReport(
        strategy=strategy,
        stage=stage,
        threshold=thr,
        union_auc=auc(curve),
        union_bal_acc=balanced_accuracy(all_s, all_y, thr),
        task_ids=[t.task_id for t in tasks],
        task_auc=[roc_auc(s, y) for s, y in per_task],
        task_bal_acc=[balanced_accuracy(s, y, thr) for s, y in per_task],
        union_roc=curve,
    )


@dataclass
class ForgettingMatrix:
    """``auc[k][j]`` / ``bal_acc[k][j]``: checkpoint after stage k on task j."""

    task_ids: list[str]
    auc: np.ndarray
    bal_acc: np.ndarray
    reports: list[EvalReport]

    def drop(self, task: int = 0, metric: str = "auc") -> float:
        """Value after the first stage that saw ``task`` minus the final value."""
        m = getattr(self, metric)
        start = min(task, m.shape[0] - 1)
        return float(m[start, task] - m[-1, task])


def forgetting_analysis(run, tasks: Sequence[TaskDataset]) -> ForgettingMatrix:
    strategy = run.strategy.value if hasattr(run.strategy, "value") else str(run.strategy)
    if len(run.checkpoints) != run.n_stages:
        have = len(run.checkpoints)
        missing = list(range(have, run.n_stages))
        raise ReportError(f"{strategy} seed {run.seed}: missing checkpoints for stages {missing}")
    reports = [evaluate(ckpt, tasks, strategy, k) for k, ckpt in enumerate(run.checkpoints)]
    return ForgettingMatrix(
        [t.task_id for t in tasks],
        np.array([r.task_auc for r in reports]),
        np.array([r.task_bal_acc for r in reports]),
        reports,
    )
