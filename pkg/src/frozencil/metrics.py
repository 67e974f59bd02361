"""Balanced accuracy, the task-wise accuracy matrix, and forgetting.

``a[k, i]`` is the accuracy on task i's test split after training
through task k, with predictions made over all classes seen up to k
(no task oracle). Forgetting averages, over tasks i < T, the gap
between the best historical accuracy on i and its final accuracy:

    F = (1/(T-1)) * sum_i ( max_{k in {i..T-1}} a[k, i] - a[T, i] )

The max ranges over k >= i because a[k, i] is undefined before task i
has been seen. F is reported signed (negative means the final model got
better on an old task); a non-negative clamp is available for display.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import EmbeddingDataset, TaskSchedule, select_task
from .errors import ProtocolError


def balanced_accuracy(preds, labels) -> float:
    """Mean per-class recall over the classes present in ``labels``."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if len(preds) != len(labels):
        raise ValueError(f"{len(preds)} predictions for {len(labels)} labels")
    if len(labels) == 0:
        raise ValueError("cannot score an empty prediction set")
    recalls = []
    for cls in np.unique(labels):
        mask = labels == cls
        recalls.append(float(np.mean(preds[mask] == cls)))
    return float(np.mean(recalls))


@dataclass
class AccuracyMatrix:
    """Lower-triangular store of a[k, i] values, 1-based indices."""

    n_tasks: int
    values: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.values is None:
            self.values = np.full((self.n_tasks, self.n_tasks), np.nan)

    def set(self, k: int, i: int, value: float):
        self._check(k, i)
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"accuracy {value} outside [0, 1]")
        self.values[k - 1, i - 1] = value

    def get(self, k: int, i: int) -> float:
        self._check(k, i)
        return float(self.values[k - 1, i - 1])

    def _check(self, k: int, i: int):
        if not 1 <= i <= k <= self.n_tasks:
            raise ProtocolError(
                f"a[k={k}, i={i}] undefined: need 1 <= i <= k <= {self.n_tasks}"
            )

    def to_nested_lists(self) -> list[list[float | None]]:
        """Rows k=1..T with explicit None for undefined (or unfilled) cells."""
        out: list[list[float | None]] = []
        for k in range(self.n_tasks):
            row: list[float | None] = []
            for i in range(self.n_tasks):
                v = self.values[k, i]
                row.append(None if np.isnan(v) else float(v))
            out.append(row)
        return out

    @classmethod
    def from_nested_lists(cls, rows: list[list[float | None]]) -> "AccuracyMatrix":
        n = len(rows)
        values = np.full((n, n), np.nan)
        for k, row in enumerate(rows):
            for i, v in enumerate(row):
                if v is not None:
                    values[k, i] = v
        return cls(n_tasks=n, values=values)


def evaluate_task(
    predictor,
    dataset: EmbeddingDataset,
    schedule: TaskSchedule,
    i: int,
    k: int,
    balanced: bool = True,
) -> float:
    """Accuracy a[k, i]: score ``predictor`` on task i's test split.

    The predictor must already be restricted to the classes of tasks
    1..k (class-incremental: no task oracle); predictions outside that
    candidate set are rejected as protocol violations.
    """
    if i > k:
        raise ProtocolError(f"cannot evaluate task {i} after training only through {k}")
    schedule._check_index(k)
    view = select_task(dataset, schedule, i, "test")
    candidates = schedule.classes_through(k)
    preds = []
    labels = []
    for rec in view.records:
        pred = int(predictor(rec.embedding))
        if pred not in candidates:
            raise ProtocolError(
                f"predictor returned class {pred} outside the candidate set C_<= {k}"
            )
        preds.append(pred)
        labels.append(rec.label)
    if balanced:
        return balanced_accuracy(preds, labels)
    return float(np.mean(np.asarray(preds) == np.asarray(labels)))


def forgetting(matrix: AccuracyMatrix, clamp_non_negative: bool = False) -> float | None:
    """Average best-minus-final accuracy gap over tasks 1..T-1.

    Returns None when T < 2 (the measure is undefined). Requires every
    a[k, i] with i <= k to be present.
    """
    T = matrix.n_tasks
    if T < 2:
        return None
    gaps = []
    for i in range(1, T):
        column = [matrix.get(k, i) for k in range(i, T)]
        if any(np.isnan(column)) or np.isnan(matrix.get(T, i)):
            raise ValueError(f"accuracy matrix has unfilled cells for task {i}")
        gaps.append(max(column) - matrix.get(T, i))
    value = float(np.mean(gaps))
    if clamp_non_negative:
        value = max(value, 0.0)
    return value
