"""Accuracy evaluation plus the two continual-learning summary metrics.

``a_{t,i}`` is the validation accuracy on task i after sequential
training through task t (1-based, defined for i <= t). Average accuracy
is the mean of row t; the forgetting measure averages each task's
peak-minus-final drop. Everything here works on [0, 1] fractions; the
report layer multiplies by 100 exactly once.
"""

from __future__ import annotations

import io

import numpy as np

from .errors import ValidationError
from .net import DenseNet, EVAL, forward

EVAL_CHUNK = 2048


class AccuracyMatrix:
    """Lower-triangular accuracy table a_{t,i}, 1 <= i <= t <= T."""

    def __init__(self, T: int):
        if T < 1:
            raise ValidationError("T must be >= 1")
        self.T = T
        self._m = np.full((T, T), np.nan)

    def set(self, t: int, i: int, value: float):
        self._check(t, i)
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"accuracy {value} outside [0, 1]")
        self._m[t - 1, i - 1] = value

    def get(self, t: int, i: int) -> float:
        self._check(t, i)
        v = self._m[t - 1, i - 1]
        if np.isnan(v):
            raise ValidationError(f"a_({t},{i}) was never recorded")
        return float(v)

    def row(self, t: int) -> np.ndarray:
        """Entries a_{t,1..t}."""
        if not 1 <= t <= self.T:
            raise ValidationError(f"t={t} outside 1..{self.T}")
        return self._m[t - 1, :t].copy()

    def final_accuracies(self) -> np.ndarray:
        return self.row(self.T)

    def is_complete(self) -> bool:
        return not np.isnan(self._m[np.tril_indices(self.T)]).any()

    def _check(self, t: int, i: int):
        if not 1 <= t <= self.T:
            raise ValidationError(f"t={t} outside 1..{self.T}")
        if not 1 <= i <= t:
            raise ValidationError(f"i={i} outside 1..t={t}")

    def to_csv(self) -> str:
        """Rows are t, columns are i; cells above the diagonal stay empty."""
        buf = io.StringIO()
        buf.write("t," + ",".join(f"task_{i}" for i in range(1, self.T + 1)) + "\n")
        for t in range(1, self.T + 1):
            cells = [f"{self._m[t - 1, i - 1]:.6f}" if i <= t else "" for i in range(1, self.T + 1)]
            buf.write(f"{t}," + ",".join(cells) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "AccuracyMatrix":
        lines = [ln for ln in text.strip().splitlines() if ln]
        header = lines[0].split(",")
        if header[0] != "t" or len(header) < 2:
            raise ValidationError("accuracy CSV header must be t,task_1,...")
        T = len(header) - 1
        out = cls(T)
        for ln in lines[1:]:
            cells = ln.split(",")
            t = int(cells[0])
            for i in range(1, t + 1):
                out.set(t, i, float(cells[i]))
        return out


def evaluate(net: DenseNet, dataset) -> float:
    """Fraction of argmax-correct predictions, dropout disabled."""
    x, y = dataset
    if len(x) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    correct = 0
    for start in range(0, len(x), EVAL_CHUNK):
        xb = x[start:start + EVAL_CHUNK]
        yb = y[start:start + EVAL_CHUNK]
        logits = forward(net, xb, EVAL).logits
        correct += int((logits.argmax(axis=1) == yb).sum())
    return correct / len(x)


def average_accuracy(A: AccuracyMatrix, t: int) -> float:
    """A_t = (1/t) * sum_i a_{t,i}."""
    if not 1 <= t <= A.T:
        raise ValidationError(f"t={t} outside 1..{A.T}")
    return float(np.mean(A.row(t)))


def forgetting(A: AccuracyMatrix) -> float:
    """F = (1/(T-1)) * sum_i max_t (a_{t,i} - a_{T,i}).

    The max runs over the defined entries t in {i..T-1}; entries with
    t < i do not exist, so the printed range {1..T-1} is restricted to
    where a_{t,i} is defined.
    """
    T = A.T
    if T < 2:
        raise ValidationError("forgetting needs T >= 2")
    total = 0.0
    for i in range(1, T):
        final = A.get(T, i)
        total += max(A.get(t, i) - final for t in range(i, T))
    return total / (T - 1)
