# src/harbench/metrics.py
"""
Confusion matrix and F1 scores

Rows are true classes, columns predicted classes.
Empty precision or recall denominators count as 0.
"""

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from harbench.errors import (
  RejectedInputError,
  UndefinedMetricError,
)

#

# The score formulas lead with a factor 2 over
# p·r / (p + r), which is the standard f1. Read
# instead as a 2 on top of f1 = 2pr / (p + r), they
# double every score; `literal=True` gives that
# doubled reading. It is not bounded by 1.
LITERAL_FACTOR = 2.0

#


def _ratio(
  num: npt.NDArray[np.float64], den: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64]:
  out = np.zeros_like(num, dtype=np.float64)
  np.divide(num, den, out=out, where=den > 0)
  return out


@dataclass
class ConfusionMatrix:
  counts: npt.NDArray[np.int64]
  ignored: tuple[int, ...] = ()

  @classmethod
  def empty(cls, n_classes: int) -> "ConfusionMatrix":
    if n_classes < 1:
      raise RejectedInputError("Need at least one class")
    return cls(np.zeros((n_classes, n_classes), np.int64))

  @classmethod
  def from_predictions(
    cls,
    true: npt.ArrayLike,
    pred: npt.ArrayLike,
    n_classes: int,
  ) -> "ConfusionMatrix":
    t = np.asarray(true, dtype=np.int64).reshape(-1)
    p = np.asarray(pred, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
      raise RejectedInputError(
        f"{t.size} labels for {p.size} predictions"
      )
    cm = cls.empty(n_classes)
    if t.size:
      _check_range(t, n_classes)
      _check_range(p, n_classes)
      np.add.at(cm.counts, (t, p), 1)
    return cm

  @property
  def n_classes(self) -> int:
    return int(self.counts.shape[0])

  @property
  def total(self) -> int:
    return int(self.counts.sum())

  def accumulate(self, true: int, pred: int) -> None:
    n = self.n_classes
    if not (0 <= true < n and 0 <= pred < n):
      raise RejectedInputError(
        f"Labels ({true}, {pred}) outside [0, {n})"
      )
    self.counts[true, pred] += 1

  def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
    if other.counts.shape != self.counts.shape:
      raise RejectedInputError(
        "Cannot merge matrices of different sizes"
      )
    return ConfusionMatrix(
      self.counts + other.counts,
      tuple(sorted(set(self.ignored) | set(other.ignored))),
    )

  def without_class(self, index: int) -> "ConfusionMatrix":
    """
    Drop a class from scoring: its true items are
    removed and it takes no part in the averages.
    Other items predicted as it still count as
    misses of their own class.
    """
    if not 0 <= index < self.n_classes:
      raise RejectedInputError(
        f"No class {index} to drop"
      )
    counts = self.counts.copy()
    counts[index, :] = 0
    return ConfusionMatrix(
      counts, tuple(sorted({*self.ignored, index}))
    )

  #

  def _require_items(self) -> None:
    if self.total == 0:
      raise UndefinedMetricError(
        "Scores are undefined on an empty matrix"
      )

  def accuracy(self) -> float:
    self._require_items()
    return float(np.trace(self.counts)) / self.total

  def support(self) -> npt.NDArray[np.int64]:
    return self.counts.sum(axis=1)

  def predicted(self) -> npt.NDArray[np.int64]:
    return self.counts.sum(axis=0)

  def precision(self) -> npt.NDArray[np.float64]:
    return _ratio(
      np.diag(self.counts).astype(np.float64),
      self.predicted().astype(np.float64),
    )

  def recall(self) -> npt.NDArray[np.float64]:
    return _ratio(
      np.diag(self.counts).astype(np.float64),
      self.support().astype(np.float64),
    )

  def f1_per_class(self) -> npt.NDArray[np.float64]:
    p = self.precision()
    r = self.recall()
    return _ratio(2.0 * p * r, p + r)

  def scored_classes(self) -> npt.NDArray[np.bool_]:
    """
    Classes that occur as truth or prediction and
    are not ignored.
    """
    scored = (self.support() + self.predicted()) > 0
    scored[list(self.ignored)] = False
    return scored

  def mean_f1(self, literal: bool = False) -> float:
    """
    Unweighted mean of per-class f1 over the classes
    that occur in truth or prediction.
    `literal` doubles it, see `LITERAL_FACTOR`.
    """
    self._require_items()
    scored = self.scored_classes()
    value = float(self.f1_per_class()[scored].mean())
    return value * LITERAL_FACTOR if literal else value

  def weighted_f1(self, literal: bool = False) -> float:
    """Per-class f1 weighted by N_c / N_total."""
    self._require_items()
    support = self.support().astype(np.float64)
    value = float(
      (support / support.sum() * self.f1_per_class()).sum()
    )
    return value * LITERAL_FACTOR if literal else value

  def binary_f1(
    self, positive: int = 1, literal: bool = False
  ) -> float:
    """
    f1 of the `positive` class of a two-class
    problem, e.g. freeze against no freeze.
    """
    if self.n_classes != 2 or positive not in (0, 1):
      raise RejectedInputError(
        f"Binary f1 needs 2 classes and a positive "
        f"class in (0, 1), got {self.n_classes} and "
        f"{positive}"
      )
    self._require_items()
    value = float(self.f1_per_class()[positive])
    return value * LITERAL_FACTOR if literal else value

  def to_dict(self) -> dict[str, object]:
    return {
      "counts": self.counts.tolist(),
      "mean_f1": self.mean_f1(),
      "weighted_f1": self.weighted_f1(),
      "accuracy": self.accuracy(),
    }


def _check_range(
  labels: npt.NDArray[np.int64], n_classes: int
) -> None:
  if labels.min() < 0 or labels.max() >= n_classes:
    raise RejectedInputError(
      f"Labels outside [0, {n_classes})"
    )
