import numpy as np
import pytest
from sklearn.metrics import f1_score

from harbench.errors import (
  RejectedInputError,
  UndefinedMetricError,
)
from harbench.metrics import LITERAL_FACTOR, ConfusionMatrix


def oracle_scores(counts):
  """Per-class loops, no vector tricks."""
  n = counts.shape[0]
  total = counts.sum()
  f1s, weights, scored = [], [], []
  for c in range(n):
    tp = counts[c, c]
    support = counts[c, :].sum()
    predicted = counts[:, c].sum()
    precision = tp / predicted if predicted else 0.0
    recall = tp / support if support else 0.0
    f1 = (
      2 * precision * recall / (precision + recall)
      if precision + recall
      else 0.0
    )
    f1s.append(f1)
    weights.append(support / total)
    if support + predicted:
      scored.append(f1)
  return (
    sum(scored) / len(scored),
    sum(w * f for w, f in zip(weights, f1s)),
  )


def test_worked_example():
  cm = ConfusionMatrix.from_predictions(
    [0, 0, 1, 1], [0, 1, 1, 1], 2
  )
  f1 = cm.f1_per_class()
  assert f1[0] == pytest.approx(2 / 3)
  assert f1[1] == pytest.approx(0.8)
  assert cm.mean_f1() == pytest.approx(0.7333, abs=1e-4)
  # Equal class sizes
  assert cm.weighted_f1() == pytest.approx(cm.mean_f1())


def test_all_predictions_one_class():
  cm = ConfusionMatrix.from_predictions(
    [0, 0, 1, 1], [1, 1, 1, 1], 2
  )
  assert cm.mean_f1() == pytest.approx(1 / 3)


def test_weighted_by_support():
  cm = ConfusionMatrix.from_predictions(
    [0, 0, 0, 1], [0, 0, 0, 2], 3
  )
  assert cm.f1_per_class()[:2].tolist() == [1.0, 0.0]
  assert cm.weighted_f1() == pytest.approx(0.75)

  skewed = ConfusionMatrix.from_predictions(
    [0, 0, 0, 1], [0, 0, 0, 0], 2
  )
  assert skewed.weighted_f1() == pytest.approx(
    0.75 * 6 / 7
  )


def test_random_matrices_match_oracle():
  rng = np.random.default_rng(7)
  for _ in range(1000):
    n = int(rng.integers(2, 7))
    counts = rng.integers(0, 20, size=(n, n))
    counts[rng.random((n, n)) < 0.3] = 0
    if counts.sum() == 0:
      counts[0, 0] = 1
    cm = ConfusionMatrix(counts.astype(np.int64))
    mean, weighted = oracle_scores(counts)
    assert abs(cm.mean_f1() - mean) < 1e-12
    assert abs(cm.weighted_f1() - weighted) < 1e-12


def test_matches_sklearn_on_label_vectors():
  rng = np.random.default_rng(11)
  for _ in range(50):
    true = rng.integers(0, 5, size=200)
    pred = np.where(
      rng.random(200) < 0.6, true, rng.integers(0, 5, 200)
    )
    cm = ConfusionMatrix.from_predictions(true, pred, 5)
    assert cm.mean_f1() == pytest.approx(
      f1_score(true, pred, average="macro", zero_division=0)
    )
    assert cm.weighted_f1() == pytest.approx(
      f1_score(
        true, pred, average="weighted", zero_division=0
      )
    )


def test_literal_scores_are_doubled():
  cm = ConfusionMatrix.from_predictions(
    [0, 0, 1, 1], [0, 1, 1, 1], 2
  )
  assert cm.mean_f1(literal=True) == pytest.approx(
    LITERAL_FACTOR * cm.mean_f1()
  )
  assert cm.weighted_f1(literal=True) == pytest.approx(
    LITERAL_FACTOR * cm.weighted_f1()
  )


def test_leading_two_form_is_the_standard_score():
  cm = ConfusionMatrix.from_predictions(
    [0, 0, 0, 1, 1, 2], [0, 1, 0, 1, 2, 2], 3
  )
  p, r = cm.precision(), cm.recall()
  half = p * r / (p + r)
  n = cm.support() / cm.total
  assert cm.mean_f1() == pytest.approx(2 / 3 * half.sum())
  assert cm.weighted_f1() == pytest.approx(2 * (n * half).sum())
  assert cm.mean_f1(literal=True) > cm.mean_f1()


def test_accumulate_and_merge():
  a = ConfusionMatrix.empty(3)
  a.accumulate(0, 0)
  a.accumulate(2, 1)
  b = ConfusionMatrix.from_predictions([1], [1], 3)
  merged = a.merge(b)
  assert merged.total == 3
  assert merged.counts[2, 1] == 1
  assert merged.accuracy() == pytest.approx(2 / 3)
  with pytest.raises(RejectedInputError):
    a.merge(ConfusionMatrix.empty(2))
  with pytest.raises(RejectedInputError):
    a.accumulate(3, 0)


def test_without_class_drops_null():
  cm = ConfusionMatrix(
    np.array(
      [[5, 1, 0], [2, 4, 0], [0, 1, 3]], dtype=np.int64
    )
  )
  dropped = cm.without_class(0)
  assert dropped.ignored == (0,)
  assert dropped.counts[0].sum() == 0
  assert not dropped.scored_classes()[0]
  # Items of class 1 predicted as Null stay misses.
  assert dropped.recall()[1] == pytest.approx(4 / 6)
  f1 = dropped.f1_per_class()
  assert dropped.mean_f1() == pytest.approx(
    (f1[1] + f1[2]) / 2
  )


def test_empty_matrix_is_undefined():
  cm = ConfusionMatrix.empty(4)
  with pytest.raises(UndefinedMetricError):
    cm.mean_f1()
  with pytest.raises(UndefinedMetricError):
    cm.weighted_f1()
  assert cm.f1_per_class().tolist() == [0.0] * 4


def test_rejects_bad_labels():
  with pytest.raises(RejectedInputError):
    ConfusionMatrix.from_predictions([0, 1], [0], 2)
  with pytest.raises(RejectedInputError):
    ConfusionMatrix.from_predictions([0, 2], [0, 1], 2)


def test_binary_f1_scores_the_positive_class():
  cm = ConfusionMatrix.from_predictions(
    [0, 0, 0, 1, 1], [0, 0, 1, 1, 0], 2
  )
  assert cm.binary_f1() == pytest.approx(0.5)
  assert cm.binary_f1(positive=0) == pytest.approx(2 / 3)
  assert cm.binary_f1(literal=True) == pytest.approx(1.0)
  assert cm.binary_f1() == pytest.approx(
    f1_score([0, 0, 0, 1, 1], [0, 0, 1, 1, 0])
  )
  with pytest.raises(RejectedInputError):
    ConfusionMatrix.from_predictions([0, 2], [0, 1], 3).binary_f1()
