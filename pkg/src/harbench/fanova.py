# src/harbench/fanova.py
"""
Functional ANOVA of search results

A random forest predicts test performance from the
hyperparameters. Every tree partitions the search
box into axis-aligned leaf boxes with constant
predictions, so the marginal of a tree over a set of
dimensions U is exact: on each cell of the grid that
the leaf edges cut along U, it is the sum of the
covering leaves' values weighted by their volume
fraction along the other dimensions. V_U is the
variance of that marginal minus the V_W of every
proper non-empty subset W of U.

Log-scaled parameters are analysed in log10 space,
integer parameters over unit-width boxes, and
parameters with a single value are left out.
"""

import itertools
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import numpy.typing as npt
from loguru import logger
from sklearn.ensemble import RandomForestRegressor

from harbench.config import FOREST_TREES
from harbench.errors import RejectedInputError
from harbench.records import ExperimentRecord
from harbench.search_space import (
  PARAM_CATEGORIES,
  SearchSpace,
)

#

MIN_RECORDS = 20
MIN_SAMPLES_LEAF = 3
MAX_FEATURES = 0.7
INTERACTION_ORDER = 2
# sklearn marks leaves with child index -1
_LEAF = -1

Subset = tuple[str, ...]

#


@dataclass
class Tree:
  """
  Leaf boxes of one regression tree.

  `lower` and `upper` are (leaves, dims) arrays; leaf
  l covers lower[l] ≤ x ≤ upper[l] and predicts
  values[l].
  """

  lower: npt.NDArray[np.float64]
  upper: npt.NDArray[np.float64]
  values: npt.NDArray[np.float64]

  def __post_init__(self) -> None:
    if np.any(self.upper <= self.lower):
      raise RejectedInputError(
        "Every leaf box needs positive volume"
      )
    if not np.all(np.isfinite(self.values)):
      raise RejectedInputError("Leaf values must be finite")

  @classmethod
  def from_sklearn(
    cls, estimator: Any, bounds: npt.NDArray[np.float64]
  ) -> "Tree":
    """
    Leaf boxes of a fitted `DecisionTreeRegressor`,
    clipped to `bounds`. Leaves cut off by the bounds
    are dropped.
    """
    t = estimator.tree_
    lowers, uppers, values = [], [], []
    stack = [(0, bounds[:, 0].copy(), bounds[:, 1].copy())]
    while stack:
      node, lo, hi = stack.pop()
      left = t.children_left[node]
      right = t.children_right[node]
      if left == _LEAF:
        if np.all(hi > lo):
          lowers.append(lo)
          uppers.append(hi)
          values.append(float(t.value[node].reshape(-1)[0]))
        continue
      dim = t.feature[node]
      threshold = t.threshold[node]
      left_hi = hi.copy()
      left_hi[dim] = min(hi[dim], threshold)
      right_lo = lo.copy()
      right_lo[dim] = max(lo[dim], threshold)
      stack.append((right, right_lo, hi))
      stack.append((left, lo, left_hi))
    return cls(
      np.array(lowers), np.array(uppers), np.array(values)
    )

  @property
  def n_leaves(self) -> int:
    return int(self.values.shape[0])

  def volume_fractions(
    self, bounds: npt.NDArray[np.float64]
  ) -> npt.NDArray[np.float64]:
    """(leaves, dims) width of each leaf / domain."""
    widths = bounds[:, 1] - bounds[:, 0]
    return (self.upper - self.lower) / widths

  def predict(
    self,
    points: npt.NDArray[np.float64],
    bounds: npt.NDArray[np.float64],
  ) -> npt.NDArray[np.float64]:
    """
    Leaf value at each point; ties on a split go
    left, as in the fitted tree.
    """
    x = np.clip(points, bounds[:, 0], bounds[:, 1])
    at_low = self.lower <= bounds[:, 0]
    inside = (
      (x[:, None, :] > self.lower[None])
      | (at_low[None] & (x[:, None, :] >= self.lower[None]))
    ) & (x[:, None, :] <= self.upper[None])
    leaf = inside.all(axis=2).argmax(axis=1)
    return self.values[leaf]

  def mean(self, bounds: npt.NDArray[np.float64]) -> float:
    weight = self.volume_fractions(bounds).prod(axis=1)
    return float(weight @ self.values)

  def variance(self, bounds: npt.NDArray[np.float64]) -> float:
    weight = self.volume_fractions(bounds).prod(axis=1)
    mean = float(weight @ self.values)
    return float(weight @ (self.values - mean) ** 2)


@dataclass
class Forest:
  """
  Trees over a box; `bounds` is (dims, 2) with the
  low and high end of every named dimension.
  """

  trees: list[Tree]
  names: list[str]
  bounds: npt.NDArray[np.float64]
  log_scaled: list[bool] = field(default_factory=list)
  metadata: dict[str, Any] = field(default_factory=dict)

  def __post_init__(self) -> None:
    if self.bounds.shape != (len(self.names), 2):
      raise RejectedInputError(
        "One (low, high) pair per dimension"
      )
    if np.any(self.bounds[:, 1] <= self.bounds[:, 0]):
      raise RejectedInputError(
        "Every dimension needs a positive range"
      )
    if not self.log_scaled:
      self.log_scaled = [False] * len(self.names)

  def index(self, name: str) -> int:
    if name not in self.names:
      raise RejectedInputError(f"Unknown dimension {name}")
    return self.names.index(name)

  def predict(
    self, points: npt.NDArray[np.float64]
  ) -> npt.NDArray[np.float64]:
    return np.mean(
      [t.predict(points, self.bounds) for t in self.trees],
      axis=0,
    )


#


@dataclass
class TreeMarginal:
  """
  Marginal of one tree over some dimensions: `values`
  holds one number per grid cell, the cells being cut
  by `edges` along every dimension.
  """

  edges: list[npt.NDArray[np.float64]]
  values: npt.NDArray[np.float64]
  weights: npt.NDArray[np.float64]

  def variance(self) -> float:
    mean = float((self.weights * self.values).sum())
    return float(
      (self.weights * (self.values - mean) ** 2).sum()
    )


def tree_marginal(
  tree: Tree,
  bounds: npt.NDArray[np.float64],
  dims: Sequence[int],
) -> TreeMarginal:
  if not dims:
    raise RejectedInputError("Need at least one dimension")
  fractions = tree.volume_fractions(bounds)
  others = [d for d in range(bounds.shape[0]) if d not in dims]
  weight = tree.values * fractions[:, others].prod(axis=1)
  covers = []
  edges = []
  cell_fractions = []
  for d in dims:
    cuts = np.unique(
      np.concatenate([tree.lower[:, d], tree.upper[:, d]])
    )
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    covers.append(
      (
        (tree.lower[:, d, None] <= mids)
        & (mids < tree.upper[:, d, None])
      ).astype(np.float64)
    )
    edges.append(cuts)
    cell_fractions.append(
      np.diff(cuts) / (bounds[d, 1] - bounds[d, 0])
    )
  axes = "abcdefghijk"[: len(dims)]
  values = np.einsum(
    "l," + ",".join(f"l{a}" for a in axes) + "->" + axes,
    weight,
    *covers,
  )
  weights = np.einsum(
    ",".join(axes) + "->" + axes, *cell_fractions
  )
  return TreeMarginal(edges, values, weights)


def _tree_components(
  tree: Tree,
  bounds: npt.NDArray[np.float64],
  subsets: list[tuple[int, ...]],
) -> tuple[float, dict[tuple[int, ...], float]]:
  """
  Total variance and V_U of every subset, the
  subsets listed so that subsets come first.
  """
  components: dict[tuple[int, ...], float] = {}
  for subset in subsets:
    marginal = tree_marginal(tree, bounds, subset).variance()
    lower_order = sum(
      components[w]
      for r in range(1, len(subset))
      for w in itertools.combinations(subset, r)
    )
    components[subset] = max(0.0, marginal - lower_order)
  return tree.variance(bounds), components


@dataclass
class Marginal:
  """
  Marginal over `dims` per tree, with the forest's
  V_U (mean over trees) and fraction of variance.
  """

  dims: Subset
  trees: list[TreeMarginal]
  variance: float
  fraction: float


@dataclass
class Decomposition:
  total_variance: float
  variances: dict[Subset, float]
  fractions: dict[Subset, float]

  def singletons(self) -> dict[str, float]:
    return {
      u[0]: f for u, f in self.fractions.items() if len(u) == 1
    }

  def pairs(self) -> dict[Subset, float]:
    return {
      u: f for u, f in self.fractions.items() if len(u) == 2
    }

  def explained(self) -> float:
    return float(sum(self.fractions.values()))


def _subsets(
  n_dims: int, order: int
) -> list[tuple[int, ...]]:
  return [
    subset
    for r in range(1, min(order, n_dims) + 1)
    for subset in itertools.combinations(range(n_dims), r)
  ]


def importance(
  forest: Forest,
  order: int = INTERACTION_ORDER,
  parallelism: int = 1,
) -> Decomposition:
  """
  V_U and V_U / V of every subset of up to `order`
  dimensions.

  Fractions are computed per tree and averaged over
  the trees that vary; a forest of constant trees
  has all fractions 0.
  """
  subsets = _subsets(len(forest.names), order)
  with ThreadPoolExecutor(
    max_workers=max(1, parallelism)
  ) as executor:
    per_tree = list(
      executor.map(
        lambda t: _tree_components(t, forest.bounds, subsets),
        forest.trees,
      )
    )
  varying = [(v, c) for v, c in per_tree if v > 0]
  names = {
    s: tuple(forest.names[d] for d in s) for s in subsets
  }
  variances = {
    names[s]: float(np.mean([c[s] for _, c in per_tree]))
    for s in subsets
  }
  fractions = {
    names[s]: (
      float(np.mean([c[s] / v for v, c in varying]))
      if varying
      else 0.0
    )
    for s in subsets
  }
  return Decomposition(
    total_variance=float(np.mean([v for v, _ in per_tree])),
    variances=variances,
    fractions=fractions,
  )


def marginal(forest: Forest, dims: Sequence[str]) -> Marginal:
  """
  Marginal of every tree over the named dimensions
  and the forest's V_U.

  Raises
  ------
  RejectedInputError
      If `dims` is empty or names an unknown
      dimension.
  """
  if not dims:
    raise RejectedInputError("Need at least one dimension")
  index = tuple(sorted(forest.index(name) for name in dims))
  subsets = [
    s
    for r in range(1, len(index) + 1)
    for s in itertools.combinations(index, r)
  ]
  per_tree = [
    _tree_components(t, forest.bounds, subsets)
    for t in forest.trees
  ]
  varying = [(v, c) for v, c in per_tree if v > 0]
  return Marginal(
    dims=tuple(forest.names[d] for d in index),
    trees=[
      tree_marginal(t, forest.bounds, index)
      for t in forest.trees
    ],
    variance=float(np.mean([c[index] for _, c in per_tree])),
    fraction=(
      float(np.mean([c[index] / v for v, c in varying]))
      if varying
      else 0.0
    ),
  )


def category_importance(
  forest: Forest,
  categories: dict[str, str] | None = None,
  decomposition: Decomposition | None = None,
) -> dict[str, float]:
  """
  Fraction of variance per parameter category:
  singletons and pairs inside one category count for
  it, pairs across categories go to "interactions".

  Raises
  ------
  RejectedInputError
      If a dimension has no category.
  """
  categories = categories or dict(PARAM_CATEGORIES)
  unmapped = [n for n in forest.names if n not in categories]
  if unmapped:
    raise RejectedInputError(
      f"No category for dimensions {unmapped}"
    )
  decomposition = decomposition or importance(forest)
  out = {c: 0.0 for c in sorted(set(categories.values()))}
  out["interactions"] = 0.0
  for subset, fraction in decomposition.fractions.items():
    if len(subset) > 2:
      continue
    kinds = {categories[name] for name in subset}
    if len(kinds) == 1:
      out[kinds.pop()] += fraction
    else:
      out["interactions"] += fraction
  return out


#


def search_box(
  space: SearchSpace,
) -> tuple[list[str], npt.NDArray[np.float64], list[bool]]:
  """
  Analysed dimensions of a search space with their
  bounds in analysis units.
  """
  names, bounds, logs = [], [], []
  for name in space.dimensions():
    r = space.params[name]
    if r.log:
      low, high = math.log10(r.low), math.log10(r.high)
    elif r.integer:
      low, high = r.low - 0.5, r.high + 0.5
    else:
      low, high = r.low, r.high
    names.append(name)
    bounds.append((low, high))
    logs.append(r.log)
  return names, np.array(bounds, dtype=np.float64), logs


def record_matrix(
  records: Sequence[ExperimentRecord],
  names: list[str],
  log_scaled: list[bool],
  weighted: bool = False,
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
  rows = []
  for record in records:
    missing = [n for n in names if n not in record.config]
    if missing:
      raise RejectedInputError(
        f"Record {record.index} lacks {missing}"
      )
    rows.append(
      [
        math.log10(record.config[n]) if log else record.config[n]
        for n, log in zip(names, log_scaled)
      ]
    )
  x = np.array(rows, dtype=np.float64).reshape(
    len(records), len(names)
  )
  y = np.array(
    [r.score(weighted) for r in records], dtype=np.float64
  )
  return x, y


def fit_forest(
  x: npt.NDArray[np.float64],
  y: npt.NDArray[np.float64],
  names: list[str],
  bounds: npt.NDArray[np.float64],
  trees: int = FOREST_TREES,
  seed: int = 0,
  log_scaled: list[bool] | None = None,
  min_samples_leaf: int = MIN_SAMPLES_LEAF,
  max_features: float = MAX_FEATURES,
  n_jobs: int | None = None,
) -> Forest:
  """
  Fit a random forest of `trees` trees on
  bootstrap samples of (x, y).

  Raises
  ------
  RejectedInputError
      With fewer than 20 points or scores outside
      [0, 1].
  """
  if x.shape[0] < MIN_RECORDS:
    raise RejectedInputError(
      f"Need at least {MIN_RECORDS} records, got "
      f"{x.shape[0]}"
    )
  if np.any((y < 0) | (y > 1)) or not np.all(np.isfinite(y)):
    raise RejectedInputError("Scores must lie in [0, 1]")
  model = RandomForestRegressor(
    n_estimators=trees,
    min_samples_leaf=min_samples_leaf,
    max_features=max_features,
    bootstrap=True,
    random_state=seed,
    n_jobs=n_jobs,
  )
  model.fit(x, y)
  forest = Forest(
    trees=[
      Tree.from_sklearn(e, bounds) for e in model.estimators_
    ],
    names=list(names),
    bounds=bounds,
    log_scaled=list(log_scaled or []),
    metadata={
      "trees": trees,
      "min_samples_leaf": min_samples_leaf,
      "max_features": max_features,
      "interaction_order": INTERACTION_ORDER,
      "records": int(x.shape[0]),
      "seed": seed,
    },
  )
  logger.debug(
    f"Fitted {trees} trees with "
    f"{sum(t.n_leaves for t in forest.trees)} leaves"
  )
  return forest


@dataclass
class Analysis:
  family: str
  parameters: dict[str, float]
  pairs: dict[Subset, float]
  categories: dict[str, float]
  total_variance: float
  metadata: dict[str, Any]

  def ranked(self) -> list[tuple[str, float]]:
    return sorted(
      self.parameters.items(), key=lambda kv: -kv[1]
    )

  def to_dict(self) -> dict[str, Any]:
    return {
      "family": self.family,
      "total_variance": self.total_variance,
      "parameters": self.parameters,
      "pairs": {" × ".join(k): v for k, v in self.pairs.items()},
      "categories": self.categories,
      "metadata": self.metadata,
    }


def analyze(
  records: Sequence[ExperimentRecord],
  family: str,
  trees: int = FOREST_TREES,
  seed: int = 0,
  weighted: bool = False,
  parallelism: int = 1,
) -> Analysis:
  """
  Fit a forest on one family's records and decompose
  its variance by parameter and by category. Failed
  runs take part with score 0.
  """
  chosen = [r for r in records if r.family == family]
  space = SearchSpace.for_family(family)
  names, bounds, logs = search_box(space)
  x, y = record_matrix(chosen, names, logs, weighted)
  forest = fit_forest(
    x,
    y,
    names,
    bounds,
    trees=trees,
    seed=seed,
    log_scaled=logs,
    n_jobs=parallelism,
  )
  decomposition = importance(forest, parallelism=parallelism)
  categories = category_importance(
    forest, decomposition=decomposition
  )
  logger.info(
    f"[{family}] fANOVA over {len(chosen)} records: "
    f"{decomposition.explained():.3f} of the variance "
    "in singletons and pairs"
  )
  return Analysis(
    family=family,
    parameters=decomposition.singletons(),
    pairs=decomposition.pairs(),
    categories=categories,
    total_variance=decomposition.total_variance,
    metadata={
      **forest.metadata,
      "score": "weighted_f1" if weighted else "mean_f1",
      "log10_dimensions": [
        n for n, log in zip(names, logs) if log
      ],
    },
  )
