# src/harbench/params.py
"""
Parameter handling shared by all model families:
weight initialisation, the max-in norm constraint,
the common model protocol and checkpoint blobs.
"""

import json
import math
import os
from typing import Any, Protocol

import numpy as np
import numpy.typing as npt
from loguru import logger

from harbench.errors import (
  RejectedConfigError,
  RejectedInputError,
)
from harbench.ops import Mode, Tensor

#

# (parameter name, axis that indexes the units)
IncomingPart = tuple[str, int]
IncomingGroup = list[IncomingPart]

# Vectors already at d_in (up to rounding) are left
# alone, which keeps the constraint idempotent.
MAXIN_TOLERANCE = 1e-13

CHECKPOINT_VERSION = 1

#


class Model(Protocol):
  """
  What the training loop needs from a model family.
  """

  params: dict[str, Tensor]
  n_classes: int

  def forward(
    self,
    inputs: Tensor,
    mode: Mode,
    rng: np.random.Generator | None = None,
  ) -> tuple[Tensor, Any]: ...

  def backward(
    self,
    cache: Any,
    targets: npt.NDArray[np.int_],
  ) -> tuple[float, dict[str, Tensor]]: ...

  def incoming_groups(self) -> list[IncomingGroup]: ...


def glorot_uniform(
  shape: tuple[int, ...],
  fan_in: int,
  fan_out: int,
  rng: np.random.Generator,
) -> Tensor:
  """Uniform in ±√(6 / (fan_in + fan_out))."""
  limit = math.sqrt(6.0 / (fan_in + fan_out))
  return rng.uniform(-limit, limit, size=shape)


def maxin_norm(model: Model, d_in: float) -> None:
  """
  Rescale every unit's incoming weight vector to a
  euclidean length of at most `d_in`, in place.

  A unit's incoming vector may span several
  parameters (an LSTM unit has input and recurrent
  weights). Units already within the bound and all
  biases are untouched.

  Raises
  ------
  RejectedConfigError
      If `d_in` is not positive.
  """
  if not d_in > 0:
    raise RejectedConfigError(
      f"max-in norm must be positive, got {d_in}"
    )
  for group in model.incoming_groups():
    squared: Tensor | None = None
    for name, axis in group:
      weights = model.params[name]
      unit_axis = axis % weights.ndim
      other = tuple(
        a for a in range(weights.ndim) if a != unit_axis
      )
      part = np.sum(weights * weights, axis=other)
      squared = part if squared is None else squared + part
    assert squared is not None
    norms = np.sqrt(squared)
    over = norms > d_in + MAXIN_TOLERANCE
    if not over.any():
      continue
    scale = np.ones_like(norms)
    scale[over] = d_in / norms[over]
    for name, axis in group:
      weights = model.params[name]
      shape = [1] * weights.ndim
      shape[axis % weights.ndim] = -1
      weights *= scale.reshape(shape)


def max_incoming_norm(model: Model) -> float:
  """Largest incoming-weight norm over all units."""
  largest = 0.0
  for group in model.incoming_groups():
    squared: Tensor | None = None
    for name, axis in group:
      weights = model.params[name]
      unit_axis = axis % weights.ndim
      other = tuple(
        a for a in range(weights.ndim) if a != unit_axis
      )
      part = np.sum(weights * weights, axis=other)
      squared = part if squared is None else squared + part
    if squared is not None and squared.size:
      largest = max(largest, float(np.sqrt(squared.max())))
  return largest


def copy_params(
  params: dict[str, Tensor],
) -> dict[str, Tensor]:
  return {name: p.copy() for name, p in params.items()}


def check_finite(
  values: dict[str, Tensor],
) -> str | None:
  """Name of the first non-finite entry, if any."""
  for name, value in values.items():
    if not np.all(np.isfinite(value)):
      return name
  return None


#


def save_checkpoint(
  path: str,
  family: str,
  hyper: dict[str, Any],
  params: dict[str, Tensor],
  metadata: dict[str, Any] | None = None,
) -> str:
  """
  Write a flat named-parameter JSON blob.

  Floats are written with full repr precision so a
  float64 checkpoint round-trips exactly.
  """
  blob = {
    "version": CHECKPOINT_VERSION,
    "family": family,
    "hyper": hyper,
    "metadata": metadata or {},
    "params": {
      name: {
        "shape": list(value.shape),
        "data": value.reshape(-1).tolist(),
      }
      for name, value in params.items()
    },
  }
  directory = os.path.dirname(path)
  if directory:
    os.makedirs(directory, exist_ok=True)
  with open(path, "w", encoding="utf-8") as f:
    json.dump(blob, f)
  logger.debug(
    f"Saved checkpoint with {len(params)} tensors to "
    f"{path}"
  )
  return path


def load_checkpoint(
  path: str,
) -> tuple[str, dict[str, Any], dict[str, Tensor]]:
  """
  Read a checkpoint written by `save_checkpoint`.

  Returns
  -------
  tuple[str, dict, dict]
      (family, hyperparameters, params)
  """
  with open(path, "r", encoding="utf-8") as f:
    blob = json.load(f)
  if blob.get("version") != CHECKPOINT_VERSION:
    raise RejectedInputError(
      f"Unsupported checkpoint version in {path}"
    )
  params = {
    name: np.asarray(
      entry["data"], dtype=np.float64
    ).reshape(entry["shape"])
    for name, entry in blob["params"].items()
  }
  return blob["family"], blob["hyper"], params


#


def predict(
  model: Model, inputs: Tensor, **kwargs: Any
) -> npt.NDArray[np.int64]:
  """Most probable class at every output position."""
  probs, _ = model.forward(inputs, "infer", **kwargs)
  return probs.argmax(axis=-1).astype(np.int64)


def loss(
  model: Model,
  inputs: Tensor,
  targets: npt.NDArray[np.int_],
  **kwargs: Any,
) -> float:
  """Mean negative log likelihood in inference mode."""
  probs, _ = model.forward(inputs, "infer", **kwargs)
  flat = probs.reshape(-1, probs.shape[-1])
  labels = np.asarray(targets).reshape(-1)
  if labels.shape[0] != flat.shape[0]:
    raise RejectedInputError(
      f"{labels.shape[0]} targets for "
      f"{flat.shape[0]} predictions"
    )
  picked = flat[np.arange(flat.shape[0]), labels]
  return float(
    -np.log(np.maximum(picked, np.finfo(np.float64).tiny)).mean()
  )
