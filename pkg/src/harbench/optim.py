# src/harbench/optim.py
"""
Optimisers

SGD with momentum and inverse-time learning-rate
decay for the feed-forward families, Adagrad for
the recurrent ones. Both update parameter arrays in
place so views shared between model parts stay
valid.
"""

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from harbench.errors import (
  DivergenceError,
  RejectedConfigError,
  RejectedInputError,
)
from harbench.ops import Tensor
from harbench.params import check_finite

#

OptimiserKind = Literal["sgd-momentum", "adagrad"]

ADAGRAD_EPSILON = 1e-8

#


@dataclass
class OptimiserState:
  """
  Learning-rate schedule and per-parameter
  accumulators of one optimiser.

  `slots` holds the velocity (SGD) or the
  squared-gradient sum (Adagrad); `step` counts
  completed updates.
  """

  kind: OptimiserKind
  lr: float
  decay: float = 0.0
  momentum: float = 0.0
  slots: dict[str, Tensor] = field(default_factory=dict)
  step: int = 0

  def __post_init__(self) -> None:
    if self.kind not in ("sgd-momentum", "adagrad"):
      raise RejectedConfigError(
        f"Unknown optimiser {self.kind}"
      )
    if not self.lr > 0:
      raise RejectedConfigError(
        f"Learning rate must be positive, got {self.lr}"
      )
    if not 0.0 <= self.momentum < 1.0:
      raise RejectedConfigError(
        f"Momentum {self.momentum} outside [0, 1)"
      )
    if self.decay < 0:
      raise RejectedConfigError(
        f"LR decay {self.decay} is negative"
      )

  def current_lr(self) -> float:
    return self.lr / (1.0 + self.decay * self.step)


def _check(
  params: dict[str, Tensor],
  grads: dict[str, Tensor],
) -> None:
  for name, grad in grads.items():
    if name not in params:
      raise RejectedInputError(
        f"Gradient for unknown parameter {name}"
      )
    if grad.shape != params[name].shape:
      raise RejectedInputError(
        f"Gradient of {name} has shape {grad.shape}, "
        f"parameter has {params[name].shape}"
      )
  bad = check_finite(grads)
  if bad is not None:
    count = int(np.count_nonzero(~np.isfinite(grads[bad])))
    raise DivergenceError(
      f"Non-finite gradient for {bad} "
      f"({count} bad values)"
    )


def sgd_step(
  params: dict[str, Tensor],
  grads: dict[str, Tensor],
  state: OptimiserState,
) -> dict[str, Tensor]:
  """
  One momentum SGD update.

  v ← μ·v − lr_t·g, θ ← θ + v with
  lr_t = LR / (1 + decay·t), t the number of
  updates already applied.

  Raises
  ------
  DivergenceError
      If any gradient or updated value is not finite.
  """
  _check(params, grads)
  lr_t = state.current_lr()
  for name, grad in grads.items():
    velocity = state.slots.get(name)
    if velocity is None:
      velocity = np.zeros_like(grad)
      state.slots[name] = velocity
    velocity *= state.momentum
    velocity -= lr_t * grad
    params[name] += velocity
  state.step += 1
  bad = check_finite({n: params[n] for n in grads})
  if bad is not None:
    raise DivergenceError(
      f"Parameter {bad} became non-finite"
    )
  return params


def adagrad_step(
  params: dict[str, Tensor],
  grads: dict[str, Tensor],
  state: OptimiserState,
) -> dict[str, Tensor]:
  """
  One Adagrad update: G ← G + g², and
  θ ← θ − LR·g / (√G + ε).
  """
  _check(params, grads)
  lr_t = state.current_lr()
  for name, grad in grads.items():
    accum = state.slots.get(name)
    if accum is None:
      accum = np.zeros_like(grad)
      state.slots[name] = accum
    accum += grad * grad
    params[name] -= (
      lr_t * grad / (np.sqrt(accum) + ADAGRAD_EPSILON)
    )
  state.step += 1
  bad = check_finite({n: params[n] for n in grads})
  if bad is not None:
    raise DivergenceError(
      f"Parameter {bad} became non-finite"
    )
  return params


def optimiser_step(
  params: dict[str, Tensor],
  grads: dict[str, Tensor],
  state: OptimiserState,
) -> dict[str, Tensor]:
  if state.kind == "adagrad":
    return adagrad_step(params, grads, state)
  return sgd_step(params, grads, state)
