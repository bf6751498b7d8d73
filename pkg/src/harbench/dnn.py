# src/harbench/dnn.py
"""
Deep feed-forward network (DNN)

Frames of s samples × d channels are concatenated
into one vector and passed through N equally wide
affine + ReLU layers, each followed by dropout during
training, and a softmax group. The same class is the
fully connected part of the CNN.
"""

from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from harbench.errors import (
  RejectedConfigError,
  RejectedInputError,
)
from harbench.ops import (
  Mode,
  Tensor,
  batch_nll,
  dropout_mask,
  relu,
  softmax,
)
from harbench.params import IncomingGroup, glorot_uniform

#

DNN_DROPOUT = 0.5
MAX_DNN_LAYERS = 5

#


@dataclass
class DnnCache:
  inputs: Tensor
  pre_activations: list[Tensor] = field(
    default_factory=list
  )
  activations: list[Tensor] = field(default_factory=list)
  masks: list[Tensor | None] = field(default_factory=list)
  logits: Tensor | None = None


class DnnModel:
  """
  N hidden layers of U ReLU units and a softmax
  group.

  Parameters are named `<prefix>dense<i>.W` (in × U),
  `<prefix>dense<i>.b`, `<prefix>softmax.W` and
  `<prefix>softmax.b`.
  """

  def __init__(
    self,
    input_size: int,
    n_classes: int,
    layers: int,
    units: int,
    rng: np.random.Generator,
    dropout: list[float] | None = None,
    prefix: str = "",
    max_layers: int = MAX_DNN_LAYERS,
  ) -> None:
    if not 1 <= layers <= max_layers:
      raise RejectedConfigError(
        f"DNN needs 1..{max_layers} hidden layers, "
        f"got {layers}"
      )
    if units < 1 or input_size < 1 or n_classes < 2:
      raise RejectedConfigError(
        "DNN needs positive widths and ≥ 2 classes"
      )
    self.input_size = input_size
    self.n_classes = n_classes
    self.layers = layers
    self.units = units
    self.prefix = prefix
    self.dropout = (
      list(dropout)
      if dropout is not None
      else [DNN_DROPOUT] * layers
    )
    if len(self.dropout) != layers:
      raise RejectedConfigError(
        "One drop probability per hidden layer"
      )
    self.params: dict[str, Tensor] = {}
    fan_in = input_size
    for i in range(layers):
      self.params[self._name(f"dense{i}.W")] = (
        glorot_uniform((fan_in, units), fan_in, units, rng)
      )
      self.params[self._name(f"dense{i}.b")] = np.zeros(
        units
      )
      fan_in = units
    self.params[self._name("softmax.W")] = glorot_uniform(
      (fan_in, n_classes), fan_in, n_classes, rng
    )
    self.params[self._name("softmax.b")] = np.zeros(
      n_classes
    )

  def _name(self, name: str) -> str:
    return f"{self.prefix}{name}"

  #

  def logits(
    self,
    inputs: Tensor,
    mode: Mode,
    rng: np.random.Generator | None = None,
  ) -> tuple[Tensor, DnnCache]:
    x = inputs.reshape(inputs.shape[0], -1)
    if x.shape[1] != self.input_size:
      raise RejectedInputError(
        f"DNN expects {self.input_size} inputs per "
        f"example, got {x.shape[1]}"
      )
    if mode == "train" and rng is None:
      raise RejectedInputError(
        "Train mode needs a random generator"
      )
    cache = DnnCache(inputs=x)
    hidden = x
    for i in range(self.layers):
      pre = hidden @ self.params[
        self._name(f"dense{i}.W")
      ] + self.params[self._name(f"dense{i}.b")]
      hidden = relu(pre)
      mask = None
      if mode == "train":
        assert rng is not None
        mask = dropout_mask(
          hidden.shape, self.dropout[i], rng
        )
        hidden = hidden * mask
      cache.pre_activations.append(pre)
      cache.activations.append(hidden)
      cache.masks.append(mask)
    logits = (
      hidden @ self.params[self._name("softmax.W")]
      + self.params[self._name("softmax.b")]
    )
    cache.logits = logits
    return logits, cache

  def forward(
    self,
    inputs: Tensor,
    mode: Mode,
    rng: np.random.Generator | None = None,
  ) -> tuple[Tensor, DnnCache]:
    """
    Class probabilities for a batch of frames.

    Parameters
    ----------
    inputs : Tensor
        (B, s, d) frames or (B, s·d) vectors.
    mode : Mode
        "train" applies dropout, "infer" does not.
    rng : np.random.Generator, optional
        Required in train mode.
    """
    logits, cache = self.logits(inputs, mode, rng)
    return softmax(logits), cache

  def backward_logits(
    self, cache: DnnCache, d_logits: Tensor
  ) -> tuple[dict[str, Tensor], Tensor]:
    """
    Gradients of all parameters and of the inputs
    given the gradient at the logits.
    """
    grads: dict[str, Tensor] = {}
    last = (
      cache.activations[-1]
      if cache.activations
      else cache.inputs
    )
    grads[self._name("softmax.W")] = last.T @ d_logits
    grads[self._name("softmax.b")] = d_logits.sum(axis=0)
    d_hidden = d_logits @ self.params[
      self._name("softmax.W")
    ].T
    for i in reversed(range(self.layers)):
      mask = cache.masks[i]
      if mask is not None:
        d_hidden = d_hidden * mask
      d_pre = d_hidden * (cache.pre_activations[i] > 0)
      below = (
        cache.activations[i - 1] if i > 0 else cache.inputs
      )
      grads[self._name(f"dense{i}.W")] = below.T @ d_pre
      grads[self._name(f"dense{i}.b")] = d_pre.sum(axis=0)
      d_hidden = d_pre @ self.params[
        self._name(f"dense{i}.W")
      ].T
    return grads, d_hidden

  def backward(
    self,
    cache: DnnCache,
    targets: npt.NDArray[np.int_],
  ) -> tuple[float, dict[str, Tensor]]:
    """
    Mean negative log likelihood of the batch and
    its gradient for every parameter.
    """
    assert cache.logits is not None
    _, loss, d_logits = batch_nll(cache.logits, targets)
    grads, _ = self.backward_logits(cache, d_logits)
    return loss, grads

  def incoming_groups(self) -> list[IncomingGroup]:
    groups: list[IncomingGroup] = [
      [(self._name(f"dense{i}.W"), -1)]
      for i in range(self.layers)
    ]
    groups.append([(self._name("softmax.W"), -1)])
    return groups


def dnn_forward(
  model: DnnModel,
  frame: Tensor,
  mode: Mode,
  rng: np.random.Generator | None = None,
) -> Tensor:
  """
  Class probabilities of a single frame (s·d vector
  or s × d matrix).
  """
  if frame.size != model.input_size:
    raise RejectedInputError(
      f"Frame has {frame.size} values, model expects "
      f"{model.input_size}"
    )
  probs, _ = model.forward(
    frame.reshape(1, -1), mode, rng
  )
  return probs[0]
