# src/harbench/cnn.py
"""
Convolutional network (CNN)

Each block is a valid temporal convolution over all
input channels, width-2 max pooling, a ReLU on the
pooled output and dropout. The flattened output of
the last block feeds a fully connected part that is
a DNN.
"""

from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from harbench.dnn import DNN_DROPOUT, DnnCache, DnnModel
from harbench.errors import (
  FrameTooShortError,
  RejectedConfigError,
  RejectedInputError,
)
from harbench.ops import (
  POOL_WIDTH,
  Mode,
  Tensor,
  batch_nll,
  conv1d_temporal,
  conv1d_temporal_backward,
  dropout_mask,
  maxpool1d,
  maxpool1d_backward,
  relu,
  softmax,
)
from harbench.params import IncomingGroup, glorot_uniform

#

# Drop probability after the pool of block 1, 2, 3+.
CNN_BLOCK_DROPOUT = (0.1, 0.25, 0.5)
MAX_CONV_LAYERS = 3
MAX_FC_LAYERS = 3

#


def block_dropout(depth: int) -> float:
  """Drop probability after block `depth` (0-based)."""
  return CNN_BLOCK_DROPOUT[
    min(depth, len(CNN_BLOCK_DROPOUT) - 1)
  ]


def block_lengths(
  frame_length: int, kernel_widths: list[int]
) -> list[int]:
  """
  Output length of every conv + pool block.

  Raises
  ------
  FrameTooShortError
      If some stage has too few samples.
  """
  lengths: list[int] = []
  length = frame_length
  for depth, width in enumerate(kernel_widths):
    if length < width:
      raise FrameTooShortError(
        f"Block {depth + 1} sees {length} samples, "
        f"kernel width is {width}"
      )
    conv_length = length - width + 1
    if conv_length < POOL_WIDTH:
      raise FrameTooShortError(
        f"Block {depth + 1} convolution yields "
        f"{conv_length} samples, pooling needs "
        f"{POOL_WIDTH}"
      )
    length = conv_length // POOL_WIDTH
    lengths.append(length)
  return lengths


@dataclass
class CnnCache:
  block_inputs: list[Tensor] = field(default_factory=list)
  conv_outputs: list[Tensor] = field(default_factory=list)
  pooled: list[Tensor] = field(default_factory=list)
  masks: list[Tensor | None] = field(default_factory=list)
  fc: DnnCache | None = None
  logits: Tensor | None = None


class CnnModel:
  """
  Temporal CNN with a DNN head.

  Parameters are named `conv<i>.K` (nF × kW × C),
  `conv<i>.b` and `fc.<dnn names>`.
  """

  def __init__(
    self,
    frame_length: int,
    channels: int,
    n_classes: int,
    kernel_widths: list[int],
    filters: list[int],
    fc_layers: int,
    units: int,
    rng: np.random.Generator,
  ) -> None:
    if not 1 <= len(kernel_widths) <= MAX_CONV_LAYERS:
      raise RejectedConfigError(
        f"CNN needs 1..{MAX_CONV_LAYERS} conv layers"
      )
    if len(filters) != len(kernel_widths):
      raise RejectedConfigError(
        "One filter count per conv layer"
      )
    if not 1 <= fc_layers <= MAX_FC_LAYERS:
      raise RejectedConfigError(
        f"CNN needs 1..{MAX_FC_LAYERS} fully "
        f"connected layers"
      )
    self.frame_length = frame_length
    self.channels = channels
    self.n_classes = n_classes
    self.kernel_widths = list(kernel_widths)
    self.filters = list(filters)
    # Fails here, not mid-training.
    self.lengths = block_lengths(
      frame_length, self.kernel_widths
    )
    self.params: dict[str, Tensor] = {}
    in_channels = channels
    for i, (width, count) in enumerate(
      zip(self.kernel_widths, self.filters)
    ):
      self.params[f"conv{i}.K"] = glorot_uniform(
        (count, width, in_channels),
        width * in_channels,
        width * count,
        rng,
      )
      self.params[f"conv{i}.b"] = np.zeros(count)
      in_channels = count
    self.fc = DnnModel(
      input_size=self.lengths[-1] * self.filters[-1],
      n_classes=n_classes,
      layers=fc_layers,
      units=units,
      rng=rng,
      dropout=[DNN_DROPOUT] * fc_layers,
      prefix="fc.",
      max_layers=MAX_FC_LAYERS,
    )
    # Shared arrays: updates through either view
    # are seen by both.
    self.params.update(self.fc.params)

  def logits(
    self,
    inputs: Tensor,
    mode: Mode,
    rng: np.random.Generator | None = None,
  ) -> tuple[Tensor, CnnCache]:
    if inputs.ndim != 3 or inputs.shape[1:] != (
      self.frame_length,
      self.channels,
    ):
      raise RejectedInputError(
        f"CNN expects (B, {self.frame_length}, "
        f"{self.channels}) frames, got {inputs.shape}"
      )
    if mode == "train" and rng is None:
      raise RejectedInputError(
        "Train mode needs a random generator"
      )
    cache = CnnCache()
    hidden = inputs
    for i in range(len(self.kernel_widths)):
      cache.block_inputs.append(hidden)
      conv = conv1d_temporal(
        hidden,
        self.params[f"conv{i}.K"],
        self.params[f"conv{i}.b"],
      )
      pooled = maxpool1d(conv)
      hidden = relu(pooled)
      mask = None
      if mode == "train":
        assert rng is not None
        mask = dropout_mask(
          hidden.shape, block_dropout(i), rng
        )
        hidden = hidden * mask
      cache.conv_outputs.append(conv)
      cache.pooled.append(pooled)
      cache.masks.append(mask)
    logits, fc_cache = self.fc.logits(
      hidden.reshape(hidden.shape[0], -1), mode, rng
    )
    cache.fc = fc_cache
    cache.logits = logits
    return logits, cache

  def forward(
    self,
    inputs: Tensor,
    mode: Mode,
    rng: np.random.Generator | None = None,
  ) -> tuple[Tensor, CnnCache]:
    """Class probabilities for (B, s, d) frames."""
    logits, cache = self.logits(inputs, mode, rng)
    return softmax(logits), cache

  def backward(
    self,
    cache: CnnCache,
    targets: npt.NDArray[np.int_],
  ) -> tuple[float, dict[str, Tensor]]:
    assert cache.logits is not None and cache.fc
    _, loss, d_logits = batch_nll(cache.logits, targets)
    grads, d_flat = self.fc.backward_logits(
      cache.fc, d_logits
    )
    last = cache.pooled[-1]
    d_hidden = d_flat.reshape(last.shape)
    for i in reversed(range(len(self.kernel_widths))):
      mask = cache.masks[i]
      if mask is not None:
        d_hidden = d_hidden * mask
      d_pooled = d_hidden * (cache.pooled[i] > 0)
      d_conv = maxpool1d_backward(
        cache.conv_outputs[i], d_pooled
      )
      d_hidden, d_kernels, d_bias = (
        conv1d_temporal_backward(
          cache.block_inputs[i],
          self.params[f"conv{i}.K"],
          d_conv,
        )
      )
      grads[f"conv{i}.K"] = d_kernels
      grads[f"conv{i}.b"] = d_bias
    return loss, grads

  def incoming_groups(self) -> list[IncomingGroup]:
    groups: list[IncomingGroup] = [
      [(f"conv{i}.K", 0)]
      for i in range(len(self.kernel_widths))
    ]
    return groups + self.fc.incoming_groups()


def cnn_forward(
  model: CnnModel,
  frame: Tensor,
  mode: Mode,
  rng: np.random.Generator | None = None,
) -> Tensor:
  """Class probabilities of one s × d frame."""
  probs, _ = model.forward(frame[None], mode, rng)
  return probs[0]
