# src/harbench/ops.py
"""
Tensor primitives

Dense numpy arrays are the Tensor carrier for all
model math. The functions here are the building
blocks of the five model families: matrix product,
valid temporal convolution, width-2 max pooling,
activations and the numerically stable softmax with
negative log likelihood. Each forward primitive that
a model differentiates through has a matching
`*_backward` helper.
"""

from typing import Literal

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view

from harbench.errors import (
  FrameTooShortError,
  RejectedInputError,
)

#

Tensor = npt.NDArray[np.float64]
Mode = Literal["train", "infer"]

POOL_WIDTH = 2

#


def as_tensor(
  values: npt.ArrayLike, dtype: npt.DTypeLike = np.float64
) -> Tensor:
  """
  Convert to a contiguous array and check that
  every value is finite.
  """
  tensor = np.ascontiguousarray(values, dtype=dtype)
  if not np.all(np.isfinite(tensor)):
    raise RejectedInputError(
      "Tensor contains non-finite values"
    )
  return tensor


def matmul(a: Tensor, b: Tensor) -> Tensor:
  """
  Matrix product of a[m×k] and b[k×n].

  Raises
  ------
  RejectedInputError
      If the inner extents disagree.
  """
  if a.ndim != 2 or b.ndim != 2:
    raise RejectedInputError(
      f"matmul expects 2-D operands, got "
      f"{a.shape} and {b.shape}"
    )
  if a.shape[1] != b.shape[0]:
    raise RejectedInputError(
      f"Inner extents disagree: {a.shape} × {b.shape}"
    )
  return a @ b


def conv1d_temporal(
  inputs: Tensor,
  kernels: Tensor,
  bias: Tensor | None = None,
) -> Tensor:
  """
  Valid, stride-1 temporal convolution.

  Parameters
  ----------
  inputs : Tensor
      Shape (s, d) or batched (B, s, d).
  kernels : Tensor
      Shape (nF, kW, d): nF kernels of width kW
      spanning all input channels.
  bias : Tensor, optional
      Shape (nF,); zero when omitted.

  Returns
  -------
  Tensor
      Shape (s - kW + 1, nF), batched accordingly.
      out[t, f] = Σ_{τ,c} in[t+τ, c]·K[f, τ, c] + b[f]
  """
  batched = inputs.ndim == 3
  x = inputs if batched else inputs[None]
  if x.ndim != 3 or kernels.ndim != 3:
    raise RejectedInputError(
      f"conv1d_temporal shapes {inputs.shape}, "
      f"{kernels.shape}"
    )
  n_filters, width, channels = kernels.shape
  if x.shape[2] != channels:
    raise RejectedInputError(
      f"Input has {x.shape[2]} channels, kernels "
      f"expect {channels}"
    )
  if x.shape[1] < width:
    raise FrameTooShortError(
      f"Frame of {x.shape[1]} samples is shorter "
      f"than kernel width {width}"
    )
  # (B, s', d, kW)
  windows = sliding_window_view(x, width, axis=1)
  out = np.einsum("btck,fkc->btf", windows, kernels)
  if bias is not None:
    if bias.shape != (n_filters,):
      raise RejectedInputError(
        f"Bias shape {bias.shape} != ({n_filters},)"
      )
    out = out + bias
  return out if batched else out[0]


def conv1d_temporal_backward(
  inputs: Tensor,
  kernels: Tensor,
  grad_out: Tensor,
) -> tuple[Tensor, Tensor, Tensor]:
  """
  Gradients of `conv1d_temporal` for batched
  inputs (B, s, d).

  Returns
  -------
  tuple[Tensor, Tensor, Tensor]
      (d_inputs, d_kernels, d_bias)
  """
  width = kernels.shape[1]
  out_len = grad_out.shape[1]
  windows = sliding_window_view(inputs, width, axis=1)
  d_kernels = np.einsum(
    "btck,btf->fkc", windows, grad_out
  )
  d_bias = grad_out.sum(axis=(0, 1))
  d_inputs = np.zeros_like(inputs)
  for tau in range(width):
    d_inputs[:, tau : tau + out_len, :] += np.einsum(
      "btf,fc->btc", grad_out, kernels[:, tau, :]
    )
  return d_inputs, d_kernels, d_bias


def maxpool1d(
  inputs: Tensor, width: int = POOL_WIDTH
) -> Tensor:
  """
  Non-overlapping max pooling along time.

  Input (s, nF) or (B, s, nF); output length is
  ⌊s / width⌋, trailing samples that do not fill a
  region are dropped.
  """
  batched = inputs.ndim == 3
  x = inputs if batched else inputs[None]
  length = x.shape[1]
  if length < width:
    raise FrameTooShortError(
      f"Cannot pool {length} samples with width "
      f"{width}"
    )
  out_len = length // width
  regions = x[:, : out_len * width, :].reshape(
    x.shape[0], out_len, width, x.shape[2]
  )
  out = regions.max(axis=2)
  return out if batched else out[0]


def maxpool1d_backward(
  inputs: Tensor,
  grad_out: Tensor,
  width: int = POOL_WIDTH,
) -> Tensor:
  """
  Route each pooled gradient to the first maximal
  position of its region (batched inputs).
  """
  batch, length, channels = inputs.shape
  out_len = length // width
  regions = inputs[:, : out_len * width, :].reshape(
    batch, out_len, width, channels
  )
  winners = regions.argmax(axis=2)
  mask = (
    np.arange(width)[None, None, :, None]
    == winners[:, :, None, :]
  )
  d_regions = mask * grad_out[:, :, None, :]
  d_inputs = np.zeros_like(inputs)
  d_inputs[:, : out_len * width, :] = d_regions.reshape(
    batch, out_len * width, channels
  )
  return d_inputs


def relu(x: Tensor) -> Tensor:
  return np.maximum(x, 0.0)


def sigmoid(x: Tensor) -> Tensor:
  # Split by sign so exp never overflows.
  out = np.empty_like(x)
  positive = x >= 0
  out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
  exp_x = np.exp(x[~positive])
  out[~positive] = exp_x / (1.0 + exp_x)
  return out


def softmax(logits: Tensor) -> Tensor:
  """Softmax over the last axis."""
  shifted = logits - logits.max(axis=-1, keepdims=True)
  exp = np.exp(shifted)
  return exp / exp.sum(axis=-1, keepdims=True)


def log_softmax(logits: Tensor) -> Tensor:
  shifted = logits - logits.max(axis=-1, keepdims=True)
  return shifted - np.log(
    np.exp(shifted).sum(axis=-1, keepdims=True)
  )


def softmax_nll(
  logits: Tensor, label: int
) -> tuple[Tensor, float]:
  """
  Class probabilities and negative log likelihood of
  one example.

  Parameters
  ----------
  logits : Tensor
      Shape (classes,), finite.
  label : int
      True class index.

  Returns
  -------
  tuple[Tensor, float]
      (probabilities, -log p[label])
  """
  if logits.ndim != 1:
    raise RejectedInputError(
      f"softmax_nll expects a vector, got "
      f"{logits.shape}"
    )
  if not 0 <= label < logits.shape[0]:
    raise RejectedInputError(
      f"Label {label} outside [0, {logits.shape[0]})"
    )
  if not np.all(np.isfinite(logits)):
    raise RejectedInputError("Logits must be finite")
  log_probs = log_softmax(logits)
  return np.exp(log_probs), float(-log_probs[label])


def batch_nll(
  logits: Tensor, targets: npt.NDArray[np.int_]
) -> tuple[Tensor, float, Tensor]:
  """
  Mean negative log likelihood over all leading
  positions of `logits` (..., classes).

  Returns
  -------
  tuple[Tensor, float, Tensor]
      (probabilities, mean loss, d loss / d logits)
  """
  n_classes = logits.shape[-1]
  flat = logits.reshape(-1, n_classes)
  flat_targets = np.asarray(targets).reshape(-1)
  if flat_targets.shape[0] != flat.shape[0]:
    raise RejectedInputError(
      f"{flat_targets.shape[0]} targets for "
      f"{flat.shape[0]} predictions"
    )
  if flat_targets.size and (
    flat_targets.min() < 0
    or flat_targets.max() >= n_classes
  ):
    raise RejectedInputError(
      "Target label out of range"
    )
  log_probs = log_softmax(flat)
  rows = np.arange(flat.shape[0])
  count = max(flat.shape[0], 1)
  loss = float(-log_probs[rows, flat_targets].sum()) / (
    count
  )
  probs = np.exp(log_probs)
  d_logits = probs.copy()
  d_logits[rows, flat_targets] -= 1.0
  d_logits /= count
  return (
    probs.reshape(logits.shape),
    loss,
    d_logits.reshape(logits.shape),
  )


def dropout_mask(
  shape: tuple[int, ...],
  p_drop: float,
  rng: np.random.Generator,
) -> Tensor:
  """
  Inverted dropout mask: zero with probability
  `p_drop`, survivors scaled by 1 / (1 - p_drop) so
  the expected activation equals inference.
  """
  if not 0.0 <= p_drop <= 1.0:
    raise RejectedInputError(
      f"Drop probability {p_drop} outside [0, 1]"
    )
  if p_drop >= 1.0:
    return np.zeros(shape)
  keep = rng.random(shape) >= p_drop
  return keep / (1.0 - p_drop)
