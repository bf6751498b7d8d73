# src/harbench/lstm.py
"""
Recurrent networks with vanilla LSTM cells

Cells have input, forget and output gates and a
tanh candidate, and no peephole connections. Layers
are stacked; a layer is either a single forward
track or a forward and a backward track whose hidden
states are concatenated per timestep. A shared
affine + softmax reads the top layer at every step.

Forward tracks return their final (h, c) so the
trainer can carry state across mini-batches. An
optional reset mask zeroes state inside a window
where a new recording starts; gradients never flow
through a reset or into the initial state.
"""

from dataclasses import dataclass, field
from typing import Literal

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
  sigmoid,
  softmax,
)
from harbench.params import IncomingGroup, glorot_uniform

#

Direction = Literal["forward", "bidirectional"]
LstmState = list[tuple[Tensor, Tensor]]

FORGET_BIAS = 1.0
TRACKS: dict[Direction, tuple[str, ...]] = {
  "forward": ("fwd",),
  "bidirectional": ("fwd", "bwd"),
}

#


def lstm_cell_step(
  x_t: Tensor,
  h_prev: Tensor,
  c_prev: Tensor,
  weights: Tensor,
  recurrent: Tensor,
  bias: Tensor,
) -> tuple[Tensor, Tensor]:
  """
  One vanilla LSTM step.

  Parameters
  ----------
  x_t : Tensor
      Input (in,) or (B, in).
  h_prev, c_prev : Tensor
      Previous hidden and cell state (H,) or (B, H).
  weights : Tensor
      Input weights (in, 4H), gate blocks ordered
      input, forget, output, candidate.
  recurrent : Tensor
      Recurrent weights (H, 4H), same block order.
  bias : Tensor
      (4H,)

  Returns
  -------
  tuple[Tensor, Tensor]
      (h_t, c_t)
  """
  units = recurrent.shape[0]
  if (
    weights.shape[1] != 4 * units
    or recurrent.shape[1] != 4 * units
    or bias.shape != (4 * units,)
  ):
    raise RejectedInputError(
      "LSTM parameter widths disagree"
    )
  if x_t.shape[-1] != weights.shape[0]:
    raise RejectedInputError(
      f"Input width {x_t.shape[-1]} != "
      f"{weights.shape[0]}"
    )
  if h_prev.shape[-1] != units or c_prev.shape[-1] != (
    units
  ):
    raise RejectedInputError(
      f"State width must be {units}"
    )
  h_t, c_t, _ = _cell(
    x_t, h_prev, c_prev, weights, recurrent, bias
  )
  return h_t, c_t


def _cell(
  x_t: Tensor,
  h_prev: Tensor,
  c_prev: Tensor,
  weights: Tensor,
  recurrent: Tensor,
  bias: Tensor,
) -> tuple[Tensor, Tensor, tuple[Tensor, ...]]:
  units = recurrent.shape[0]
  z = x_t @ weights + h_prev @ recurrent + bias
  gate_i = sigmoid(z[..., :units])
  gate_f = sigmoid(z[..., units : 2 * units])
  gate_o = sigmoid(z[..., 2 * units : 3 * units])
  cand = np.tanh(z[..., 3 * units :])
  c_t = gate_f * c_prev + gate_i * cand
  tanh_c = np.tanh(c_t)
  h_t = gate_o * tanh_c
  return h_t, c_t, (gate_i, gate_f, gate_o, cand, tanh_c)


@dataclass
class TrackCache:
  inputs: Tensor
  h_prev: Tensor
  c_prev: Tensor
  gates: Tensor  # (5, B, T, H): i, f, o, g, tanh(c)
  keep: Tensor | None
  reverse: bool


@dataclass
class LstmCache:
  tracks: list[dict[str, TrackCache]] = field(
    default_factory=list
  )
  top: Tensor | None = None
  logits: Tensor | None = None
  final_states: LstmState = field(default_factory=list)


def reverse_resets(resets: Tensor) -> Tensor:
  """
  Reset mask for a track that runs backwards in
  time: state is zeroed after crossing a recording
  start, i.e. before step t when t + 1 starts one.
  """
  flipped = np.zeros_like(resets)
  flipped[:, 1:] = np.flip(resets[:, 1:], axis=1)
  return flipped


class LstmModel:
  """
  Stacked (bi)directional LSTM with a per-step
  softmax group.

  Parameters are named `lstm<l>.<track>.W`
  (in × 4H), `lstm<l>.<track>.U` (H × 4H),
  `lstm<l>.<track>.b` (4H) with track `fwd` or
  `bwd`, plus `softmax.W` and `softmax.b`.
  """

  def __init__(
    self,
    input_size: int,
    n_classes: int,
    layers: int,
    units: int,
    rng: np.random.Generator,
    direction: Direction = "forward",
  ) -> None:
    if layers < 1 or units < 1 or input_size < 1:
      raise RejectedConfigError(
        "LSTM needs positive layers, units and inputs"
      )
    if n_classes < 2:
      raise RejectedConfigError("Need ≥ 2 classes")
    if direction not in TRACKS:
      raise RejectedConfigError(
        f"Unknown direction {direction}"
      )
    self.input_size = input_size
    self.n_classes = n_classes
    self.layers = layers
    self.units = units
    self.direction: Direction = direction
    self.tracks = TRACKS[direction]
    width = units * len(self.tracks)
    self.params: dict[str, Tensor] = {}
    fan_in = input_size
    for layer in range(layers):
      for track in self.tracks:
        prefix = f"lstm{layer}.{track}"
        self.params[f"{prefix}.W"] = glorot_uniform(
          (fan_in, 4 * units), fan_in, units, rng
        )
        self.params[f"{prefix}.U"] = glorot_uniform(
          (units, 4 * units), units, units, rng
        )
        bias = np.zeros(4 * units)
        bias[units : 2 * units] = FORGET_BIAS
        self.params[f"{prefix}.b"] = bias
      fan_in = width
    self.params["softmax.W"] = glorot_uniform(
      (width, n_classes), width, n_classes, rng
    )
    self.params["softmax.b"] = np.zeros(n_classes)

  @property
  def bidirectional(self) -> bool:
    return self.direction == "bidirectional"

  def zero_states(self, batch: int) -> LstmState:
    return [
      (
        np.zeros((batch, self.units)),
        np.zeros((batch, self.units)),
      )
      for _ in range(self.layers)
    ]

  #

  def _run_track(
    self,
    prefix: str,
    inputs: Tensor,
    h0: Tensor,
    c0: Tensor,
    resets: Tensor | None,
    reverse: bool,
  ) -> tuple[Tensor, TrackCache, tuple[Tensor, Tensor]]:
    weights = self.params[f"{prefix}.W"]
    recurrent = self.params[f"{prefix}.U"]
    bias = self.params[f"{prefix}.b"]
    x = np.flip(inputs, axis=1) if reverse else inputs
    mask = None
    if resets is not None:
      mask = reverse_resets(resets) if reverse else resets
    batch, steps, _ = x.shape
    units = self.units
    outputs = np.empty((batch, steps, units))
    h_prev_all = np.empty((batch, steps, units))
    c_prev_all = np.empty((batch, steps, units))
    gates = np.empty((5, batch, steps, units))
    keep_all = (
      None if mask is None else (~mask).astype(np.float64)
    )
    h, c = h0, c0
    for t in range(steps):
      if keep_all is not None:
        keep = keep_all[:, t, None]
        h = h * keep
        c = c * keep
      h_prev_all[:, t] = h
      c_prev_all[:, t] = c
      h, c, acts = _cell(
        x[:, t], h, c, weights, recurrent, bias
      )
      for k, act in enumerate(acts):
        gates[k, :, t] = act
      outputs[:, t] = h
    cache = TrackCache(
      inputs=x,
      h_prev=h_prev_all,
      c_prev=c_prev_all,
      gates=gates,
      keep=keep_all,
      reverse=reverse,
    )
    if reverse:
      outputs = np.flip(outputs, axis=1)
    return outputs, cache, (h, c)

  def _backward_track(
    self,
    prefix: str,
    cache: TrackCache,
    d_outputs: Tensor,
    grads: dict[str, Tensor],
  ) -> Tensor:
    weights = self.params[f"{prefix}.W"]
    recurrent = self.params[f"{prefix}.U"]
    d_h_all = (
      np.flip(d_outputs, axis=1)
      if cache.reverse
      else d_outputs
    )
    batch, steps, units = d_h_all.shape
    d_weights = np.zeros_like(weights)
    d_recurrent = np.zeros_like(recurrent)
    d_bias = np.zeros(4 * units)
    d_inputs = np.empty_like(cache.inputs)
    d_h_next = np.zeros((batch, units))
    d_c_next = np.zeros((batch, units))
    for t in reversed(range(steps)):
      gate_i, gate_f, gate_o, cand, tanh_c = cache.gates[
        :, :, t
      ]
      d_h = d_h_all[:, t] + d_h_next
      d_c = d_c_next + d_h * gate_o * (1.0 - tanh_c**2)
      d_z = np.concatenate(
        [
          d_c * cand * gate_i * (1.0 - gate_i),
          d_c
          * cache.c_prev[:, t]
          * gate_f
          * (1.0 - gate_f),
          d_h * tanh_c * gate_o * (1.0 - gate_o),
          d_c * gate_i * (1.0 - cand**2),
        ],
        axis=1,
      )
      d_weights += cache.inputs[:, t].T @ d_z
      d_recurrent += cache.h_prev[:, t].T @ d_z
      d_bias += d_z.sum(axis=0)
      d_inputs[:, t] = d_z @ weights.T
      d_h_next = d_z @ recurrent.T
      d_c_next = d_c * gate_f
      if cache.keep is not None:
        keep = cache.keep[:, t, None]
        d_h_next = d_h_next * keep
        d_c_next = d_c_next * keep
    grads[f"{prefix}.W"] = d_weights
    grads[f"{prefix}.U"] = d_recurrent
    grads[f"{prefix}.b"] = d_bias
    if cache.reverse:
      d_inputs = np.flip(d_inputs, axis=1)
    return d_inputs

  #

  def _prepare(self, inputs: Tensor) -> Tensor:
    x = inputs
    if x.ndim == 2:
      x = x[None]
    if x.ndim == 4:
      # LSTM-F: (B, L, s, d) frames as vectors
      x = x.reshape(x.shape[0], x.shape[1], -1)
    if x.ndim != 3 or x.shape[2] != self.input_size:
      raise RejectedInputError(
        f"LSTM expects (B, T, {self.input_size}) "
        f"inputs, got {inputs.shape}"
      )
    return x

  def logits(
    self,
    inputs: Tensor,
    initial_states: LstmState | None = None,
    resets: npt.NDArray[np.bool_] | None = None,
  ) -> tuple[Tensor, LstmCache]:
    x = self._prepare(inputs)
    batch, steps, _ = x.shape
    if resets is not None and resets.shape != (
      batch,
      steps,
    ):
      raise RejectedInputError(
        f"Reset mask {resets.shape} != "
        f"({batch}, {steps})"
      )
    if initial_states is None or self.bidirectional:
      initial_states = self.zero_states(batch)
    if len(initial_states) != self.layers:
      raise RejectedInputError(
        f"Need states for {self.layers} layers"
      )
    cache = LstmCache()
    hidden = x
    for layer in range(self.layers):
      h0, c0 = initial_states[layer]
      if h0.shape != (batch, self.units) or c0.shape != (
        batch,
        self.units,
      ):
        raise RejectedInputError(
          f"State of layer {layer} must be "
          f"({batch}, {self.units})"
        )
      outputs = []
      layer_cache: dict[str, TrackCache] = {}
      for track in self.tracks:
        out, track_cache, final = self._run_track(
          f"lstm{layer}.{track}",
          hidden,
          h0,
          c0,
          resets,
          reverse=track == "bwd",
        )
        outputs.append(out)
        layer_cache[track] = track_cache
        if track == "fwd":
          cache.final_states.append(final)
      cache.tracks.append(layer_cache)
      hidden = (
        outputs[0]
        if len(outputs) == 1
        else np.concatenate(outputs, axis=2)
      )
    cache.top = hidden
    logits = (
      hidden @ self.params["softmax.W"]
      + self.params["softmax.b"]
    )
    cache.logits = logits
    return logits, cache

  def forward(
    self,
    inputs: Tensor,
    mode: Mode = "infer",
    rng: np.random.Generator | None = None,
    initial_states: LstmState | None = None,
    resets: npt.NDArray[np.bool_] | None = None,
  ) -> tuple[Tensor, LstmCache]:
    """
    Per-step class probabilities (B, T, classes).

    `mode` and `rng` are accepted for interface
    parity; recurrent models use no dropout.
    """
    logits, cache = self.logits(
      inputs, initial_states, resets
    )
    return softmax(logits), cache

  def backward(
    self,
    cache: LstmCache,
    targets: npt.NDArray[np.int_],
  ) -> tuple[float, dict[str, Tensor]]:
    """
    Mean per-sample negative log likelihood and
    its gradient by backpropagation through time
    over the window.
    """
    assert cache.logits is not None
    assert cache.top is not None
    _, loss, d_logits = batch_nll(cache.logits, targets)
    grads: dict[str, Tensor] = {}
    top = cache.top
    grads["softmax.W"] = np.einsum(
      "bth,btc->hc", top, d_logits
    )
    grads["softmax.b"] = d_logits.sum(axis=(0, 1))
    d_hidden = d_logits @ self.params["softmax.W"].T
    for layer in reversed(range(self.layers)):
      d_below = None
      for k, track in enumerate(self.tracks):
        d_out = d_hidden[
          ..., k * self.units : (k + 1) * self.units
        ]
        d_in = self._backward_track(
          f"lstm{layer}.{track}",
          cache.tracks[layer][track],
          d_out,
          grads,
        )
        d_below = d_in if d_below is None else d_below + d_in
      assert d_below is not None
      d_hidden = d_below
    return loss, grads

  def incoming_groups(self) -> list[IncomingGroup]:
    groups: list[IncomingGroup] = []
    for layer in range(self.layers):
      for track in self.tracks:
        prefix = f"lstm{layer}.{track}"
        # A unit owns four gate columns; each gate
        # column is its own incoming vector.
        groups.append(
          [(f"{prefix}.W", -1), (f"{prefix}.U", -1)]
        )
    groups.append([("softmax.W", -1)])
    return groups


def lstm_forward_sequence(
  model: LstmModel,
  inputs: Tensor,
  initial_states: LstmState | None = None,
  resets: npt.NDArray[np.bool_] | None = None,
) -> tuple[Tensor, LstmState]:
  """
  Run a forward LSTM over (T, in) or (B, T, in).

  Returns
  -------
  tuple[Tensor, LstmState]
      Per-step probabilities and the final (h, c)
      of every layer, ready to carry over.
  """
  if model.bidirectional:
    raise RejectedInputError(
      "lstm_forward_sequence needs a forward model"
    )
  single = inputs.ndim == 2
  probs, cache = model.forward(
    inputs,
    "infer",
    initial_states=initial_states,
    resets=resets,
  )
  return (probs[0] if single else probs), cache.final_states


def bilstm_forward_sequence(
  model: LstmModel,
  inputs: Tensor,
  resets: npt.NDArray[np.bool_] | None = None,
) -> Tensor:
  """
  Run a bidirectional LSTM over a whole segment
  from zero states in both directions.
  """
  if not model.bidirectional:
    raise RejectedInputError(
      "bilstm_forward_sequence needs a "
      "bidirectional model"
    )
  single = inputs.ndim == 2
  probs, _ = model.forward(inputs, "infer", resets=resets)
  return probs[0] if single else probs
