# src/harbench/batching.py
"""
Mini-batch construction

Frame models draw 64-frame batches stratified by the
training class prior. Recurrent models read `b`
parallel streams of `L` consecutive items from the
concatenated training sequence; each stream advances
by `L` per batch, wrapping at the end, and keeps its
state from the previous batch with probability
`p_carry`.
"""

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import numpy.typing as npt
from loguru import logger

from harbench.config import BATCH_SIZE, STREAM_COUNT
from harbench.errors import (
  RejectedConfigError,
  RejectedInputError,
)
from harbench.lstm import LstmState
from harbench.ops import Tensor

#

Indices = npt.NDArray[np.int64]


class SequenceSource(Protocol):
  """
  Anything the stream batcher can read: a sample
  sequence, or frames in temporal order.
  """

  starts: npt.NDArray[np.bool_]

  def __len__(self) -> int: ...

  def inputs(self, indices: Indices) -> Tensor: ...

  def targets(self, indices: Indices) -> Indices: ...


class LabelledFrames(Protocol):
  labels: npt.NDArray[np.int64]

  def __len__(self) -> int: ...

  def inputs(self, indices: Indices) -> Tensor: ...


#


def stratified_counts(
  priors: npt.NDArray[np.float64],
  size: int,
  rng: np.random.Generator,
) -> Indices:
  """
  Per-class batch counts of ⌊size·π_c⌋ or
  ⌈size·π_c⌉ that sum to `size`.

  The leftover slots go to distinct classes, drawn
  with probability proportional to the fractional
  part of size·π_c.
  """
  exact = size * priors
  counts = np.floor(exact).astype(np.int64)
  remaining = int(size - counts.sum())
  if remaining > 0:
    fractions = exact - counts
    candidates = np.flatnonzero(fractions > 0)
    weights = fractions[candidates] / fractions[
      candidates
    ].sum()
    extra = rng.choice(
      candidates, size=remaining, replace=False, p=weights
    )
    counts[extra] += 1
  return counts


@dataclass
class StratifiedSampler:
  """
  Draws stratified batches; within a class, frames
  are taken from a shuffled queue that is refilled
  only when exhausted, so each frame is seen once
  before any is repeated.
  """

  labels: npt.NDArray[np.int64]
  n_classes: int
  rng: np.random.Generator
  size: int = BATCH_SIZE
  _members: dict[int, Indices] = field(
    default_factory=dict, init=False
  )
  _queues: dict[int, Indices] = field(
    default_factory=dict, init=False
  )

  def __post_init__(self) -> None:
    if len(self.labels) == 0:
      raise RejectedInputError(
        "Cannot batch an empty frame dataset"
      )
    counts = np.bincount(
      self.labels, minlength=self.n_classes
    )
    for c in range(self.n_classes):
      if counts[c] == 0:
        logger.warning(
          f"Class {c} has no training frames; "
          f"excluded from batches"
        )
        continue
      self._members[c] = np.flatnonzero(self.labels == c)
      self._queues[c] = np.zeros(0, dtype=np.int64)
    self.classes = np.array(sorted(self._members))
    present = counts[self.classes].astype(np.float64)
    self.priors = present / present.sum()

  def _take(self, c: int, k: int) -> Indices:
    taken: list[Indices] = []
    while k > 0:
      queue = self._queues[c]
      if queue.size == 0:
        queue = self.rng.permutation(self._members[c])
      chunk = queue[:k]
      self._queues[c] = queue[k:]
      taken.append(chunk)
      k -= chunk.size
    return (
      np.concatenate(taken)
      if taken
      else np.zeros(0, dtype=np.int64)
    )

  def batches_per_epoch(self) -> int:
    return max(1, -(-len(self.labels) // self.size))

  def draw(self) -> Indices:
    counts = stratified_counts(
      self.priors, self.size, self.rng
    )
    picks = [
      self._take(int(c), int(k))
      for c, k in zip(self.classes, counts)
      if k > 0
    ]
    batch = np.concatenate(picks)
    return self.rng.permutation(batch)


def stratified_minibatch(
  frames: LabelledFrames,
  size: int = BATCH_SIZE,
  rng: np.random.Generator | None = None,
  sampler: StratifiedSampler | None = None,
) -> tuple[Tensor, npt.NDArray[np.int64], Indices]:
  """
  One class-stratified batch of frames.

  Parameters
  ----------
  frames : LabelledFrames
      Training frames.
  size : int
      Batch size (64 frames by default).
  rng : np.random.Generator, optional
      Used to create a sampler when none is given.
  sampler : StratifiedSampler, optional
      Keeps per-class queues across calls; pass the
      same sampler for a whole training run.

  Returns
  -------
  tuple
      (frames (size, s, d), labels, frame indices)
  """
  if sampler is None:
    if rng is None:
      raise RejectedInputError(
        "Need a sampler or a random generator"
      )
    n_classes = int(frames.labels.max(initial=0)) + 1
    sampler = StratifiedSampler(
      frames.labels, n_classes, rng, size
    )
  indices = sampler.draw()
  return (
    frames.inputs(indices),
    frames.labels[indices],
    indices,
  )


#


@dataclass
class SequenceBatch:
  inputs: Tensor
  targets: npt.NDArray[np.int64]
  resets: npt.NDArray[np.bool_]
  boundaries: npt.NDArray[np.bool_]
  indices: Indices


@dataclass
class SequenceBatcher:
  """
  `streams` read heads over a training sequence.

  Attributes
  ----------
  streams : int
      Number of parallel streams b.
  length : int
      Unroll length L (samples, or frames for
      frame-input recurrent models).
  p_carry : float
      Probability that a stream keeps its state
      across a batch boundary.
  positions : Indices
      Current read position of every stream.
  states : LstmState, optional
      Model state carried into the next batch.
  """

  streams: int
  length: int
  p_carry: float
  positions: Indices
  rng: np.random.Generator
  states: LstmState | None = None

  @classmethod
  def create(
    cls,
    data: SequenceSource,
    length: int,
    p_carry: float,
    rng: np.random.Generator,
    streams: int = STREAM_COUNT,
  ) -> "SequenceBatcher":
    """Streams start at uniformly random positions."""
    if not 0.0 <= p_carry <= 1.0:
      raise RejectedConfigError(
        f"p_carry {p_carry} outside [0, 1]"
      )
    if streams < 1 or length < 1:
      raise RejectedConfigError(
        "Need at least one stream and L ≥ 1"
      )
    if length >= len(data):
      raise RejectedConfigError(
        f"Unroll length {length} must be shorter than "
        f"the training sequence ({len(data)})"
      )
    positions = rng.integers(0, len(data), size=streams)
    return cls(
      streams=streams,
      length=length,
      p_carry=p_carry,
      positions=positions.astype(np.int64),
      rng=rng,
    )

  def batches_per_epoch(self, data: SequenceSource) -> int:
    return max(
      1, -(-len(data) // (self.streams * self.length))
    )


def next_sequence_batch(
  batcher: SequenceBatcher, data: SequenceSource
) -> SequenceBatch:
  """
  The next L items of every stream.

  `resets[i]` is True when stream i starts the batch
  from zero state (drawn with probability
  1 − p_carry). `boundaries[i, t]` is True where a
  recording starts, so state is also zeroed inside
  the window.
  """
  size = len(data)
  if batcher.length >= size:
    raise RejectedConfigError(
      f"Unroll length {batcher.length} must be shorter "
      f"than the training sequence ({size})"
    )
  indices = (
    batcher.positions[:, None] + np.arange(batcher.length)
  ) % size
  batcher.positions = (
    batcher.positions + batcher.length
  ) % size
  resets = batcher.rng.random(batcher.streams) >= (
    batcher.p_carry
  )
  return SequenceBatch(
    inputs=data.inputs(indices),
    targets=data.targets(indices),
    resets=resets,
    boundaries=data.starts[indices],
    indices=indices,
  )
