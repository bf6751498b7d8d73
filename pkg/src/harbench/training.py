# src/harbench/training.py
"""
Train / validate / early-stop protocol

Every epoch runs mini-batch updates, applies the
max-in norm after each update and scores the
validation split. Training lasts at least
`min_epochs` and at most `max_epochs` epochs and
stops once the validation score has not increased
for `patience` epochs past the minimum. The epoch
with the best validation score is the one kept and
scored on the test split.
"""

import json
import os
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np
import numpy.typing as npt
from loguru import logger

from harbench.batching import (
  SequenceBatcher,
  SequenceSource,
  StratifiedSampler,
  next_sequence_batch,
  stratified_minibatch,
)
from harbench.cnn import CnnModel
from harbench.config import (
  BATCH_SIZE,
  STREAM_COUNT,
  ProtocolSettings,
)
from harbench.data import HarDataset, Split, majority_labels
from harbench.dnn import DnnModel
from harbench.errors import (
  DivergenceError,
  RejectedConfigError,
)
from harbench.lstm import LstmModel, LstmState
from harbench.metrics import ConfusionMatrix
from harbench.optim import OptimiserState, optimiser_step
from harbench.params import Model, copy_params, maxin_norm
from harbench.search_space import (
  SAMPLE_FAMILIES,
  Family,
  Hyperparameters,
)

#

Status = Literal["ok", "diverged", "timeout", "rejected"]

EVAL_CHUNK = 1024

#


class EarlyStopping:
  """
  Stop rule of the protocol.

  `update` is called once per epoch (1-based) with
  that epoch's validation score and returns True
  when training should stop after it.
  """

  def __init__(self, protocol: ProtocolSettings) -> None:
    self.protocol = protocol
    self.best_epoch = 0
    self.best_score = -np.inf

  def update(self, epoch: int, score: float) -> bool:
    if score > self.best_score:
      self.best_score = score
      self.best_epoch = epoch
    if epoch >= self.protocol.max_epochs:
      return True
    if epoch < self.protocol.min_epochs:
      return False
    stale = epoch - max(
      self.best_epoch, self.protocol.min_epochs
    )
    return stale >= self.protocol.patience


@dataclass
class ProtocolTrace:
  epochs_run: int
  best_epoch: int
  best_score: float
  scores: list[float] = field(default_factory=list)


def run_protocol(
  epoch_fn: Callable[[int], float],
  protocol: ProtocolSettings,
  on_best: Callable[[int], None] | None = None,
) -> ProtocolTrace:
  """
  Drive `epoch_fn(epoch) -> validation score` under
  the stop rule; `on_best` is called whenever an
  epoch becomes the best so far.
  """
  stopping = EarlyStopping(protocol)
  scores: list[float] = []
  epoch = 0
  while True:
    epoch += 1
    score = epoch_fn(epoch)
    scores.append(score)
    previous = stopping.best_epoch
    stop = stopping.update(epoch, score)
    if on_best is not None and stopping.best_epoch != previous:
      on_best(epoch)
    if stop:
      break
  logger.debug(
    f"Protocol stopped after {epoch} epochs, best "
    f"epoch {stopping.best_epoch} "
    f"({stopping.best_score:.4f})"
  )
  return ProtocolTrace(
    epochs_run=epoch,
    best_epoch=stopping.best_epoch,
    best_score=stopping.best_score,
    scores=scores,
  )


#


def build_model(
  hyper: Hyperparameters,
  input_shape: tuple[int, int],
  n_classes: int,
  rng: np.random.Generator,
) -> Model:
  """
  Model of `hyper.family` for frames of
  `input_shape` = (window, channels).
  """
  window, channels = input_shape
  layers = int(hyper.layers or 1)
  units = int(hyper.units or 1)
  match hyper.family:
    case "dnn":
      return DnnModel(
        window * channels, n_classes, layers, units, rng
      )
    case "cnn":
      return CnnModel(
        window,
        channels,
        n_classes,
        hyper.kernel_widths(),
        hyper.filter_counts(),
        layers,
        units,
        rng,
      )
    case "lstm-f":
      return LstmModel(
        window * channels, n_classes, layers, units, rng
      )
    case "lstm-s":
      return LstmModel(channels, n_classes, layers, units, rng)
    case "blstm-s":
      return LstmModel(
        channels,
        n_classes,
        layers,
        units,
        rng,
        direction="bidirectional",
      )
  raise RejectedConfigError(
    f"Unknown model family {hyper.family}"
  )


def make_optimiser(hyper: Hyperparameters) -> OptimiserState:
  if hyper.family in ("dnn", "cnn"):
    return OptimiserState(
      kind="sgd-momentum",
      lr=hyper.lr,
      decay=hyper.lr_decay or 0.0,
      momentum=hyper.momentum or 0.0,
    )
  return OptimiserState(kind="adagrad", lr=hyper.lr)


#


@dataclass
class Scores:
  """
  Scores of one split. Frame scores are always
  present; sample-wise models also get per-sample
  scores, which are then the primary ones.
  """

  frame: ConfusionMatrix
  sample: ConfusionMatrix | None = None

  def primary(self) -> ConfusionMatrix:
    return self.sample if self.sample is not None else self.frame

  def to_dict(self, literal: bool = False) -> dict[str, Any]:
    out: dict[str, Any] = {
      "mean_f1": self.primary().mean_f1(literal),
      "weighted_f1": self.primary().weighted_f1(literal),
      "frame_mean_f1": self.frame.mean_f1(literal),
      "frame_weighted_f1": self.frame.weighted_f1(literal),
    }
    if self.sample is not None:
      out["sample_mean_f1"] = self.sample.mean_f1(literal)
      out["sample_weighted_f1"] = self.sample.weighted_f1(
        literal
      )
    if self.primary().n_classes == 2:
      out["binary_f1"] = self.primary().binary_f1(
        literal=literal
      )
    return out


def _argmax_chunks(
  model: Model,
  inputs: Callable[[npt.NDArray[np.int64]], Any],
  count: int,
) -> npt.NDArray[np.int64]:
  preds = np.empty(count, dtype=np.int64)
  for start in range(0, count, EVAL_CHUNK):
    idx = np.arange(start, min(count, start + EVAL_CHUNK))
    probs, _ = model.forward(inputs(idx), "infer")
    preds[idx] = probs.argmax(axis=-1)
  return preds


def _stateful_predictions(
  model: LstmModel, source: SequenceSource
) -> npt.NDArray[np.int64]:
  """
  Forward LSTM over a whole split: state is carried
  through each recording and reset at its start.
  """
  count = len(source)
  preds = np.empty(count, dtype=np.int64)
  states: LstmState | None = None
  for start in range(0, count, EVAL_CHUNK):
    idx = np.arange(start, min(count, start + EVAL_CHUNK))
    probs, cache = model.forward(
      source.inputs(idx)[None],
      "infer",
      initial_states=states,
      resets=source.starts[idx][None],
    )
    states = cache.final_states
    preds[idx] = probs[0].argmax(axis=-1)
  return preds


def _segment_predictions(
  model: LstmModel, split: Split, length: int
) -> npt.NDArray[np.int64]:
  """
  Bidirectional LSTM over consecutive length-L
  segments of every recording, zero states each.
  """
  sequence = split.sequence
  preds = np.empty(len(sequence), dtype=np.int64)
  for start, end in sequence.recording_bounds():
    full = (end - start) // length
    if full:
      stop = start + full * length
      batch = sequence.samples[start:stop].reshape(
        full, length, -1
      )
      for b in range(0, full, BATCH_SIZE):
        probs, _ = model.forward(batch[b : b + BATCH_SIZE])
        segment = probs.argmax(axis=-1).reshape(-1)
        first = start + b * length
        preds[first : first + segment.size] = segment
    else:
      stop = start
    if stop < end:
      probs, _ = model.forward(
        sequence.samples[stop:end][None]
      )
      preds[stop:end] = probs[0].argmax(axis=-1)
  return preds


def evaluate(
  model: Model,
  family: Family,
  split: Split,
  n_classes: int,
  length: int | None = None,
  null_class: int | None = None,
) -> Scores:
  """
  Score a model on one split.

  Frame models are scored per frame. Sample models
  are scored per sample and per frame, the frame
  prediction being the majority of its samples'
  predictions (ties toward the last sample).
  `null_class`, when given, is left out of scoring.
  """
  frames = split.frames
  sample_cm = None
  if family in SAMPLE_FAMILIES:
    assert isinstance(model, LstmModel)
    if family == "blstm-s":
      samples = _segment_predictions(
        model, split, int(length or len(split.sequence))
      )
    else:
      samples = _stateful_predictions(model, split.sequence)
    sample_cm = ConfusionMatrix.from_predictions(
      split.sequence.labels, samples, n_classes
    )
    frame_preds = majority_labels(
      samples,
      frames.offsets,
      frames.offsets + frames.window,
      n_classes,
    )
  elif family == "lstm-f":
    assert isinstance(model, LstmModel)
    frame_preds = _stateful_predictions(model, frames)
  else:
    frame_preds = _argmax_chunks(
      model, frames.inputs, len(frames)
    )
  frame_cm = ConfusionMatrix.from_predictions(
    frames.labels, frame_preds, n_classes
  )
  if null_class is not None:
    frame_cm = frame_cm.without_class(null_class)
    if sample_cm is not None:
      sample_cm = sample_cm.without_class(null_class)
  return Scores(frame=frame_cm, sample=sample_cm)


#


@dataclass
class EpochRecord:
  epoch: int
  train_loss: float
  val_mean_f1: float
  val_weighted_f1: float
  wall_time: float

  def to_dict(self) -> dict[str, Any]:
    """History fields; wall time is kept separately."""
    return {
      "epoch": self.epoch,
      "train_loss": self.train_loss,
      "val_mean_f1": self.val_mean_f1,
      "val_weighted_f1": self.val_weighted_f1,
    }

  def to_json(self) -> str:
    return json.dumps(self.to_dict())


@dataclass
class TrainResult:
  model: Model
  hyper: Hyperparameters
  status: Status
  best_epoch: int
  epochs_run: int
  history: list[EpochRecord]
  validation: Scores | None = None
  test: Scores | None = None
  wall_time: float = 0.0

  def test_scores(self, literal: bool = False) -> dict[str, Any]:
    if self.test is None:
      return {"mean_f1": 0.0, "weighted_f1": 0.0}
    return self.test.to_dict(literal)


class TrainingTimeout(Exception):
  pass


def _frame_epoch(
  model: Model,
  sampler: StratifiedSampler,
  split: Split,
  optimiser: OptimiserState,
  max_in: float,
  rng: np.random.Generator,
) -> float:
  losses = []
  for _ in range(sampler.batches_per_epoch()):
    inputs, targets, _ = stratified_minibatch(
      split.frames, sampler=sampler
    )
    _, cache = model.forward(inputs, "train", rng)
    loss, grads = model.backward(cache, targets)
    losses.append(loss)
    _update(model, grads, loss, optimiser, max_in)
  return float(np.mean(losses))


def _sequence_epoch(
  model: LstmModel,
  batcher: SequenceBatcher,
  source: SequenceSource,
  optimiser: OptimiserState,
  max_in: float,
) -> float:
  losses = []
  for _ in range(batcher.batches_per_epoch(source)):
    batch = next_sequence_batch(batcher, source)
    states = None
    if not model.bidirectional and batcher.states is not None:
      keep = (~batch.resets).astype(np.float64)[:, None]
      states = [(h * keep, c * keep) for h, c in batcher.states]
    _, cache = model.forward(
      batch.inputs,
      "train",
      initial_states=states,
      resets=batch.boundaries,
    )
    loss, grads = model.backward(cache, batch.targets)
    losses.append(loss)
    _update(model, grads, loss, optimiser, max_in)
    if not model.bidirectional:
      batcher.states = cache.final_states
  return float(np.mean(losses))


def _update(
  model: Model,
  grads: dict[str, Any],
  loss: float,
  optimiser: OptimiserState,
  max_in: float,
) -> None:
  if not np.isfinite(loss):
    raise DivergenceError(
      f"Loss became non-finite after {optimiser.step} "
      f"updates"
    )
  optimiser_step(model.params, grads, optimiser)
  maxin_norm(model, max_in)


def train(
  model: Model,
  dataset: HarDataset,
  hyper: Hyperparameters,
  protocol: ProtocolSettings | None = None,
  seed: int = 0,
  history_path: str | None = None,
  timeout_s: float = 0.0,
  include_null: bool = True,
  streams: int = STREAM_COUNT,
) -> TrainResult:
  """
  Train `model` on `dataset.train` under the
  protocol and score the best epoch on the test
  split.

  Parameters
  ----------
  model : Model
      A model built by `build_model` for `hyper`.
  dataset : HarDataset
      Standardised dataset.
  hyper : Hyperparameters
      Configuration, including optimiser settings.
  protocol : ProtocolSettings, optional
      Epoch limits; 30 / 300 / 10 by default.
  seed : int
      Seeds batching and dropout.
  history_path : str, optional
      One JSON line per epoch is appended here as
      training proceeds.
  timeout_s : float
      Wall-clock budget, 0 for none. A run that
      exceeds it stops with status "timeout".

  Raises
  ------
  DivergenceError
      If the loss or any update becomes non-finite.
  """
  protocol = protocol or ProtocolSettings()
  rng = np.random.default_rng(seed)
  optimiser = make_optimiser(hyper)
  max_in = float(hyper.max_in or np.inf)
  family = hyper.family
  n_classes = dataset.n_classes
  null_class = None if include_null else dataset.null_class
  train_split = dataset.train
  sampler: StratifiedSampler | None = None
  batcher: SequenceBatcher | None = None
  source: SequenceSource = train_split.sequence
  if family in ("dnn", "cnn"):
    sampler = StratifiedSampler(
      train_split.frames.labels, n_classes, rng, BATCH_SIZE
    )
  else:
    assert isinstance(model, LstmModel)
    if family == "lstm-f":
      source = train_split.frames
    batcher = SequenceBatcher.create(
      source,
      int(hyper.length or 1),
      float(hyper.p_carry or 0.0),
      rng,
      streams,
    )

  history: list[EpochRecord] = []
  best_params = copy_params(model.params)
  started = time.monotonic()
  if history_path:
    directory = os.path.dirname(history_path)
    if directory:
      os.makedirs(directory, exist_ok=True)
    open(history_path, "w", encoding="utf-8").close()

  def epoch_fn(epoch: int) -> float:
    if timeout_s > 0 and (
      time.monotonic() - started > timeout_s
    ):
      raise TrainingTimeout()
    epoch_start = time.monotonic()
    if sampler is not None:
      loss = _frame_epoch(
        model, sampler, train_split, optimiser, max_in, rng
      )
    else:
      assert batcher is not None
      assert isinstance(model, LstmModel)
      loss = _sequence_epoch(
        model, batcher, source, optimiser, max_in
      )
    scores = evaluate(
      model,
      family,
      dataset.validation,
      n_classes,
      hyper.length,
      null_class,
    )
    primary = scores.primary()
    record = EpochRecord(
      epoch=epoch,
      train_loss=loss,
      val_mean_f1=primary.mean_f1(),
      val_weighted_f1=primary.weighted_f1(),
      wall_time=time.monotonic() - epoch_start,
    )
    history.append(record)
    if history_path:
      with open(history_path, "a", encoding="utf-8") as f:
        f.write(record.to_json() + "\n")
    logger.info(
      f"[{family}] epoch {epoch}: loss {loss:.4f}, "
      f"val F_m {record.val_mean_f1:.4f}"
    )
    return record.val_mean_f1

  best_epoch = 0

  def on_best(epoch: int) -> None:
    nonlocal best_params, best_epoch
    best_params = copy_params(model.params)
    best_epoch = epoch

  status: Status = "ok"
  try:
    run_protocol(epoch_fn, protocol, on_best)
  except TrainingTimeout:
    status = "timeout"
    logger.warning(
      f"[{family}] stopped after {len(history)} epochs: "
      f"time budget of {timeout_s}s exceeded"
    )
  # Restore in place: model parts share arrays.
  for name, value in best_params.items():
    model.params[name][...] = value
  validation = evaluate(
    model,
    family,
    dataset.validation,
    n_classes,
    hyper.length,
    null_class,
  )
  test = evaluate(
    model,
    family,
    dataset.test,
    n_classes,
    hyper.length,
    null_class,
  )
  result = TrainResult(
    model=model,
    hyper=hyper,
    status=status,
    best_epoch=best_epoch,
    epochs_run=len(history),
    history=history,
    validation=validation,
    test=test,
    wall_time=time.monotonic() - started,
  )
  logger.info(
    f"[{family}] best epoch {best_epoch}, test F_m "
    f"{test.primary().mean_f1():.4f}"
  )
  return result
