# src/harbench/data.py
"""
Dataset types and preprocessing

Recordings from one subject and run are kept as
`RawRecording`s. A split concatenates its recordings
into a `SequenceDataset` (per-sample view, used by
the sample-wise recurrent models) and a
`FrameDataset` (sliding windows that never cross a
recording boundary, used by the frame models). Both
views share the same sample array.

The on-disk cache is one JSON header line followed by
little-endian float32 samples and int32 labels of
every split, in split order.
"""

import json
import os
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np
import numpy.typing as npt
from loguru import logger

from harbench.errors import (
  IngestionError,
  RejectedConfigError,
  RejectedInputError,
)
from harbench.ops import Tensor

#

Labelling = Literal["majority", "last"]
SPLIT_NAMES = ("train", "validation", "test")

CACHE_FORMAT = "harbench.cache"
CACHE_VERSION = 1
STD_FLOOR = 1e-8
NULL_CLASS = "Null"

Labels = npt.NDArray[np.int64]

#


@dataclass
class RawRecording:
  subject: str
  run: str
  rate: float
  channels: Tensor
  labels: Labels
  provenance: str = ""

  def __post_init__(self) -> None:
    if self.channels.ndim != 2:
      raise RejectedInputError(
        f"Recording {self.subject}/{self.run} must be "
        f"time × channels, got {self.channels.shape}"
      )
    if self.labels.shape != (self.channels.shape[0],):
      raise RejectedInputError(
        f"Recording {self.subject}/{self.run} has "
        f"{self.labels.shape[0]} labels for "
        f"{self.channels.shape[0]} samples"
      )
    if not self.rate > 0:
      raise RejectedInputError(
        f"Sample rate must be positive, got {self.rate}"
      )

  def __len__(self) -> int:
    return int(self.channels.shape[0])


def majority_labels(
  labels: Labels,
  starts: npt.NDArray[np.int64],
  ends: npt.NDArray[np.int64],
  n_classes: int,
) -> Labels:
  """
  Majority label of every [start, end) range; ties
  go to the label of the range's last sample, then
  to the lowest class index.
  """
  onehot = np.zeros((labels.shape[0] + 1, n_classes))
  onehot[np.arange(1, labels.shape[0] + 1), labels] = 1.0
  cumulative = np.cumsum(onehot, axis=0)
  counts = cumulative[ends] - cumulative[starts]
  best = counts.max(axis=1)
  last = labels[ends - 1]
  last_wins = counts[np.arange(len(starts)), last] == best
  return np.where(
    last_wins, last, counts.argmax(axis=1)
  ).astype(np.int64)


def frame_count(length: int, window: int, step: int) -> int:
  """⌊(T − s) / step⌋ + 1, or 0 if T < s."""
  if length < window:
    return 0
  return (length - window) // step + 1


#


@dataclass
class SequenceDataset:
  """
  Recordings of a split concatenated in order.

  `starts` marks every sample that begins a
  recording; recurrent state must be zeroed there.
  """

  samples: Tensor
  labels: Labels
  offsets: npt.NDArray[np.int64]
  ids: list[tuple[str, str]] = field(default_factory=list)

  def __post_init__(self) -> None:
    self.starts = np.zeros(len(self.labels), dtype=bool)
    self.starts[self.offsets[:-1]] = True

  def __len__(self) -> int:
    return int(self.labels.shape[0])

  @property
  def channels(self) -> int:
    return int(self.samples.shape[1])

  def recording_bounds(self) -> list[tuple[int, int]]:
    return [
      (int(a), int(b))
      for a, b in zip(self.offsets[:-1], self.offsets[1:])
    ]

  def recording_of(self, index: int) -> int:
    return int(
      np.searchsorted(self.offsets, index, side="right")
      - 1
    )

  def inputs(self, indices: npt.NDArray[np.int64]) -> Tensor:
    return self.samples[indices]

  def targets(self, indices: npt.NDArray[np.int64]) -> Labels:
    return self.labels[indices]


@dataclass
class FrameDataset:
  """
  Sliding-window frames over a split.

  Only frame start offsets are stored; frames are
  materialised from the shared sample array on
  request.
  """

  samples: Tensor
  offsets: npt.NDArray[np.int64]
  labels: Labels
  recordings: npt.NDArray[np.int64]
  window: int
  step: int

  def __post_init__(self) -> None:
    self.starts = np.ones(len(self.labels), dtype=bool)
    if len(self.labels):
      self.starts[1:] = (
        self.recordings[1:] != self.recordings[:-1]
      )

  def __len__(self) -> int:
    return int(self.labels.shape[0])

  @property
  def channels(self) -> int:
    return int(self.samples.shape[1])

  def inputs(self, indices: npt.NDArray[np.int64]) -> Tensor:
    """Frames (..., s, d) for frame `indices`."""
    rows = (
      self.offsets[np.asarray(indices)][..., None]
      + np.arange(self.window)
    )
    return self.samples[rows]

  def targets(self, indices: npt.NDArray[np.int64]) -> Labels:
    return self.labels[indices]

  def class_counts(self, n_classes: int) -> Labels:
    return np.bincount(self.labels, minlength=n_classes)


def sliding_window(
  rec: RawRecording,
  window: int,
  step: int,
  labelling: Labelling = "majority",
  n_classes: int | None = None,
) -> FrameDataset:
  """
  Cut one recording into frames at offsets
  0, step, 2·step, …

  Parameters
  ----------
  rec : RawRecording
      Source recording.
  window, step : int
      Frame length and hop in samples.
  labelling : {"majority", "last"}
      Majority vote (ties toward the last sample) or
      the label of the last sample.

  Returns
  -------
  FrameDataset
      Empty, with a warning, when the recording is
      shorter than the window.
  """
  return _frames(
    rec.channels,
    rec.labels,
    np.array([0, len(rec)]),
    window,
    step,
    labelling,
    n_classes,
  )


def _frames(
  samples: Tensor,
  labels: Labels,
  bounds: npt.NDArray[np.int64],
  window: int,
  step: int,
  labelling: Labelling,
  n_classes: int | None,
) -> FrameDataset:
  if window < 1 or step < 1:
    raise RejectedConfigError(
      f"Window {window} and step {step} must be ≥ 1"
    )
  offsets: list[npt.NDArray[np.int64]] = []
  owners: list[npt.NDArray[np.int64]] = []
  for r, (start, end) in enumerate(
    zip(bounds[:-1], bounds[1:])
  ):
    count = frame_count(int(end - start), window, step)
    if count == 0:
      logger.warning(
        f"Recording {r} has {end - start} samples, "
        f"shorter than the {window}-sample window"
      )
      continue
    offsets.append(start + step * np.arange(count))
    owners.append(np.full(count, r))
  frame_offsets = (
    np.concatenate(offsets).astype(np.int64)
    if offsets
    else np.zeros(0, dtype=np.int64)
  )
  recordings = (
    np.concatenate(owners).astype(np.int64)
    if owners
    else np.zeros(0, dtype=np.int64)
  )
  if labelling == "last":
    frame_labels = labels[frame_offsets + window - 1]
  else:
    classes = n_classes or int(labels.max(initial=0)) + 1
    frame_labels = majority_labels(
      labels, frame_offsets, frame_offsets + window, classes
    )
  return FrameDataset(
    samples=samples,
    offsets=frame_offsets,
    labels=frame_labels.astype(np.int64),
    recordings=recordings,
    window=window,
    step=step,
  )


def downsample(
  rec: RawRecording, target_hz: float
) -> RawRecording:
  """
  Decimate by averaging contiguous bins.

  Sample i falls into bin ⌊i · target / source⌋;
  channels are bin means, labels the bin majority.
  """
  if not target_hz > 0:
    raise RejectedConfigError(
      f"Target rate must be positive, got {target_hz}"
    )
  if target_hz > rec.rate:
    raise RejectedConfigError(
      f"Cannot upsample {rec.rate} Hz to {target_hz} Hz"
    )
  if target_hz == rec.rate or len(rec) == 0:
    return rec
  index = np.arange(len(rec))
  bins = np.floor(index * target_hz / rec.rate).astype(
    np.int64
  )
  starts = np.flatnonzero(np.diff(bins, prepend=-1))
  ends = np.append(starts[1:], len(rec))
  sums = np.add.reduceat(rec.channels, starts, axis=0)
  means = sums / (ends - starts)[:, None]
  n_classes = int(rec.labels.max(initial=0)) + 1
  labels = majority_labels(rec.labels, starts, ends, n_classes)
  return RawRecording(
    subject=rec.subject,
    run=rec.run,
    rate=float(target_hz),
    channels=means,
    labels=labels,
    provenance=rec.provenance,
  )


#


@dataclass
class Split:
  """One split in both its sample and frame view."""

  name: str
  sequence: SequenceDataset
  frames: FrameDataset

  def with_samples(self, samples: Tensor) -> "Split":
    return Split(
      name=self.name,
      sequence=SequenceDataset(
        samples=samples,
        labels=self.sequence.labels,
        offsets=self.sequence.offsets,
        ids=self.sequence.ids,
      ),
      frames=FrameDataset(
        samples=samples,
        offsets=self.frames.offsets,
        labels=self.frames.labels,
        recordings=self.frames.recordings,
        window=self.frames.window,
        step=self.frames.step,
      ),
    )


def build_split(
  name: str,
  recordings: Sequence[RawRecording],
  window: int,
  step: int,
  n_classes: int,
) -> Split:
  if not recordings:
    raise RejectedInputError(f"Split {name} is empty")
  samples = np.concatenate(
    [r.channels for r in recordings]
  ).astype(np.float64)
  labels = np.concatenate(
    [r.labels for r in recordings]
  ).astype(np.int64)
  if labels.size and (
    labels.min() < 0 or labels.max() >= n_classes
  ):
    raise RejectedInputError(
      f"Split {name} has labels outside "
      f"[0, {n_classes})"
    )
  offsets = np.cumsum([0] + [len(r) for r in recordings])
  sequence = SequenceDataset(
    samples=samples,
    labels=labels,
    offsets=offsets.astype(np.int64),
    ids=[(r.subject, r.run) for r in recordings],
  )
  frames = _frames(
    samples,
    labels,
    sequence.offsets,
    window,
    step,
    "majority",
    n_classes,
  )
  logger.debug(
    f"Split {name}: {len(sequence)} samples, "
    f"{len(frames)} frames, {len(recordings)} recordings"
  )
  return Split(name=name, sequence=sequence, frames=frames)


@dataclass
class HarDataset:
  """
  A dataset with train, validation and test splits.
  """

  dataset_id: str
  rate: float
  class_names: list[str]
  window: int
  step: int
  train: Split
  validation: Split
  test: Split

  @property
  def n_classes(self) -> int:
    return len(self.class_names)

  @property
  def channels(self) -> int:
    return self.train.sequence.channels

  @property
  def null_class(self) -> int | None:
    if NULL_CLASS in self.class_names:
      return self.class_names.index(NULL_CLASS)
    return None

  def splits(self) -> list[Split]:
    return [self.train, self.validation, self.test]

  @classmethod
  def from_recordings(
    cls,
    dataset_id: str,
    rate: float,
    class_names: list[str],
    window: int,
    step: int,
    recordings: dict[str, list[RawRecording]],
  ) -> "HarDataset":
    missing = [s for s in SPLIT_NAMES if s not in recordings]
    if missing:
      raise RejectedInputError(
        f"Missing splits: {', '.join(missing)}"
      )
    widths = {
      r.channels.shape[1]
      for split in recordings.values()
      for r in split
    }
    if len(widths) > 1:
      raise RejectedInputError(
        f"Recordings disagree on channel count: {widths}"
      )
    built = {
      name: build_split(
        name,
        recordings[name],
        window,
        step,
        len(class_names),
      )
      for name in SPLIT_NAMES
    }
    return cls(
      dataset_id=dataset_id,
      rate=rate,
      class_names=list(class_names),
      window=window,
      step=step,
      **built,
    )

  def summary(self) -> list[dict[str, Any]]:
    """Per-split sample, frame and class counts."""
    rows = []
    for split in self.splits():
      counts = np.bincount(
        split.sequence.labels, minlength=self.n_classes
      )
      rows.append(
        {
          "split": split.name,
          "recordings": len(split.sequence.ids),
          "samples": len(split.sequence),
          "frames": len(split.frames),
          "channels": self.channels,
          "classes": int(np.count_nonzero(counts)),
          "class_counts": counts.tolist(),
        }
      )
    return rows


def standardize(
  dataset: HarDataset,
) -> tuple[HarDataset, Tensor, Tensor]:
  """
  Zero-mean, unit-variance channels using training
  statistics for every split.

  Returns
  -------
  tuple[HarDataset, Tensor, Tensor]
      (standardised dataset, mean, std)
  """
  train = dataset.train.sequence.samples
  mean = train.mean(axis=0)
  std = np.maximum(train.std(axis=0), STD_FLOOR)
  scaled = {
    split.name: split.with_samples(
      (split.sequence.samples - mean) / std
    )
    for split in dataset.splits()
  }
  return (
    HarDataset(
      dataset_id=dataset.dataset_id,
      rate=dataset.rate,
      class_names=dataset.class_names,
      window=dataset.window,
      step=dataset.step,
      **scaled,
    ),
    mean,
    std,
  )


#


def write_cache(dataset: HarDataset, path: str) -> str:
  """
  Write the canonical binary cache of a dataset.

  The output depends only on the dataset content,
  so repeated ingests produce identical bytes.
  """
  header = {
    "format": CACHE_FORMAT,
    "version": CACHE_VERSION,
    "dataset": dataset.dataset_id,
    "rate": dataset.rate,
    "channels": dataset.channels,
    "classes": dataset.class_names,
    "window": dataset.window,
    "step": dataset.step,
    "splits": {
      split.name: {
        "lengths": np.diff(
          split.sequence.offsets
        ).tolist(),
        "ids": [list(i) for i in split.sequence.ids],
      }
      for split in dataset.splits()
    },
  }
  directory = os.path.dirname(path)
  if directory:
    os.makedirs(directory, exist_ok=True)
  with open(path, "wb") as f:
    f.write(
      json.dumps(header, sort_keys=True).encode("utf-8")
    )
    f.write(b"\n")
    for split in dataset.splits():
      f.write(
        split.sequence.samples.astype("<f4").tobytes()
      )
      f.write(split.sequence.labels.astype("<i4").tobytes())
  logger.info(f"Wrote {dataset.dataset_id} cache to {path}")
  return path


def read_cache(path: str) -> HarDataset:
  """Load a dataset written by `write_cache`."""
  if not os.path.exists(path):
    raise IngestionError(
      f"Cache {path} not found", missing=[path]
    )
  with open(path, "rb") as f:
    line = f.readline()
    try:
      header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
      raise IngestionError(
        f"Cache {path} has a garbled header",
        missing=[path],
      ) from e
    if (
      header.get("format") != CACHE_FORMAT
      or header.get("version") != CACHE_VERSION
    ):
      raise IngestionError(
        f"Cache {path} has an unsupported format",
        missing=[path],
      )
    channels = int(header["channels"])
    recordings: dict[str, list[RawRecording]] = {}
    for name in SPLIT_NAMES:
      entry = header["splits"][name]
      total = int(sum(entry["lengths"]))
      samples = np.frombuffer(
        f.read(4 * total * channels), dtype="<f4"
      )
      labels = np.frombuffer(f.read(4 * total), dtype="<i4")
      if (
        samples.size != total * channels
        or labels.size != total
      ):
        raise IngestionError(
          f"Cache {path} is truncated in split {name}",
          missing=[path],
        )
      samples = samples.reshape(total, channels).astype(
        np.float64
      )
      labels = labels.astype(np.int64)
      split: list[RawRecording] = []
      start = 0
      for length, (subject, run) in zip(
        entry["lengths"], entry["ids"]
      ):
        split.append(
          RawRecording(
            subject=subject,
            run=run,
            rate=float(header["rate"]),
            channels=samples[start : start + length],
            labels=labels[start : start + length],
            provenance=path,
          )
        )
        start += length
      recordings[name] = split
  logger.debug(f"Read {header['dataset']} cache {path}")
  return HarDataset.from_recordings(
    dataset_id=header["dataset"],
    rate=float(header["rate"]),
    class_names=list(header["classes"]),
    window=int(header["window"]),
    step=int(header["step"]),
    recordings=recordings,
  )
