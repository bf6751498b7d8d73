# src/harbench/synth.py
"""
Synthetic activity recordings

A recording is a run of segments; each segment has
one class and lasts a random number of samples. In a
segment of class c, channel k is a sine of integer
frequency 1 + c + C·k Hz plus Gaussian noise, so
every class has its own spectral signature and a
one-second window always spans whole periods.
"""

from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from loguru import logger

from harbench.data import HarDataset, RawRecording
from harbench.errors import RejectedConfigError

#


@dataclass
class SynthSpec:
  """
  Attributes
  ----------
  class_weights : list[float]
      Relative probability of drawing each class for
      the next segment (uniform when empty).
  segment_lengths : list[int]
      Mean segment length per class in samples; a
      segment of mean m lasts m - m//2 .. m + m//2
      samples, uniformly.
  """

  n_classes: int = 4
  channels: int = 3
  rate: float = 32.0
  train_samples: int = 100_000
  validation_samples: int = 20_000
  test_samples: int = 20_000
  train_recordings: int = 4
  noise: float = 0.2
  amplitude: float = 1.0
  class_weights: list[float] = field(default_factory=list)
  segment_lengths: list[int] = field(default_factory=list)
  seed: int = 0

  def __post_init__(self) -> None:
    if self.n_classes < 2:
      raise RejectedConfigError("Need at least 2 classes")
    if self.channels < 1:
      raise RejectedConfigError("Need at least 1 channel")
    if not self.rate > 0:
      raise RejectedConfigError("Rate must be positive")
    if self.noise < 0:
      raise RejectedConfigError("Noise must be ≥ 0")
    if self.train_recordings < 1:
      raise RejectedConfigError(
        "Need at least one training recording"
      )
    if self.highest_frequency() >= self.rate / 2:
      raise RejectedConfigError(
        f"{self.n_classes} classes × {self.channels} "
        f"channels need {self.highest_frequency()} Hz, "
        f"above the Nyquist limit of {self.rate / 2} Hz"
      )
    if not self.class_weights:
      self.class_weights = [1.0] * self.n_classes
    if not self.segment_lengths:
      self.segment_lengths = [3 * int(self.rate)] * (
        self.n_classes
      )
    if (
      len(self.class_weights) != self.n_classes
      or len(self.segment_lengths) != self.n_classes
    ):
      raise RejectedConfigError(
        "One weight and one segment length per class"
      )
    if min(self.class_weights) < 0 or not sum(
      self.class_weights
    ):
      raise RejectedConfigError(
        "Class weights must be ≥ 0 and not all zero"
      )
    if min(self.segment_lengths) < 1:
      raise RejectedConfigError(
        "Segment lengths must be ≥ 1"
      )
    if self.window > min(
      self.train_samples // self.train_recordings,
      self.validation_samples,
      self.test_samples,
    ):
      raise RejectedConfigError(
        "Every recording must hold at least one window"
      )

  @classmethod
  def desk_scale(cls, seed: int = 0) -> "SynthSpec":
    """4 classes, 3 channels, 32 Hz, 10⁵ train samples."""
    return cls(seed=seed)

  @property
  def window(self) -> int:
    return int(round(self.rate))

  @property
  def step(self) -> int:
    return max(1, self.window // 2)

  def frequencies(self) -> npt.NDArray[np.int64]:
    """(classes, channels) integer frequencies in Hz."""
    c = np.arange(self.n_classes)[:, None]
    k = np.arange(self.channels)[None, :]
    return 1 + c + self.n_classes * k

  def highest_frequency(self) -> int:
    return self.n_classes * self.channels

  def expected_priors(self) -> npt.NDArray[np.float64]:
    """Long-run fraction of samples in each class."""
    mass = np.asarray(self.class_weights) * np.asarray(
      self.segment_lengths
    )
    return mass / mass.sum()


def _recording(
  spec: SynthSpec,
  length: int,
  rng: np.random.Generator,
  subject: str,
  run: str,
) -> RawRecording:
  weights = np.asarray(spec.class_weights, dtype=np.float64)
  weights = weights / weights.sum()
  lengths = np.asarray(spec.segment_lengths)
  labels = np.empty(length, dtype=np.int64)
  filled = 0
  while filled < length:
    c = int(rng.choice(spec.n_classes, p=weights))
    mean = int(lengths[c])
    size = int(
      rng.integers(mean - mean // 2, mean + mean // 2 + 1)
    )
    labels[filled : filled + size] = c
    filled += size
  t = np.arange(length) / spec.rate
  freqs = spec.frequencies()[labels]
  signal = spec.amplitude * np.sin(
    2.0 * np.pi * freqs * t[:, None]
  )
  signal += spec.noise * rng.standard_normal(signal.shape)
  return RawRecording(
    subject=subject,
    run=run,
    rate=spec.rate,
    channels=signal,
    labels=labels,
    provenance="synth",
  )


def synthesize(spec: SynthSpec) -> HarDataset:
  """
  Train, validation and test recordings for `spec`;
  identical for identical specs.
  """
  rng = np.random.default_rng(spec.seed)
  per_recording = spec.train_samples // spec.train_recordings
  train = [
    _recording(spec, per_recording, rng, f"s{i + 1}", "1")
    for i in range(spec.train_recordings)
  ]
  validation = [
    _recording(
      spec,
      spec.validation_samples,
      rng,
      f"s{spec.train_recordings + 1}",
      "1",
    )
  ]
  test = [
    _recording(
      spec,
      spec.test_samples,
      rng,
      f"s{spec.train_recordings + 2}",
      "1",
    )
  ]
  logger.info(
    f"Synthesised {spec.n_classes} classes × "
    f"{spec.channels} channels at {spec.rate} Hz "
    f"(seed {spec.seed})"
  )
  return HarDataset.from_recordings(
    dataset_id="synth",
    rate=spec.rate,
    class_names=[f"class{c}" for c in range(spec.n_classes)],
    window=spec.window,
    step=spec.step,
    recordings={
      "train": train,
      "validation": validation,
      "test": test,
    },
  )
