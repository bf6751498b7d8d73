import numpy as np
import pytest

from harbench.errors import RejectedConfigError
from harbench.metrics import ConfusionMatrix
from harbench.synth import SynthSpec, synthesize


def small(**kw):
  values = dict(
    n_classes=4,
    channels=3,
    rate=32.0,
    train_samples=8000,
    validation_samples=2000,
    test_samples=2000,
  )
  values.update(kw)
  return SynthSpec(**values)


def test_same_seed_same_dataset():
  a = synthesize(small(seed=5))
  b = synthesize(small(seed=5))
  c = synthesize(small(seed=6))
  for x, y in zip(a.splits(), b.splits()):
    np.testing.assert_array_equal(
      x.sequence.samples, y.sequence.samples
    )
    np.testing.assert_array_equal(
      x.sequence.labels, y.sequence.labels
    )
  assert not np.array_equal(
    a.train.sequence.labels, c.train.sequence.labels
  )


def test_layout():
  dataset = synthesize(small())
  assert dataset.dataset_id == "synth"
  assert dataset.n_classes == 4
  assert dataset.channels == 3
  assert dataset.window == 32
  assert dataset.step == 16
  assert len(dataset.train.sequence.ids) == 4
  assert len(dataset.validation.sequence) == 2000


def test_noise_free_frames_are_separable():
  """
  Every frame spans one second, so each channel's
  frequency sits on a single FFT bin.
  """
  spec = small(noise=0.0)
  dataset = synthesize(spec)
  frames = dataset.test.frames
  inputs = frames.inputs(np.arange(len(frames)))
  rows = (
    frames.offsets[:, None] + np.arange(frames.window)
  )
  labels = dataset.test.sequence.labels[rows]
  pure = np.all(labels == labels[:, :1], axis=1)
  spectrum = np.abs(np.fft.rfft(inputs[pure, :, 0], axis=1))
  predicted = spectrum.argmax(axis=1) - 1
  cm = ConfusionMatrix.from_predictions(
    frames.labels[pure], predicted, spec.n_classes
  )
  assert pure.sum() > 50
  assert cm.mean_f1() == pytest.approx(1.0)


def test_priors_follow_segment_lengths():
  spec = SynthSpec(
    n_classes=4,
    channels=1,
    rate=32.0,
    train_samples=1_000_000,
    train_recordings=1,
    segment_lengths=[32, 64, 96, 128],
  )
  dataset = synthesize(spec)
  counts = np.bincount(
    dataset.train.sequence.labels, minlength=4
  )
  observed = counts / counts.sum()
  np.testing.assert_allclose(
    observed, spec.expected_priors(), atol=0.02
  )
  np.testing.assert_allclose(
    spec.expected_priors(), [0.1, 0.2, 0.3, 0.4]
  )


def test_rejects_degenerate_specs():
  with pytest.raises(RejectedConfigError):
    SynthSpec(n_classes=1)
  with pytest.raises(RejectedConfigError):
    SynthSpec(n_classes=8, channels=3, rate=32.0)
  with pytest.raises(RejectedConfigError):
    SynthSpec(class_weights=[1.0, 0.0])
  with pytest.raises(RejectedConfigError):
    SynthSpec(noise=-1.0)
