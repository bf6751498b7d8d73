import numpy as np
import pytest

from harbench.data import (
  HarDataset,
  RawRecording,
  downsample,
  frame_count,
  majority_labels,
  read_cache,
  sliding_window,
  standardize,
  write_cache,
)
from harbench.errors import (
  IngestionError,
  RejectedConfigError,
  RejectedInputError,
)


def recording(length, channels=2, labels=None, rate=30.0):
  values = np.arange(length * channels, dtype=np.float64)
  return RawRecording(
    subject="S1",
    run="1",
    rate=rate,
    channels=values.reshape(length, channels),
    labels=(
      np.zeros(length, dtype=np.int64)
      if labels is None
      else np.asarray(labels, dtype=np.int64)
    ),
  )


def test_sliding_window_offsets():
  frames = sliding_window(recording(60), 30, 15)
  assert len(frames) == 3
  assert frames.offsets.tolist() == [0, 15, 30]
  assert frame_count(60, 30, 15) == 3
  batch = frames.inputs(np.array([1]))
  assert batch.shape == (1, 30, 2)
  np.testing.assert_array_equal(
    batch[0], recording(60).channels[15:45]
  )


def test_disjoint_frames_and_short_recordings():
  frames = sliding_window(recording(90), 30, 30)
  assert frames.offsets.tolist() == [0, 30, 60]
  assert len(sliding_window(recording(20), 30, 15)) == 0
  with pytest.raises(RejectedConfigError):
    sliding_window(recording(60), 30, 0)


def test_frame_labelling_rules():
  labels = [0] * 10 + [1] * 6 + [2] * 4
  rec = recording(20, labels=labels)
  majority = sliding_window(rec, 20, 20, n_classes=3)
  last = sliding_window(rec, 20, 20, "last", n_classes=3)
  assert majority.labels.tolist() == [0]
  assert last.labels.tolist() == [2]
  uniform = sliding_window(
    recording(40, labels=[1] * 40), 10, 5, n_classes=2
  )
  assert set(uniform.labels.tolist()) == {1}


def test_majority_ties_go_to_last_sample():
  labels = np.array([0, 0, 1, 1, 2, 2, 1])
  out = majority_labels(
    labels, np.array([0, 0, 4]), np.array([4, 3, 6]), 3
  )
  # [0,0,1,1] tie → last is 1; [0,0,1] → 0;
  # [2,2] → 2
  assert out.tolist() == [1, 0, 2]


def test_frames_never_cross_recordings():
  dataset = HarDataset.from_recordings(
    dataset_id="toy",
    rate=30.0,
    class_names=["a", "b"],
    window=10,
    step=5,
    recordings={
      "train": [recording(23), recording(17)],
      "validation": [recording(10)],
      "test": [recording(12)],
    },
  )
  frames = dataset.train.frames
  # 23 → 3 frames, 17 → 2 frames
  assert frames.offsets.tolist() == [0, 5, 10, 23, 28]
  assert frames.starts.tolist() == [
    True, False, False, True, False,
  ]
  assert dataset.train.sequence.starts[[0, 23]].all()
  assert dataset.train.sequence.recording_bounds() == [
    (0, 23),
    (23, 40),
  ]
  rows = dataset.summary()
  assert rows[0]["frames"] == 5
  assert rows[0]["recordings"] == 2


def test_downsample_identity_and_constant():
  rec = recording(30, rate=64.0)
  assert downsample(rec, 64.0) is rec
  flat = RawRecording(
    subject="S1",
    run="1",
    rate=64.0,
    channels=np.full((64, 3), 2.5),
    labels=np.zeros(64, dtype=np.int64),
  )
  half = downsample(flat, 32.0)
  assert half.rate == 32.0
  assert len(half) == 32
  np.testing.assert_allclose(half.channels, 2.5)
  with pytest.raises(RejectedConfigError):
    downsample(rec, 0.0)
  with pytest.raises(RejectedConfigError):
    downsample(rec, 128.0)


def test_downsample_square_wave_to_mid_level():
  square = np.tile([1.0, -1.0], 50)[:, None]
  rec = RawRecording(
    subject="S1",
    run="1",
    rate=100.0,
    channels=square,
    labels=np.zeros(100, dtype=np.int64),
  )
  half = downsample(rec, 50.0)
  np.testing.assert_allclose(half.channels, 0.0)


def test_downsample_thirds_by_bins():
  labels = np.array([0, 0, 1, 1, 1, 0, 2, 2, 2])
  rec = RawRecording(
    subject="S1",
    run="1",
    rate=3.0,
    channels=np.arange(9, dtype=np.float64)[:, None],
    labels=labels,
  )
  out = downsample(rec, 1.0)
  np.testing.assert_allclose(out.channels[:, 0], [1, 4, 7])
  assert out.labels.tolist() == [0, 1, 2]


def test_standardize_uses_training_statistics(tiny_raw):
  raw = tiny_raw
  scaled, mean, std = standardize(raw)
  train = scaled.train.sequence.samples
  np.testing.assert_allclose(train.mean(axis=0), 0, atol=1e-10)
  np.testing.assert_allclose(train.std(axis=0), 1, atol=1e-10)
  np.testing.assert_allclose(
    scaled.test.sequence.samples,
    (raw.test.sequence.samples - mean) / std,
  )
  # Frames read the scaled samples.
  np.testing.assert_array_equal(
    scaled.train.frames.inputs(np.array([0]))[0],
    train[: scaled.window],
  )


def test_cache_round_trip(tiny_raw, tmp_path):
  dataset = tiny_raw
  first = write_cache(dataset, str(tmp_path / "a.cache"))
  loaded = read_cache(first)
  assert loaded.class_names == dataset.class_names
  assert loaded.window == dataset.window
  for a, b in zip(loaded.splits(), dataset.splits()):
    np.testing.assert_array_equal(
      a.sequence.labels, b.sequence.labels
    )
    np.testing.assert_array_equal(
      a.sequence.samples,
      b.sequence.samples.astype(np.float32),
    )
    assert a.sequence.ids == b.sequence.ids
  second = write_cache(loaded, str(tmp_path / "b.cache"))
  with open(first, "rb") as f, open(second, "rb") as g:
    assert f.read() == g.read()


def test_broken_caches(tmp_path):
  with pytest.raises(IngestionError):
    read_cache(str(tmp_path / "absent.cache"))
  garbled = tmp_path / "garbled.cache"
  garbled.write_bytes(b"\xff\xfe not json\n")
  with pytest.raises(IngestionError):
    read_cache(str(garbled))


def test_recording_shape_checks():
  with pytest.raises(RejectedInputError):
    RawRecording(
      subject="S1",
      run="1",
      rate=30.0,
      channels=np.zeros((5, 2)),
      labels=np.zeros(4, dtype=np.int64),
    )
