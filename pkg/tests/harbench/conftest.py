import pytest

from harbench.config import ProtocolSettings
from harbench.data import standardize
from harbench.synth import SynthSpec, synthesize


@pytest.fixture(scope="session")
def tiny_raw():
  """Three classes, two channels, 16 Hz."""
  spec = SynthSpec(
    n_classes=3,
    channels=2,
    rate=16.0,
    train_samples=4000,
    validation_samples=800,
    test_samples=800,
    train_recordings=2,
    noise=0.1,
    seed=3,
  )
  return synthesize(spec)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_raw):
  dataset, _, _ = standardize(tiny_raw)
  return dataset


@pytest.fixture
def short_protocol():
  return ProtocolSettings(
    min_epochs=2, max_epochs=4, patience=1
  )
