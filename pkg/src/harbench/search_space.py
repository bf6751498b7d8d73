# src/harbench/search_space.py
"""
Hyperparameter search space

Bounds, sampling scale and category of every
hyperparameter of the five model families, and the
`Hyperparameters` record a sampled configuration is
stored as.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Literal

import numpy as np

from harbench.errors import RejectedConfigError

#

Family = Literal["dnn", "cnn", "lstm-f", "lstm-s", "blstm-s"]
FAMILIES: tuple[Family, ...] = (
  "dnn",
  "cnn",
  "lstm-f",
  "lstm-s",
  "blstm-s",
)
RECURRENT: tuple[Family, ...] = (
  "lstm-f",
  "lstm-s",
  "blstm-s",
)
SAMPLE_FAMILIES: tuple[Family, ...] = ("lstm-s", "blstm-s")

Category = Literal[
  "learning", "regularisation", "architecture"
]

PARAM_CATEGORIES: dict[str, Category] = {
  "lr": "learning",
  "lr_decay": "learning",
  "length": "learning",
  "momentum": "regularisation",
  "max_in": "regularisation",
  "p_carry": "regularisation",
  "layers": "architecture",
  "units": "architecture",
  "conv_layers": "architecture",
  "kw1": "architecture",
  "kw2": "architecture",
  "kw3": "architecture",
  "nf1": "architecture",
  "nf2": "architecture",
  "nf3": "architecture",
}

# Experiments per family at full scale.
FULL_SCALE_COUNTS: dict[Family, int] = {
  "dnn": 1000,
  "cnn": 256,
  "lstm-f": 128,
  "lstm-s": 128,
  "blstm-s": 128,
}

#


@dataclass(frozen=True)
class ParamRange:
  low: float
  high: float
  log: bool = False
  integer: bool = False

  @property
  def fixed(self) -> bool:
    return self.low == self.high


@dataclass
class Hyperparameters:
  """
  One model configuration. Fields a family does not
  use stay None.
  """

  family: Family
  lr: float
  lr_decay: float | None = None
  momentum: float | None = None
  max_in: float | None = None
  layers: int | None = None
  units: int | None = None
  conv_layers: int | None = None
  kw1: int | None = None
  kw2: int | None = None
  kw3: int | None = None
  nf1: int | None = None
  nf2: int | None = None
  nf3: int | None = None
  length: int | None = None
  p_carry: float | None = None

  def __post_init__(self) -> None:
    if self.family not in FAMILIES:
      raise RejectedConfigError(
        f"Unknown model family {self.family}"
      )

  def to_dict(self) -> dict[str, Any]:
    return {k: v for k, v in asdict(self).items() if v is not None}

  @classmethod
  def from_dict(cls, values: dict[str, Any]) -> "Hyperparameters":
    if "family" not in values:
      raise RejectedConfigError("Hyperparameters need a family")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
      raise RejectedConfigError(
        f"Unknown hyperparameters: {sorted(unknown)}"
      )
    space = SearchSpace.for_family(values["family"])
    coerced: dict[str, Any] = {"family": values["family"]}
    for name, value in values.items():
      if name == "family" or value is None:
        continue
      bounds = space.params.get(name)
      if bounds is not None and bounds.integer:
        coerced[name] = int(value)
      else:
        coerced[name] = float(value)
    return cls(**coerced)

  def with_overrides(
    self, overrides: dict[str, Any]
  ) -> "Hyperparameters":
    return Hyperparameters.from_dict(
      {**self.to_dict(), **overrides}
    )

  def config_hash(self) -> str:
    """sha256 of the canonical JSON of the config."""
    canonical = json.dumps(
      self.to_dict(), sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(
      canonical.encode("utf-8")
    ).hexdigest()

  def kernel_widths(self) -> list[int]:
    widths = [self.kw1, self.kw2, self.kw3]
    return [int(w) for w in widths[: self.conv_layers or 0] if w]

  def filter_counts(self) -> list[int]:
    counts = [self.nf1, self.nf2, self.nf3]
    return [int(n) for n in counts[: self.conv_layers or 0] if n]


_DNN: dict[str, ParamRange] = {
  "lr": ParamRange(1e-4, 1e-1, log=True),
  "lr_decay": ParamRange(1e-5, 1e-3, log=True),
  "momentum": ParamRange(0.0, 0.99),
  "max_in": ParamRange(0.5, 4.0),
  "layers": ParamRange(1, 5, integer=True),
  "units": ParamRange(64, 2048, integer=True),
}

_CNN: dict[str, ParamRange] = {
  **_DNN,
  "layers": ParamRange(1, 3, integer=True),
  "conv_layers": ParamRange(1, 3, integer=True),
  "kw1": ParamRange(3, 9, integer=True),
  "kw2": ParamRange(3, 5, integer=True),
  "kw3": ParamRange(3, 3, integer=True),
  "nf1": ParamRange(16, 128, integer=True),
  "nf2": ParamRange(16, 128, integer=True),
  "nf3": ParamRange(16, 128, integer=True),
}


def _recurrent(
  length: tuple[int, int], layers: int
) -> dict[str, ParamRange]:
  return {
    "lr": ParamRange(1e-3, 1e-1, log=True),
    "length": ParamRange(*length, integer=True),
    "max_in": ParamRange(0.5, 4.0),
    "p_carry": ParamRange(0.0, 1.0),
    "layers": ParamRange(1, layers, integer=True),
    "units": ParamRange(64, 384, integer=True),
  }


_SPACES: dict[Family, dict[str, ParamRange]] = {
  "dnn": _DNN,
  "cnn": _CNN,
  "lstm-f": _recurrent((8, 64), 3),
  "lstm-s": _recurrent((32, 196), 3),
  "blstm-s": _recurrent((32, 196), 1),
}

DEFAULT_HYPER: dict[Family, dict[str, Any]] = {
  "dnn": {
    "lr": 0.01,
    "lr_decay": 1e-4,
    "momentum": 0.9,
    "max_in": 2.0,
    "layers": 2,
    "units": 256,
  },
  "cnn": {
    "lr": 0.01,
    "lr_decay": 1e-4,
    "momentum": 0.9,
    "max_in": 2.0,
    "layers": 1,
    "units": 128,
    "conv_layers": 2,
    "kw1": 5,
    "kw2": 3,
    "kw3": 3,
    "nf1": 32,
    "nf2": 32,
    "nf3": 32,
  },
  "lstm-f": {
    "lr": 0.02,
    "length": 16,
    "max_in": 2.0,
    "p_carry": 0.5,
    "layers": 1,
    "units": 64,
  },
  "lstm-s": {
    "lr": 0.02,
    "length": 64,
    "max_in": 2.0,
    "p_carry": 0.5,
    "layers": 1,
    "units": 64,
  },
  "blstm-s": {
    "lr": 0.02,
    "length": 64,
    "max_in": 2.0,
    "p_carry": 0.0,
    "layers": 1,
    "units": 64,
  },
}


@dataclass
class SearchSpace:
  family: Family
  params: dict[str, ParamRange]

  @classmethod
  def for_family(cls, family: str) -> "SearchSpace":
    if family not in _SPACES:
      raise RejectedConfigError(
        f"Unknown model family {family}"
      )
    return cls(family, dict(_SPACES[family]))  # type: ignore[arg-type]

  def dimensions(self) -> list[str]:
    """Parameters that actually vary."""
    return [
      name
      for name, bounds in self.params.items()
      if not bounds.fixed
    ]

  def contains(self, hyper: Hyperparameters) -> bool:
    values = hyper.to_dict()
    for name, bounds in self.params.items():
      value = values.get(name)
      if value is None:
        return False
      if not bounds.low <= value <= bounds.high:
        return False
    return True


def default_hyperparameters(family: str) -> Hyperparameters:
  if family not in DEFAULT_HYPER:
    raise RejectedConfigError(
      f"Unknown model family {family}"
    )
  return Hyperparameters.from_dict(
    {"family": family, **DEFAULT_HYPER[family]}  # type: ignore[index]
  )


def sample_config(
  space: SearchSpace, rng: np.random.Generator
) -> Hyperparameters:
  """
  Draw one configuration.

  Log-scaled parameters are 10^u with u uniform on
  [log10 low, log10 high]; integers are uniform on
  the inclusive range; reals are uniform.
  """
  values: dict[str, Any] = {"family": space.family}
  for name, bounds in space.params.items():
    if bounds.fixed:
      values[name] = (
        int(bounds.low) if bounds.integer else bounds.low
      )
    elif bounds.log:
      exponent = rng.uniform(
        math.log10(bounds.low), math.log10(bounds.high)
      )
      values[name] = float(10.0**exponent)
    elif bounds.integer:
      values[name] = int(
        rng.integers(int(bounds.low), int(bounds.high) + 1)
      )
    else:
      values[name] = float(
        rng.uniform(bounds.low, bounds.high)
      )
  return Hyperparameters.from_dict(values)
