# src/harbench/config.py
"""
Configuration

Environment-driven defaults (read once, after
loading a `.env` file) plus the layered run
configuration used by the CLI: built-in defaults,
then an optional YAML file, then command-line flags.
"""

import os
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

import yaml
from dotenv import load_dotenv
from loguru import logger

from harbench.errors import RejectedConfigError

#

_ = load_dotenv()

HARBENCH_DATA_DIR = os.getenv(
  "HARBENCH_DATA_DIR", "data"
)
HARBENCH_CACHE_DIR = os.getenv(
  "HARBENCH_CACHE_DIR", "cache"
)
HARBENCH_OUT_DIR = os.getenv("HARBENCH_OUT_DIR", "runs")
TEMPLATE_DIR = os.getenv("TEMPLATE_DIR", "templates")
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

DEFAULT_SEED = int(os.getenv("DEFAULT_SEED", "1337"))
DEFAULT_PARALLELISM = int(
  os.getenv("DEFAULT_PARALLELISM", "2")
)
EXPERIMENT_TIMEOUT_S = float(
  os.getenv("EXPERIMENT_TIMEOUT_S", "0")
)
BATCH_SIZE = int(os.getenv("BATCH_SIZE", "64"))
STREAM_COUNT = int(os.getenv("STREAM_COUNT", "64"))
DESK_SCALE_EXPERIMENTS = int(
  os.getenv("DESK_SCALE_EXPERIMENTS", "20")
)
FOREST_TREES = int(os.getenv("FOREST_TREES", "30"))

#


@dataclass
class ProtocolSettings:
  """
  Epoch limits of the train/validate/early-stop
  protocol.

  Attributes
  ----------
  min_epochs : int
      Epochs always run before stopping is allowed.
  max_epochs : int
      Hard upper bound on epochs.
  patience : int
      Epochs without a validation increase (counted
      from `min_epochs` at the earliest) before
      stopping.
  """

  min_epochs: int = 30
  max_epochs: int = 300
  patience: int = 10

  def __post_init__(self) -> None:
    if self.min_epochs < 1 or self.patience < 1:
      raise RejectedConfigError(
        "min_epochs and patience must be positive"
      )
    if self.max_epochs < self.min_epochs:
      raise RejectedConfigError(
        f"max_epochs {self.max_epochs} < "
        f"min_epochs {self.min_epochs}"
      )


@dataclass
class RunConfig:
  """
  Resolved configuration of one CLI invocation.

  Every field has a built-in default; `merge_config`
  overlays a YAML file and explicit flags on top.
  """

  dataset: str = "synth"
  family: str = "dnn"
  seed: int = DEFAULT_SEED
  n: int = DESK_SCALE_EXPERIMENTS
  parallelism: int = DEFAULT_PARALLELISM
  out: str = HARBENCH_OUT_DIR
  root: str = HARBENCH_DATA_DIR
  cache: str | None = None
  records: str | None = None
  literal_eq: bool = False
  include_null: bool = True
  full_scale: bool = False
  timeout_s: float = EXPERIMENT_TIMEOUT_S
  trees: int = FOREST_TREES
  protocol: ProtocolSettings = field(
    default_factory=ProtocolSettings
  )
  hyper: dict[str, Any] = field(default_factory=dict)

  def to_dict(self) -> dict[str, Any]:
    return {
      "dataset": self.dataset,
      "family": self.family,
      "seed": self.seed,
      "n": self.n,
      "parallelism": self.parallelism,
      "out": self.out,
      "root": self.root,
      "cache": self.cache,
      "records": self.records,
      "literal_eq": self.literal_eq,
      "include_null": self.include_null,
      "full_scale": self.full_scale,
      "timeout_s": self.timeout_s,
      "trees": self.trees,
      "protocol": {
        "min_epochs": self.protocol.min_epochs,
        "max_epochs": self.protocol.max_epochs,
        "patience": self.protocol.patience,
      },
      "hyper": dict(self.hyper),
    }


def load_config_file(path: str) -> dict[str, Any]:
  """
  Load a YAML configuration file.

  Parameters
  ----------
  path : str
      Path of the YAML file.

  Returns
  -------
  dict[str, Any]
      The mapping at the top of the file (empty if
      the file is empty).
  """
  with open(path, "r", encoding="utf-8") as f:
    loaded = yaml.safe_load(f)
  if loaded is None:
    return {}
  if not isinstance(loaded, dict):
    raise RejectedConfigError(
      f"Config file {path} must contain a mapping"
    )
  logger.debug(f"Loaded config file {path}")
  return loaded


def merge_config(
  file_values: Mapping[str, Any] | None = None,
  flag_values: Mapping[str, Any] | None = None,
) -> RunConfig:
  """
  Merge defaults < config file < flags.

  Flags whose value is None are treated as unset.
  """
  config = RunConfig()
  known = set(config.to_dict())
  for layer in (file_values or {}, flag_values or {}):
    for key, value in layer.items():
      if value is None:
        continue
      key = key.replace("-", "_")
      if key not in known:
        raise RejectedConfigError(
          f"Unknown configuration key: {key}"
        )
      if key == "protocol":
        current = config.protocol
        config.protocol = ProtocolSettings(
          min_epochs=int(
            value.get("min_epochs", current.min_epochs)
          ),
          max_epochs=int(
            value.get("max_epochs", current.max_epochs)
          ),
          patience=int(
            value.get("patience", current.patience)
          ),
        )
      elif key == "hyper":
        config.hyper = {**config.hyper, **dict(value)}
      else:
        default = getattr(RunConfig(), key)
        setattr(config, key, _coerce(default, value))
  logger.trace(f"Resolved config: {config.to_dict()}")
  return config


def _coerce(default: Any, value: Any) -> Any:
  if isinstance(default, bool):
    if isinstance(value, str):
      return value.strip().lower() in (
        "1",
        "true",
        "yes",
      )
    return bool(value)
  if isinstance(default, int):
    return int(value)
  if isinstance(default, float):
    return float(value)
  return value
