# src/harbench/records.py
"""
Experiment records

A record store is a newline-delimited JSON file. The
first line is the schema header; every further line
is one immutable `ExperimentRecord`, keyed by
(family, config hash, seed). Appends are flushed and
fsynced one at a time so an interrupted search leaves
only whole lines behind, and a restarted search skips
the keys already present.
"""

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any

from loguru import logger

from harbench.errors import RejectedInputError, SinkWriteError

#

RECORD_SCHEMA = "harbench.records"
RECORD_VERSION = 1

RecordKey = tuple[str, str, int]

#


@dataclass(frozen=True)
class ExperimentRecord:
  """
  Attributes
  ----------
  config : dict[str, Any]
      Hyperparameters, as `Hyperparameters.to_dict`.
  history : list[dict[str, float]]
      Per-epoch training loss and validation scores.
  test_mean_f1, test_weighted_f1 : float
      Primary test scores; 0 unless status is "ok".
  test_binary_f1 : float
      f1 of the positive class on two-class data.
  scores : dict[str, float]
      Every score `Scores.to_dict` reports, including
      the per-sample ones of sample-wise models.
  """

  family: str
  config_hash: str
  seed: int
  index: int
  dataset: str
  config: dict[str, Any]
  status: str
  test_mean_f1: float = 0.0
  test_weighted_f1: float = 0.0
  test_binary_f1: float = 0.0
  val_mean_f1: float = 0.0
  best_epoch: int = 0
  epochs_run: int = 0
  wall_time: float = 0.0
  history: list[dict[str, float]] = field(default_factory=list)
  scores: dict[str, float] = field(default_factory=dict)
  error: str = ""

  @property
  def key(self) -> RecordKey:
    return (self.family, self.config_hash, self.seed)

  def score(self, weighted: bool = False) -> float:
    return (
      self.test_weighted_f1 if weighted else self.test_mean_f1
    )

  def to_json(self) -> str:
    return json.dumps(asdict(self), sort_keys=True)

  @classmethod
  def from_dict(cls, values: dict[str, Any]) -> "ExperimentRecord":
    try:
      return cls(**values)
    except TypeError as e:
      raise RejectedInputError(f"Bad record: {e}") from e


def _header() -> str:
  return json.dumps(
    {"schema": RECORD_SCHEMA, "version": RECORD_VERSION},
    sort_keys=True,
  )


def read_records(path: str) -> list[ExperimentRecord]:
  """
  All records of a store. A trailing partial line,
  left by a killed writer, is ignored.

  Raises
  ------
  RejectedInputError
      If the file is not a record store of a
      supported version.
  """
  with open(path, "r", encoding="utf-8") as f:
    lines = f.read().split("\n")
  if not lines or not lines[0].strip():
    return []
  header = json.loads(lines[0])
  if header.get("schema") != RECORD_SCHEMA:
    raise RejectedInputError(f"{path} is not a record store")
  if header.get("version") != RECORD_VERSION:
    raise RejectedInputError(
      f"{path} has record version {header.get('version')}, "
      f"expected {RECORD_VERSION}"
    )
  records = []
  body = lines[1:]
  for number, line in enumerate(body, start=2):
    if not line.strip():
      continue
    try:
      values = json.loads(line)
    except json.JSONDecodeError:
      if number == len(lines):
        logger.warning(
          f"{path}: ignoring partial last line {number}"
        )
        continue
      raise RejectedInputError(
        f"{path}: line {number} is not JSON"
      )
    records.append(ExperimentRecord.from_dict(values))
  return records


class RecordSink:
  """
  Append-only writer of a record store.

  Only one task should own a sink; `append` is not
  synchronised.
  """

  def __init__(self, path: str) -> None:
    self.path = path
    self.keys: set[RecordKey] = set()
    try:
      directory = os.path.dirname(path)
      if directory:
        os.makedirs(directory, exist_ok=True)
      if os.path.isfile(path):
        self._trim_partial()
      # a header cut short trims to nothing
      if os.path.isfile(path) and os.path.getsize(path):
        for record in read_records(path):
          self.keys.add(record.key)
        logger.info(
          f"Resuming {path}: {len(self.keys)} records"
        )
      else:
        with open(path, "w", encoding="utf-8") as f:
          f.write(_header() + "\n")
    except OSError as e:
      raise SinkWriteError(
        f"Cannot open record store {path}: {e}"
      ) from e

  def _trim_partial(self) -> None:
    """Drop bytes after the last newline."""
    with open(self.path, "rb+") as f:
      data = f.read()
      end = data.rfind(b"\n") + 1
      if end < len(data):
        f.truncate(end)

  def __contains__(self, key: RecordKey) -> bool:
    return key in self.keys

  def __len__(self) -> int:
    return len(self.keys)

  def append(self, record: ExperimentRecord) -> bool:
    """
    Persist `record` unless its key is present.

    Returns
    -------
    bool
        Whether the record was written.

    Raises
    ------
    SinkWriteError
        If the record could not be written.
    """
    if record.key in self.keys:
      logger.debug(f"Skipping duplicate record {record.key}")
      return False
    line = record.to_json()
    try:
      with open(self.path, "a", encoding="utf-8") as f:
        f.write(line + "\n")
        f.flush()
        os.fsync(f.fileno())
    except OSError as e:
      raise SinkWriteError(
        f"Cannot append to {self.path}: {e}"
      ) from e
    self.keys.add(record.key)
    logger.trace(f"Recorded {line}")
    return True
