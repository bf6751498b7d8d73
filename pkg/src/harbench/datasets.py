# src/harbench/datasets.py
"""
Readers for the three benchmark datasets

Each dataset is described by a `DatasetProfile`:
which whitespace-separated text files make up each
split, which columns are channels, which column is
the label and how raw labels map to class indices.
Rows whose label is not in the map are removed and
the file is cut into contiguous runs at the gaps, so
no frame spans removed rows.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from loguru import logger

from harbench.data import (
  NULL_CLASS,
  SPLIT_NAMES,
  HarDataset,
  RawRecording,
  downsample,
)
from harbench.errors import (
  IngestionError,
  RejectedConfigError,
)

#

DATASET_IDS = ("opp", "pamap2", "dg", "synth")

# (subject, run, path relative to the dataset root)
RunFile = tuple[str, str, str]


@dataclass(frozen=True)
class DatasetProfile:
  """
  Attributes
  ----------
  columns : tuple[int, ...]
      0-based channel columns of the text files.
  label_column : int
      0-based column holding the raw annotation.
  label_map : tuple[tuple[int, str], ...]
      Raw annotation and class name, in class index
      order. Rows with other annotations are removed.
  files : dict[str, tuple[RunFile, ...]]
      Run files of each split.
  """

  dataset_id: str
  source_rate: float
  rate: float
  window: int
  step: int
  columns: tuple[int, ...]
  label_column: int
  label_map: tuple[tuple[int, str], ...]
  files: dict[str, tuple[RunFile, ...]]

  def __post_init__(self) -> None:
    if self.rate > self.source_rate:
      raise RejectedConfigError(
        f"{self.dataset_id}: rate {self.rate} Hz above "
        f"source rate {self.source_rate} Hz"
      )
    if self.window < 1 or self.step < 1:
      raise RejectedConfigError(
        f"{self.dataset_id}: window and step must be ≥ 1"
      )
    missing = [s for s in SPLIT_NAMES if s not in self.files]
    if missing:
      raise RejectedConfigError(
        f"{self.dataset_id}: no files for {missing}"
      )

  @property
  def class_names(self) -> list[str]:
    return [name for _, name in self.label_map]

  @property
  def channels(self) -> int:
    return len(self.columns)

  def paths(self, root: str) -> list[str]:
    return [
      os.path.join(root, rel)
      for split in SPLIT_NAMES
      for _, _, rel in self.files[split]
    ]


#
# Opportunity

# 1-based as in the column legend. Accelerometers
# on the arms, hands and back (body-worn, then the
# IMUs), and every channel of both shoe IMUs.
# Knee and hip accelerometers are left out.
_OPP_BODY_ACC = (8, 11, 14, 17, 23, 26, 29, 32, 35)
_OPP_IMU_ACC = (38, 51, 64, 77, 90)
_OPP_COLUMNS = (
  [
    start + axis
    for start in _OPP_BODY_ACC + _OPP_IMU_ACC
    for axis in range(3)
  ]
  + [*range(103, 135)]
)
# ML_Both_Arms
_OPP_LABEL_COLUMN = 250

_OPP_GESTURES = (
  (0, NULL_CLASS),
  (406516, "Open Door 1"),
  (406517, "Open Door 2"),
  (404516, "Close Door 1"),
  (404517, "Close Door 2"),
  (406520, "Open Fridge"),
  (404520, "Close Fridge"),
  (406505, "Open Dishwasher"),
  (404505, "Close Dishwasher"),
  (406519, "Open Drawer 1"),
  (404519, "Close Drawer 1"),
  (406511, "Open Drawer 2"),
  (404511, "Close Drawer 2"),
  (406508, "Open Drawer 3"),
  (404508, "Close Drawer 3"),
  (408512, "Clean Table"),
  (407521, "Drink from Cup"),
  (405506, "Toggle Switch"),
)


def _opp_run(subject: int, run: str) -> RunFile:
  name = f"S{subject}-{'Drill' if run == 'drill' else 'ADL' + run}"
  return (f"S{subject}", run, f"dataset/{name}.dat")


_OPP_VALIDATION = {(1, "2")}
_OPP_TEST = {(2, "4"), (2, "5"), (3, "4"), (3, "5")}
_OPP_ALL = [
  (subject, run)
  for subject in range(1, 5)
  for run in ("1", "2", "3", "4", "5", "drill")
]

OPPORTUNITY = DatasetProfile(
  dataset_id="opp",
  source_rate=30.0,
  rate=30.0,
  window=30,
  step=15,
  columns=tuple(c - 1 for c in _OPP_COLUMNS),
  label_column=_OPP_LABEL_COLUMN - 1,
  label_map=_OPP_GESTURES,
  files={
    "train": tuple(
      _opp_run(s, r)
      for s, r in _OPP_ALL
      if (s, r) not in _OPP_VALIDATION | _OPP_TEST
    ),
    "validation": tuple(
      _opp_run(s, r) for s, r in sorted(_OPP_VALIDATION)
    ),
    "test": tuple(_opp_run(s, r) for s, r in sorted(_OPP_TEST)),
  },
)

#
# PAMAP2

_PAMAP2_ACTIVITIES = (
  (1, "lying"),
  (2, "sitting"),
  (3, "standing"),
  (4, "walking"),
  (5, "running"),
  (6, "cycling"),
  (7, "Nordic walking"),
  (12, "ascending stairs"),
  (13, "descending stairs"),
  (16, "vacuum cleaning"),
  (17, "ironing"),
  (24, "rope jumping"),
)

# Subjects that also recorded optional activities.
_PAMAP2_OPTIONAL = (101, 105, 106, 108, 109)


def _pamap2_runs(subjects: list[int]) -> tuple[RunFile, ...]:
  runs: list[RunFile] = []
  for subject in subjects:
    runs.append(
      (
        str(subject),
        "1",
        f"Protocol/subject{subject}.dat",
      )
    )
    if subject in _PAMAP2_OPTIONAL:
      runs.append(
        (
          str(subject),
          "2",
          f"Optional/subject{subject}.dat",
        )
      )
  return tuple(runs)


PAMAP2 = DatasetProfile(
  dataset_id="pamap2",
  source_rate=100.0,
  rate=100.0 / 3.0,
  window=170,
  step=33,
  # heart rate plus three 17-column IMUs
  columns=tuple(range(2, 54)),
  label_column=1,
  label_map=_PAMAP2_ACTIVITIES,
  files={
    "train": _pamap2_runs([101, 102, 103, 104, 107, 108, 109]),
    "validation": _pamap2_runs([105]),
    "test": _pamap2_runs([106]),
  },
)

#
# Daphnet Gait

_DG_RUNS = (
  (1, 1),
  (1, 2),
  (2, 1),
  (2, 2),
  (3, 1),
  (3, 2),
  (3, 3),
  (4, 1),
  (5, 1),
  (5, 2),
  (6, 1),
  (6, 2),
  (7, 1),
  (7, 2),
  (8, 1),
  (9, 1),
  (10, 1),
)


def _dg_run(subject: int, run: int) -> RunFile:
  return (
    f"S{subject:02d}",
    str(run),
    f"dataset/S{subject:02d}R{run:02d}.txt",
  )


_DG_VALIDATION = {(9, 1)}
_DG_TEST = {(2, 1), (2, 2)}

DAPHNET = DatasetProfile(
  dataset_id="dg",
  source_rate=64.0,
  rate=32.0,
  window=32,
  step=16,
  # ankle, upper leg and trunk accelerometers
  columns=tuple(range(1, 10)),
  label_column=10,
  # annotation 0 is outside the experiment protocol
  label_map=((1, "No freeze"), (2, "Freeze")),
  files={
    "train": tuple(
      _dg_run(s, r)
      for s, r in _DG_RUNS
      if (s, r) not in _DG_VALIDATION | _DG_TEST
    ),
    "validation": tuple(
      _dg_run(s, r) for s, r in sorted(_DG_VALIDATION)
    ),
    "test": tuple(_dg_run(s, r) for s, r in sorted(_DG_TEST)),
  },
)

PROFILES: dict[str, DatasetProfile] = {
  "opp": OPPORTUNITY,
  "pamap2": PAMAP2,
  "dg": DAPHNET,
}

#


def get_profile(dataset_id: str) -> DatasetProfile:
  if dataset_id not in PROFILES:
    raise RejectedConfigError(
      f"No file reader for dataset {dataset_id}"
    )
  return PROFILES[dataset_id]


def read_table(path: str, min_columns: int) -> pd.DataFrame:
  """
  Read one whitespace-separated recording.

  Raises
  ------
  IngestionError
      If the file is missing, unparsable or narrower
      than `min_columns`.
  """
  if not os.path.isfile(path):
    raise IngestionError(f"Missing {path}", [path])
  try:
    table = pd.read_csv(
      path,
      sep=r"\s+",
      header=None,
      dtype=np.float64,
    )
  except (ValueError, pd.errors.ParserError) as e:
    raise IngestionError(
      f"Cannot parse {path}: {e}", [path]
    ) from e
  if table.shape[1] < min_columns:
    raise IngestionError(
      f"{path} has {table.shape[1]} columns, "
      f"expected at least {min_columns}",
      [path],
    )
  return table


def fill_gaps(table: pd.DataFrame, name: str) -> pd.DataFrame:
  """
  Linear interpolation of missing values; leading and
  trailing gaps take the nearest value. Channels that
  are missing throughout become 0.
  """
  filled = table.interpolate(
    method="linear", limit_direction="both"
  )
  empty = filled.columns[filled.isna().all()].tolist()
  if empty:
    logger.warning(
      f"{name}: channels {empty} are missing "
      "throughout; filled with 0"
    )
    filled = filled.fillna(0.0)
  return filled


def _contiguous(mask: np.ndarray) -> list[tuple[int, int]]:
  """[start, end) ranges of True runs in `mask`."""
  edges = np.diff(mask.astype(np.int8), prepend=0, append=0)
  starts = np.flatnonzero(edges == 1)
  ends = np.flatnonzero(edges == -1)
  return list(zip(starts.tolist(), ends.tolist()))


def read_run(
  profile: DatasetProfile, root: str, run: RunFile
) -> list[RawRecording]:
  """
  Recordings of one run file, at the profile rate.
  """
  subject, run_id, rel = run
  path = os.path.join(root, rel)
  needed = max(*profile.columns, profile.label_column) + 1
  table = read_table(path, needed)
  raw_labels = table.iloc[:, profile.label_column]
  # a missing annotation cannot be interpolated
  raw_labels = raw_labels.fillna(-1).astype(np.int64)
  channels = fill_gaps(
    table.iloc[:, list(profile.columns)], rel
  ).to_numpy(dtype=np.float64)

  to_class = {raw: c for c, (raw, _) in enumerate(profile.label_map)}
  labels = raw_labels.map(to_class)
  kept = labels.notna().to_numpy()
  labels = labels.fillna(-1).to_numpy(dtype=np.int64)

  recordings = []
  pieces = _contiguous(kept)
  for k, (start, end) in enumerate(pieces):
    rec = RawRecording(
      subject=subject,
      run=run_id if len(pieces) == 1 else f"{run_id}.{k}",
      rate=profile.source_rate,
      channels=channels[start:end],
      labels=labels[start:end],
      provenance=rel,
    )
    recordings.append(downsample(rec, profile.rate))
  logger.debug(
    f"{rel}: {len(table)} rows, {int(kept.sum())} kept "
    f"in {len(pieces)} runs"
  )
  return recordings


def load_dataset(
  dataset_id: str,
  root: str,
  profile: DatasetProfile | None = None,
  parallelism: int = 1,
) -> HarDataset:
  """
  Read every run file of a dataset.

  Parameters
  ----------
  dataset_id : str
      One of "opp", "pamap2", "dg".
  root : str
      Directory holding the dataset as distributed.
  profile : DatasetProfile, optional
      Replaces the built-in profile of `dataset_id`.
  parallelism : int
      Files read concurrently.

  Raises
  ------
  IngestionError
      Listing every missing run file, before any file
      is read.
  """
  profile = profile or get_profile(dataset_id)
  missing = [
    p for p in profile.paths(root) if not os.path.isfile(p)
  ]
  if missing:
    raise IngestionError(
      f"{len(missing)} {profile.dataset_id} run files "
      f"missing under {root}: {', '.join(missing)}",
      missing,
    )
  runs = [
    (split, run)
    for split in SPLIT_NAMES
    for run in profile.files[split]
  ]
  with ThreadPoolExecutor(
    max_workers=max(1, parallelism)
  ) as executor:
    loaded = list(
      executor.map(
        lambda item: read_run(profile, root, item[1]), runs
      )
    )
  recordings: dict[str, list[RawRecording]] = {
    split: [] for split in SPLIT_NAMES
  }
  for (split, _), recs in zip(runs, loaded):
    recordings[split].extend(recs)
  dataset = HarDataset.from_recordings(
    dataset_id=profile.dataset_id,
    rate=profile.rate,
    class_names=profile.class_names,
    window=profile.window,
    step=profile.step,
    recordings=recordings,
  )
  for row in dataset.summary():
    logger.info(
      f"{profile.dataset_id} {row['split']}: "
      f"{row['samples']} samples, {row['frames']} frames"
    )
  return dataset


def load_opportunity(
  root: str, profile: DatasetProfile = OPPORTUNITY
) -> HarDataset:
  return load_dataset("opp", root, profile)


def load_pamap2(
  root: str, profile: DatasetProfile = PAMAP2
) -> HarDataset:
  return load_dataset("pamap2", root, profile)


def load_daphnet(
  root: str, profile: DatasetProfile = DAPHNET
) -> HarDataset:
  return load_dataset("dg", root, profile)


def with_window(
  profile: DatasetProfile, window: int, step: int
) -> DatasetProfile:
  """The profile with another framing."""
  return replace(profile, window=window, step=step)
