# src/harbench/hypersearch.py
"""
Random hyperparameter search

Experiment i of a search draws its configuration and
its training seed from (master seed, i), so a search
is reproducible whatever order its experiments finish
in. Experiments run in a thread pool; finished
records go through a bounded queue to the single
task that owns the record sink.
"""

import asyncio
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from loguru import logger

from harbench.config import ProtocolSettings
from harbench.data import HarDataset
from harbench.errors import (
  DivergenceError,
  FrameTooShortError,
  RejectedConfigError,
  RejectedInputError,
)
from harbench.records import (
  ExperimentRecord,
  RecordKey,
  RecordSink,
)
from harbench.search_space import (
  Hyperparameters,
  SearchSpace,
  sample_config,
)
from harbench.training import build_model, train

#


@dataclass(frozen=True)
class ExperimentPlan:
  index: int
  hyper: Hyperparameters
  seed: int

  @property
  def key(self) -> RecordKey:
    return (
      self.hyper.family,
      self.hyper.config_hash(),
      self.seed,
    )


def experiment_seed(master_seed: int, index: int) -> int:
  """Training seed of experiment `index`."""
  sequence = np.random.SeedSequence([master_seed, index])
  return int(sequence.generate_state(1)[0])


def plan_experiments(
  space: SearchSpace, n: int, master_seed: int
) -> list[ExperimentPlan]:
  if n < 1:
    raise RejectedConfigError(
      f"Need at least one experiment, got {n}"
    )
  plans = []
  for index in range(n):
    rng = np.random.default_rng([master_seed, index, 0])
    plans.append(
      ExperimentPlan(
        index=index,
        hyper=sample_config(space, rng),
        seed=experiment_seed(master_seed, index),
      )
    )
  return plans


def run_experiment(
  plan: ExperimentPlan,
  dataset: HarDataset,
  protocol: ProtocolSettings | None = None,
  timeout_s: float = 0.0,
  include_null: bool = True,
) -> ExperimentRecord:
  """
  Build, train and score one configuration.

  Failures are recorded, not raised: an infeasible
  configuration is "rejected", a non-finite loss
  "diverged". Only "ok" records keep their scores.
  """
  hyper = plan.hyper
  base = {
    "family": hyper.family,
    "config_hash": hyper.config_hash(),
    "seed": plan.seed,
    "index": plan.index,
    "dataset": dataset.dataset_id,
    "config": hyper.to_dict(),
  }
  rng = np.random.default_rng(plan.seed)
  try:
    model = build_model(
      hyper,
      (dataset.window, dataset.channels),
      dataset.n_classes,
      rng,
    )
    result = train(
      model,
      dataset,
      hyper,
      protocol=protocol,
      seed=plan.seed,
      timeout_s=timeout_s,
      include_null=include_null,
    )
  except (FrameTooShortError, RejectedConfigError) as e:
    logger.warning(
      f"[{hyper.family} #{plan.index}] rejected: {e}"
    )
    return ExperimentRecord(
      **base, status="rejected", error=str(e)
    )
  except DivergenceError as e:
    logger.warning(
      f"[{hyper.family} #{plan.index}] diverged: {e}"
    )
    return ExperimentRecord(
      **base, status="diverged", error=str(e)
    )
  except RejectedInputError as e:
    logger.error(
      f"[{hyper.family} #{plan.index}] failed: {e}"
    )
    return ExperimentRecord(
      **base, status="rejected", error=str(e)
    )

  ok = result.status == "ok"
  scores = result.test_scores() if ok else {}
  validation = (
    result.validation.primary().mean_f1()
    if ok and result.validation is not None
    else 0.0
  )
  return ExperimentRecord(
    **base,
    status=result.status,
    test_mean_f1=float(scores.get("mean_f1", 0.0)),
    test_weighted_f1=float(scores.get("weighted_f1", 0.0)),
    test_binary_f1=float(scores.get("binary_f1", 0.0)),
    val_mean_f1=validation,
    best_epoch=result.best_epoch,
    epochs_run=result.epochs_run,
    wall_time=result.wall_time,
    history=[e.to_dict() for e in result.history],
    scores={k: float(v) for k, v in scores.items()},
  )


async def run_search(
  space: SearchSpace,
  dataset: HarDataset,
  n: int,
  parallelism: int,
  sink: RecordSink,
  master_seed: int = 0,
  protocol: ProtocolSettings | None = None,
  timeout_s: float = 0.0,
  include_null: bool = True,
) -> list[ExperimentRecord]:
  """
  Run `n` seeded experiments, at most `parallelism`
  at a time, and append each result to `sink`.

  Experiments whose key the sink already holds are
  skipped, so a killed search can be resumed by
  running it again with the same arguments.

  Returns
  -------
  list[ExperimentRecord]
      The records written by this call, by index.

  Raises
  ------
  SinkWriteError
      If a record cannot be written. Records already
      appended stay intact.
  Exception
      Whatever an experiment raised outside the
      recorded failure kinds, once the records queued
      before it are appended.
  """
  if parallelism < 1:
    raise RejectedConfigError(
      f"Parallelism must be ≥ 1, got {parallelism}"
    )
  plans = plan_experiments(space, n, master_seed)
  pending = [p for p in plans if p.key not in sink]
  if len(pending) < len(plans):
    logger.info(
      f"[{space.family}] {len(plans) - len(pending)} of "
      f"{len(plans)} experiments already recorded"
    )
  if not pending:
    return []

  loop = asyncio.get_running_loop()
  # Holds records, or the exception that ended a
  # producer.
  queue: asyncio.Queue[ExperimentRecord | Exception] = (
    asyncio.Queue(maxsize=parallelism)
  )
  slots = asyncio.Semaphore(parallelism)
  executor = ThreadPoolExecutor(max_workers=parallelism)

  async def produce(plan: ExperimentPlan) -> None:
    item: ExperimentRecord | Exception
    async with slots:
      try:
        item = await loop.run_in_executor(
          executor,
          run_experiment,
          plan,
          dataset,
          protocol,
          timeout_s,
          include_null,
        )
      except Exception as e:
        logger.error(
          f"[{space.family} #{plan.index}] crashed: {e!r}"
        )
        item = e
    await queue.put(item)

  async def consume() -> list[ExperimentRecord]:
    written = []
    for done in range(1, len(pending) + 1):
      record = await queue.get()
      if isinstance(record, Exception):
        raise record
      sink.append(record)
      written.append(record)
      logger.info(
        f"[{space.family}] {done}/{len(pending)} "
        f"#{record.index} {record.status} "
        f"F_m {record.test_mean_f1:.4f}"
      )
    return written

  producers = [
    asyncio.create_task(produce(p)) for p in pending
  ]
  try:
    written = await consume()
  finally:
    for task in producers:
      task.cancel()
    await asyncio.gather(*producers, return_exceptions=True)
    executor.shutdown(wait=True, cancel_futures=True)
  return sorted(written, key=lambda r: r.index)


#


@dataclass
class ScoreSummary:
  """
  Distribution of one score over a family's records.

  `cdf` holds (score, fraction of records ≤ score)
  points in increasing score order.
  """

  peak: float
  median: float
  delta: float
  cdf: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class FamilySummary:
  family: str
  count: int
  mean_f1: ScoreSummary
  weighted_f1: ScoreSummary
  binary_f1: ScoreSummary | None = None


def summarize_scores(scores: list[float]) -> ScoreSummary:
  if not scores:
    raise RejectedInputError("No scores to summarise")
  ordered = np.sort(np.asarray(scores, dtype=np.float64))
  peak = float(ordered[-1])
  median = float(np.median(ordered))
  fractions = np.arange(1, ordered.size + 1) / ordered.size
  return ScoreSummary(
    peak=peak,
    median=median,
    delta=peak - median,
    cdf=list(zip(ordered.tolist(), fractions.tolist())),
  )


def summarize(
  records: list[ExperimentRecord],
) -> dict[str, FamilySummary]:
  """
  Peak, median, peak − median and CDF points of the
  test F_m and F_w per family, and of the binary F_1
  when any run scored two-class data. Failed runs
  count with score 0.
  """
  if not records:
    raise RejectedInputError("No records to summarise")
  by_family: dict[str, list[ExperimentRecord]] = {}
  for record in records:
    by_family.setdefault(record.family, []).append(record)
  return {
    family: FamilySummary(
      family=family,
      count=len(group),
      mean_f1=summarize_scores([r.score() for r in group]),
      weighted_f1=summarize_scores(
        [r.score(weighted=True) for r in group]
      ),
      binary_f1=(
        summarize_scores([r.test_binary_f1 for r in group])
        if any("binary_f1" in r.scores for r in group)
        else None
      ),
    )
    for family, group in sorted(by_family.items())
  }
