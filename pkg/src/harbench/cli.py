# src/harbench/cli.py
"""
Command-line entry point

  harbench ingest   --dataset opp --root data/opp --out cache
  harbench synth    --seed 0 --out cache
  harbench train    --family dnn --dataset synth --out runs/dnn
  harbench search   --family cnn --n 20 --parallelism 2 --out runs/cnn
  harbench analyze  --records runs/cnn/records.jsonl --out runs/cnn
  harbench report   --records runs/cnn/records.jsonl --out runs/cnn

Every subcommand writes `manifest.json` into its
output directory. Exit codes: 0 success, 1 usage,
2 data error, 3 numeric failure.
"""

import argparse
import asyncio
import json
import os
import sys
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
import yaml
from loguru import logger

from harbench import __version__
from harbench.config import (
  HARBENCH_CACHE_DIR,
  LOG_LEVEL,
  RunConfig,
  load_config_file,
  merge_config,
)
from harbench.data import (
  HarDataset,
  read_cache,
  standardize,
  write_cache,
)
from harbench.datasets import DATASET_IDS, load_dataset
from harbench.errors import (
  DivergenceError,
  FrameTooShortError,
  IngestionError,
  RejectedConfigError,
  RejectedInputError,
  SinkWriteError,
  UndefinedMetricError,
)
from harbench.fanova import MIN_RECORDS, analyze
from harbench.hypersearch import run_search
from harbench.params import save_checkpoint
from harbench.records import RecordSink, read_records
from harbench.report import (
  build_report,
  render_report,
  write_cdf_files,
  write_importance_file,
)
from harbench.search_space import (
  FAMILIES,
  FULL_SCALE_COUNTS,
  SearchSpace,
  default_hyperparameters,
)
from harbench.synth import SynthSpec, synthesize
from harbench.training import build_model, train

#

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

#


class UsageError(Exception):
  pass


class _Parser(argparse.ArgumentParser):
  def error(self, message: str) -> Any:  # type: ignore[override]
    self.print_usage(sys.stderr)
    raise UsageError(message)


@dataclass
class RunManifest:
  """
  Everything needed to repeat a run: the merged
  configuration with all defaults filled in, the
  master seed and the files written.
  """

  subcommand: str
  config: dict[str, Any]
  seed: int
  artifacts: dict[str, str] = field(default_factory=dict)
  details: dict[str, Any] = field(default_factory=dict)
  version: str = __version__

  def write(self, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
      json.dump(asdict(self), f, indent=2, sort_keys=True)
    return path


def _bool(value: str) -> bool:
  lowered = value.strip().lower()
  if lowered not in ("true", "false"):
    raise argparse.ArgumentTypeError(
      f"expected true or false, got {value}"
    )
  return lowered == "true"


def _common(parser: argparse.ArgumentParser) -> None:
  parser.add_argument("--config", help="YAML config file")
  parser.add_argument("--seed", type=int)
  parser.add_argument("--out")
  parser.add_argument(
    "--dataset", choices=DATASET_IDS
  )
  parser.add_argument("--root", help="dataset directory")
  parser.add_argument("--cache", help="dataset cache file")
  parser.add_argument("--records")
  parser.add_argument("--parallelism", type=int)
  parser.add_argument(
    "--literal-eq",
    action="store_const",
    const=True,
    help="report doubled F1 scores (leading 2 on f1)",
  )
  parser.add_argument(
    "--include-null",
    type=_bool,
    metavar="{true,false}",
  )


def _protocol_flags(parser: argparse.ArgumentParser) -> None:
  parser.add_argument("--min-epochs", type=int)
  parser.add_argument("--max-epochs", type=int)
  parser.add_argument("--patience", type=int)
  parser.add_argument("--timeout-s", type=float)


def build_parser() -> argparse.ArgumentParser:
  parser = _Parser(
    prog="harbench",
    description="Activity recognition benchmark harness",
  )
  parser.add_argument(
    "--version", action="version", version=__version__
  )
  commands = parser.add_subparsers(
    dest="command", required=True, parser_class=_Parser
  )

  ingest = commands.add_parser(
    "ingest", help="read a dataset into a cache"
  )
  _common(ingest)

  synth = commands.add_parser(
    "synth", help="write a synthetic dataset cache"
  )
  _common(synth)
  synth.add_argument("--classes", type=int)
  synth.add_argument("--channels", type=int)
  synth.add_argument("--rate", type=float)
  synth.add_argument("--train-samples", type=int)
  synth.add_argument("--noise", type=float)

  train_cmd = commands.add_parser(
    "train", help="train one configuration"
  )
  _common(train_cmd)
  _protocol_flags(train_cmd)
  train_cmd.add_argument("--family", choices=FAMILIES)
  train_cmd.add_argument(
    "--hyper",
    action="append",
    metavar="NAME=VALUE",
    help="override one hyperparameter",
  )

  search = commands.add_parser(
    "search", help="random hyperparameter search"
  )
  _common(search)
  _protocol_flags(search)
  search.add_argument(
    "--family", choices=(*FAMILIES, "all")
  )
  search.add_argument("--n", type=int)
  search.add_argument(
    "--full-scale",
    action="store_const",
    const=True,
    help="1000/256/128/128/128 experiments per family",
  )

  analyze_cmd = commands.add_parser(
    "analyze", help="fANOVA importance of records"
  )
  _common(analyze_cmd)
  analyze_cmd.add_argument("--family", choices=FAMILIES)
  analyze_cmd.add_argument("--trees", type=int)

  report = commands.add_parser(
    "report", help="peak / median tables and CDFs"
  )
  _common(report)
  return parser


def _hyper_overrides(pairs: list[str] | None) -> dict[str, Any]:
  overrides: dict[str, Any] = {}
  for pair in pairs or []:
    name, sep, value = pair.partition("=")
    if not sep or not name:
      raise UsageError(f"--hyper expects NAME=VALUE, got {pair}")
    overrides[name.strip()] = yaml.safe_load(value)
  return overrides


def resolve_config(args: argparse.Namespace) -> RunConfig:
  """Defaults < --config file < flags."""
  file_values = load_config_file(args.config) if args.config else {}
  flags: dict[str, Any] = {
    key: getattr(args, key, None)
    for key in (
      "seed",
      "out",
      "dataset",
      "root",
      "cache",
      "records",
      "parallelism",
      "literal_eq",
      "include_null",
      "family",
      "n",
      "full_scale",
      "timeout_s",
      "trees",
    )
  }
  protocol = {
    name: getattr(args, name, None)
    for name in ("min_epochs", "max_epochs", "patience")
  }
  if any(v is not None for v in protocol.values()):
    flags["protocol"] = {
      k: v for k, v in protocol.items() if v is not None
    }
  hyper = _hyper_overrides(getattr(args, "hyper", None))
  if hyper:
    flags["hyper"] = hyper
  return merge_config(file_values, flags)


def load_run_dataset(config: RunConfig) -> HarDataset:
  """
  The run's dataset, standardised: from `--cache`,
  from `<cache dir>/<dataset>.cache` when present,
  else read (or synthesised) afresh.
  """
  cached = os.path.join(
    HARBENCH_CACHE_DIR, f"{config.dataset}.cache"
  )
  if config.cache:
    dataset = read_cache(config.cache)
  elif os.path.isfile(cached):
    logger.info(f"Using cached {config.dataset} at {cached}")
    dataset = read_cache(cached)
  elif config.dataset == "synth":
    dataset = synthesize(SynthSpec.desk_scale())
  else:
    dataset = load_dataset(
      config.dataset, config.root, parallelism=config.parallelism
    )
  standardised, _, _ = standardize(dataset)
  return standardised


#


def cmd_ingest(config: RunConfig) -> RunManifest:
  if config.dataset == "synth":
    raise RejectedConfigError(
      "Use the synth subcommand for synthetic data"
    )
  dataset = load_dataset(
    config.dataset, config.root, parallelism=config.parallelism
  )
  path = config.cache or os.path.join(
    config.out, f"{config.dataset}.cache"
  )
  write_cache(dataset, path)
  return _dataset_manifest("ingest", config, dataset, path)


def cmd_synth(
  config: RunConfig, args: argparse.Namespace
) -> RunManifest:
  overrides = {
    name: value
    for name, value in (
      ("n_classes", args.classes),
      ("channels", args.channels),
      ("rate", args.rate),
      ("train_samples", args.train_samples),
      ("noise", args.noise),
    )
    if value is not None
  }
  spec = SynthSpec(seed=config.seed, **overrides)
  dataset = synthesize(spec)
  path = config.cache or os.path.join(config.out, "synth.cache")
  write_cache(dataset, path)
  manifest = _dataset_manifest("synth", config, dataset, path)
  manifest.details["synth"] = asdict(spec)
  return manifest


def _dataset_manifest(
  command: str,
  config: RunConfig,
  dataset: HarDataset,
  cache_path: str,
) -> RunManifest:
  rows = dataset.summary()
  summary_path = os.path.join(config.out, "summary.json")
  os.makedirs(config.out, exist_ok=True)
  with open(summary_path, "w", encoding="utf-8") as f:
    json.dump(rows, f, indent=2)
  print(
    f"{dataset.dataset_id}: {dataset.channels} channels, "
    f"{dataset.n_classes} classes, {dataset.rate:g} Hz"
  )
  for row in rows:
    print(
      f"  {row['split']:<10} {row['recordings']:>4} rec "
      f"{row['samples']:>9} samples {row['frames']:>7} "
      f"frames {row['classes']:>3} classes"
    )
  return RunManifest(
    subcommand=command,
    config=config.to_dict(),
    seed=config.seed,
    artifacts={"cache": cache_path, "summary": summary_path},
    details={
      "channels": dataset.channels,
      "classes": dataset.class_names,
    },
  )


def cmd_train(config: RunConfig) -> RunManifest:
  hyper = default_hyperparameters(config.family).with_overrides(
    config.hyper
  )
  os.makedirs(config.out, exist_ok=True)
  artifacts = {
    name: os.path.join(config.out, file)
    for name, file in (
      ("checkpoint", "checkpoint.json"),
      ("history", "history.jsonl"),
      ("timing", "timing.jsonl"),
      ("scores", "scores.json"),
    )
  }
  manifest = RunManifest(
    subcommand="train",
    config=config.to_dict(),
    seed=config.seed,
    artifacts=artifacts,
    details={"hyper": hyper.to_dict()},
  )
  manifest.write(config.out)

  dataset = load_run_dataset(config)
  model = build_model(
    hyper,
    (dataset.window, dataset.channels),
    dataset.n_classes,
    np.random.default_rng(config.seed),
  )
  result = train(
    model,
    dataset,
    hyper,
    protocol=config.protocol,
    seed=config.seed,
    history_path=artifacts["history"],
    timeout_s=config.timeout_s,
    include_null=config.include_null,
  )
  save_checkpoint(
    artifacts["checkpoint"],
    hyper.family,
    hyper.to_dict(),
    model.params,
    metadata={
      "dataset": dataset.dataset_id,
      "best_epoch": result.best_epoch,
    },
  )
  with open(artifacts["timing"], "w", encoding="utf-8") as f:
    for record in result.history:
      f.write(
        json.dumps(
          {"epoch": record.epoch, "wall_time": record.wall_time}
        )
        + "\n"
      )
  literal = config.literal_eq
  scores = {
    "status": result.status,
    "best_epoch": result.best_epoch,
    "epochs_run": result.epochs_run,
    "validation": (
      result.validation.to_dict(literal)
      if result.validation
      else {}
    ),
    "test": result.test_scores(literal),
  }
  with open(artifacts["scores"], "w", encoding="utf-8") as f:
    json.dump(scores, f, indent=2, sort_keys=True)
  test = scores["test"]
  print(
    f"{hyper.family} on {dataset.dataset_id}: "
    f"test F_m {test['mean_f1']:.4f} "
    f"F_w {test['weighted_f1']:.4f} "
    f"(best epoch {result.best_epoch})"
  )
  return manifest


def cmd_search(config: RunConfig) -> RunManifest:
  families = (
    list(FAMILIES) if config.family == "all" else [config.family]
  )
  records_path = config.records or os.path.join(
    config.out, "records.jsonl"
  )
  counts = {
    family: (
      FULL_SCALE_COUNTS[family] if config.full_scale else config.n  # type: ignore[index]
    )
    for family in families
  }
  manifest = RunManifest(
    subcommand="search",
    config=config.to_dict(),
    seed=config.seed,
    artifacts={"records": records_path},
    details={"experiments": counts},
  )
  manifest.write(config.out)
  dataset = load_run_dataset(config)
  sink = RecordSink(records_path)
  for family in families:
    written = asyncio.run(
      run_search(
        SearchSpace.for_family(family),
        dataset,
        counts[family],
        config.parallelism,
        sink,
        master_seed=config.seed,
        protocol=config.protocol,
        timeout_s=config.timeout_s,
        include_null=config.include_null,
      )
    )
    print(
      f"{family}: {len(written)} new records in {records_path}"
    )
  return manifest


def _records_path(config: RunConfig) -> str:
  path = config.records or os.path.join(
    config.out, "records.jsonl"
  )
  if not os.path.isfile(path):
    raise IngestionError(f"No records at {path}", [path])
  return path


def cmd_analyze(
  config: RunConfig, explicit_family: str | None
) -> RunManifest:
  path = _records_path(config)
  records = read_records(path)
  if not records:
    raise RejectedInputError(f"{path} holds no records")
  present = sorted({r.family for r in records})
  if explicit_family:
    families = [explicit_family]
  else:
    families = []
    for family in present:
      count = sum(r.family == family for r in records)
      if count >= MIN_RECORDS:
        families.append(family)
      else:
        logger.warning(
          f"Skipping {family}: {count} records, "
          f"need {MIN_RECORDS}"
        )
    if not families:
      raise RejectedInputError(
        f"No family in {path} has {MIN_RECORDS} records"
      )
  os.makedirs(config.out, exist_ok=True)
  results = {}
  artifacts = {"records": path}
  for family in families:
    analysis = analyze(
      records,
      family,
      trees=config.trees,
      seed=config.seed,
      parallelism=config.parallelism,
    )
    results[family] = analysis.to_dict()
    artifacts[f"importance_{family}"] = write_importance_file(
      analysis, config.out
    )
    for name, fraction in analysis.ranked()[:3]:
      print(f"{family}: {name} {fraction:.3f}")
  importance_path = os.path.join(config.out, "importance.json")
  with open(importance_path, "w", encoding="utf-8") as f:
    json.dump(results, f, indent=2, sort_keys=True)
  artifacts["importance"] = importance_path
  return RunManifest(
    subcommand="analyze",
    config=config.to_dict(),
    seed=config.seed,
    artifacts=artifacts,
  )


def cmd_report(config: RunConfig) -> RunManifest:
  path = _records_path(config)
  records = read_records(path)
  if not records:
    raise RejectedInputError(f"{path} holds no records")
  report = build_report(records, literal=config.literal_eq)
  os.makedirs(config.out, exist_ok=True)
  report_path = os.path.join(config.out, "report.md")
  text = render_report(report)
  with open(report_path, "w", encoding="utf-8") as f:
    f.write(text)
  print(text)
  artifacts = {"records": path, "report": report_path}
  for cdf in write_cdf_files(report, config.out):
    artifacts[os.path.basename(cdf)] = cdf
  return RunManifest(
    subcommand="report",
    config=config.to_dict(),
    seed=config.seed,
    artifacts=artifacts,
  )


#


def _configure_logging() -> None:
  logger.remove()
  logger.add(sys.stderr, level=LOG_LEVEL)


def run(argv: Sequence[str] | None = None) -> int:
  """Parse, dispatch and write the manifest."""
  args = build_parser().parse_args(argv)
  config = resolve_config(args)
  logger.trace(f"Resolved config: {config.to_dict()}")
  match args.command:
    case "ingest":
      manifest = cmd_ingest(config)
    case "synth":
      manifest = cmd_synth(config, args)
    case "train":
      manifest = cmd_train(config)
    case "search":
      manifest = cmd_search(config)
    case "analyze":
      manifest = cmd_analyze(config, args.family)
    case "report":
      manifest = cmd_report(config)
    case _:
      raise UsageError(f"Unknown command {args.command}")
  manifest.write(config.out)
  return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
  _configure_logging()
  try:
    return run(argv)
  except (
    UsageError,
    RejectedConfigError,
    FrameTooShortError,
    yaml.YAMLError,
  ) as e:
    logger.error(f"Usage error: {e}")
    return EXIT_USAGE
  except (
    IngestionError,
    RejectedInputError,
    UndefinedMetricError,
    SinkWriteError,
    FileNotFoundError,
  ) as e:
    logger.error(f"Data error: {e}")
    return EXIT_DATA
  except DivergenceError as e:
    logger.error(f"Numeric failure: {e}")
    return EXIT_NUMERIC


if __name__ == "__main__":
  sys.exit(main())
