import json
import math
import os

import numpy as np
import pytest

import harbench.cli as cli
from harbench.cli import (
  EXIT_DATA,
  EXIT_NUMERIC,
  EXIT_OK,
  EXIT_USAGE,
  main,
)
from harbench.errors import DivergenceError
from harbench.records import ExperimentRecord, RecordSink
from harbench.search_space import SearchSpace, sample_config

REPO_ROOT = os.path.abspath(
  os.path.join(os.path.dirname(__file__), "..", "..")
)


@pytest.fixture
def in_repo(monkeypatch):
  """Templates are found relative to the repo root."""
  monkeypatch.chdir(REPO_ROOT)


@pytest.fixture
def synth_cache(tmp_path):
  out = str(tmp_path / "synth")
  code = main(
    [
      "synth",
      "--seed", "0",
      "--out", out,
      "--classes", "3",
      "--channels", "2",
      "--rate", "16",
      "--train-samples", "4000",
    ]
  )
  assert code == EXIT_OK
  yield os.path.join(out, "synth.cache")


def read_json(path):
  with open(path, encoding="utf-8") as f:
    return json.load(f)


def test_synth_writes_cache_and_manifest(synth_cache):
  out = os.path.dirname(synth_cache)
  assert os.path.isfile(synth_cache)
  manifest = read_json(os.path.join(out, "manifest.json"))
  assert manifest["subcommand"] == "synth"
  assert manifest["seed"] == 0
  assert manifest["details"]["synth"]["n_classes"] == 3
  summary = read_json(os.path.join(out, "summary.json"))
  assert [row["split"] for row in summary] == [
    "train",
    "validation",
    "test",
  ]


def test_train_writes_artifacts(synth_cache, tmp_path):
  out = str(tmp_path / "train")
  code = main(
    [
      "train",
      "--family", "dnn",
      "--cache", synth_cache,
      "--out", out,
      "--seed", "5",
      "--min-epochs", "1",
      "--max-epochs", "2",
      "--patience", "1",
      "--hyper", "units=16",
      "--hyper", "layers=1",
    ]
  )
  assert code == EXIT_OK
  for name in (
    "manifest.json",
    "checkpoint.json",
    "history.jsonl",
    "timing.jsonl",
    "scores.json",
  ):
    assert os.path.isfile(os.path.join(out, name)), name
  manifest = read_json(os.path.join(out, "manifest.json"))
  assert manifest["config"]["protocol"]["max_epochs"] == 2
  assert manifest["details"]["hyper"]["units"] == 16
  scores = read_json(os.path.join(out, "scores.json"))
  assert scores["status"] == "ok"
  assert 0.0 <= scores["test"]["mean_f1"] <= 1.0


def test_config_file_and_flags(tmp_path, synth_cache):
  config = tmp_path / "run.yaml"
  config.write_text(
    "family: cnn\n"
    "seed: 9\n"
    "protocol:\n"
    "  min_epochs: 1\n"
    "  max_epochs: 1\n"
    "hyper:\n"
    "  units: 8\n"
    "  nf1: 4\n"
    "  nf2: 4\n",
    encoding="utf-8",
  )
  out = str(tmp_path / "cnn")
  code = main(
    [
      "train",
      "--config", str(config),
      "--cache", synth_cache,
      "--out", out,
      "--seed", "11",
    ]
  )
  assert code == EXIT_OK
  manifest = read_json(os.path.join(out, "manifest.json"))
  assert manifest["config"]["family"] == "cnn"
  assert manifest["seed"] == 11
  assert manifest["details"]["hyper"]["nf1"] == 4


def test_usage_errors(tmp_path):
  assert main(["train", "--family", "gru"]) == EXIT_USAGE
  assert main(["explode"]) == EXIT_USAGE
  assert (
    main(["train", "--hyper", "units", "--out", str(tmp_path)])
    == EXIT_USAGE
  )
  bad = tmp_path / "bad.yaml"
  bad.write_text("colour: blue\n", encoding="utf-8")
  assert (
    main(["report", "--config", str(bad)]) == EXIT_USAGE
  )
  assert (
    main(["search", "--include-null", "maybe"]) == EXIT_USAGE
  )


def test_data_errors(tmp_path):
  missing = str(tmp_path / "none.jsonl")
  assert (
    main(["report", "--records", missing, "--out", str(tmp_path)])
    == EXIT_DATA
  )
  assert (
    main(
      [
        "ingest",
        "--dataset", "pamap2",
        "--root", str(tmp_path / "nowhere"),
        "--out", str(tmp_path),
      ]
    )
    == EXIT_DATA
  )


def test_divergence_exit_code(synth_cache, tmp_path, monkeypatch):
  def diverge(*args, **kwargs):
    raise DivergenceError("loss is inf")

  monkeypatch.setattr(cli, "train", diverge)
  code = main(
    [
      "train",
      "--cache", synth_cache,
      "--out", str(tmp_path / "nan"),
    ]
  )
  assert code == EXIT_NUMERIC


def fixture_records(path, scores):
  sink = RecordSink(path)
  for i, score in enumerate(scores):
    sink.append(
      ExperimentRecord(
        family="dnn",
        config_hash=f"h{i}",
        seed=i,
        index=i,
        dataset="synth",
        config={"family": "dnn"},
        status="ok",
        test_mean_f1=score,
        test_weighted_f1=score,
      )
    )


def test_report_on_three_records(in_repo, tmp_path):
  records = str(tmp_path / "records.jsonl")
  fixture_records(records, [0.2, 0.6, 0.4])
  out = str(tmp_path / "report")
  code = main(["report", "--records", records, "--out", out])
  assert code == EXIT_OK
  with open(os.path.join(out, "report.md"), encoding="utf-8") as f:
    text = f.read()
  assert "| dnn | 3 | 0.600 | 0.600 | 0.400 | 0.200 |" in text
  with open(os.path.join(out, "cdf_dnn.dat"), encoding="utf-8") as f:
    lines = [
      line for line in f.read().splitlines()
      if not line.startswith("#")
    ]
  assert [float(line.split()[0]) for line in lines] == [
    0.2,
    0.4,
    0.6,
  ]
  manifest = read_json(os.path.join(out, "manifest.json"))
  assert manifest["artifacts"]["report"].endswith("report.md")


def test_literal_report_doubles_scores(in_repo, tmp_path):
  records = str(tmp_path / "records.jsonl")
  fixture_records(records, [0.2, 0.6, 0.4])
  out = str(tmp_path / "literal")
  code = main(
    [
      "report",
      "--records", records,
      "--out", out,
      "--literal-eq",
    ]
  )
  assert code == EXIT_OK
  with open(os.path.join(out, "report.md"), encoding="utf-8") as f:
    assert "| dnn | 3 | 1.200 |" in f.read()


def test_analyze_needs_enough_records(tmp_path):
  records = str(tmp_path / "records.jsonl")
  fixture_records(records, [0.1, 0.2, 0.3])
  code = main(
    ["analyze", "--records", records, "--out", str(tmp_path)]
  )
  assert code == EXIT_DATA


def test_analyze_writes_importance(tmp_path):
  rng = np.random.default_rng(4)
  space = SearchSpace.for_family("dnn")
  sink = RecordSink(str(tmp_path / "records.jsonl"))
  for i in range(30):
    hyper = sample_config(space, rng)
    score = (math.log10(hyper.lr) + 4.0) / 3.0
    sink.append(
      ExperimentRecord(
        family="dnn",
        config_hash=hyper.config_hash(),
        seed=i,
        index=i,
        dataset="synth",
        config=hyper.to_dict(),
        status="ok",
        test_mean_f1=score,
        test_weighted_f1=score,
      )
    )
  out = str(tmp_path / "analysis")
  code = main(
    [
      "analyze",
      "--records", sink.path,
      "--out", out,
      "--trees", "5",
    ]
  )
  assert code == EXIT_OK
  assert os.path.isfile(os.path.join(out, "importance_dnn.dat"))
  results = read_json(os.path.join(out, "importance.json"))
  parameters = results["dnn"]["parameters"]
  assert max(parameters, key=parameters.get) == "lr"
