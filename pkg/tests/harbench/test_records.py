import json

import pytest

from harbench.errors import RejectedInputError
from harbench.records import (
  RECORD_SCHEMA,
  ExperimentRecord,
  RecordSink,
  read_records,
)


def make_record(index, score=0.5, family="dnn", seed=None):
  return ExperimentRecord(
    family=family,
    config_hash=f"hash{index}",
    seed=index if seed is None else seed,
    index=index,
    dataset="synth",
    config={"family": family, "lr": 0.01},
    status="ok",
    test_mean_f1=score,
    test_weighted_f1=score + 0.1,
    history=[{"epoch": 1, "train_loss": 1.0}],
  )


def test_sink_writes_header_and_records(tmp_path):
  path = str(tmp_path / "runs" / "records.jsonl")
  sink = RecordSink(path)
  assert sink.append(make_record(0))
  assert sink.append(make_record(1))
  with open(path, encoding="utf-8") as f:
    lines = f.read().splitlines()
  assert json.loads(lines[0])["schema"] == RECORD_SCHEMA
  assert len(lines) == 3
  records = read_records(path)
  assert [r.index for r in records] == [0, 1]
  assert records[1].score(weighted=True) == pytest.approx(0.6)
  assert records[0].history == [
    {"epoch": 1, "train_loss": 1.0}
  ]


def test_duplicate_keys_are_skipped(tmp_path):
  path = str(tmp_path / "records.jsonl")
  sink = RecordSink(path)
  assert sink.append(make_record(0))
  assert not sink.append(make_record(0, score=0.9))
  assert make_record(0).key in sink
  assert len(sink) == 1
  resumed = RecordSink(path)
  assert len(resumed) == 1
  assert not resumed.append(make_record(0))
  assert len(read_records(path)) == 1


def test_partial_last_line_is_dropped(tmp_path):
  path = str(tmp_path / "records.jsonl")
  sink = RecordSink(path)
  sink.append(make_record(0))
  with open(path, "a", encoding="utf-8") as f:
    f.write(make_record(1).to_json()[:40])
  assert len(read_records(path)) == 1
  resumed = RecordSink(path)
  assert len(resumed) == 1
  resumed.append(make_record(2))
  assert [r.index for r in read_records(path)] == [0, 2]


def test_cut_off_header_is_rewritten(tmp_path):
  path = tmp_path / "records.jsonl"
  path.write_text('{"schema": "harb', encoding="utf-8")
  sink = RecordSink(str(path))
  assert len(sink) == 0
  sink.append(make_record(0))
  first = path.read_text(encoding="utf-8").splitlines()[0]
  assert json.loads(first)["schema"] == RECORD_SCHEMA
  assert [r.index for r in read_records(str(path))] == [0]


def test_foreign_files_are_rejected(tmp_path):
  path = tmp_path / "other.jsonl"
  path.write_text(
    json.dumps({"schema": "other", "version": 1}) + "\n",
    encoding="utf-8",
  )
  with pytest.raises(RejectedInputError):
    read_records(str(path))
  path.write_text(
    json.dumps({"schema": RECORD_SCHEMA, "version": 99})
    + "\n",
    encoding="utf-8",
  )
  with pytest.raises(RejectedInputError):
    read_records(str(path))


def test_records_round_trip_through_json():
  record = make_record(3)
  again = ExperimentRecord.from_dict(
    json.loads(record.to_json())
  )
  assert again == record
  with pytest.raises(RejectedInputError):
    ExperimentRecord.from_dict({"family": "dnn"})
