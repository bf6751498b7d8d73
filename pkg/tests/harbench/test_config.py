import pytest

from harbench.config import (
  DEFAULT_SEED,
  ProtocolSettings,
  RunConfig,
  load_config_file,
  merge_config,
)
from harbench.errors import RejectedConfigError


def test_defaults():
  config = merge_config()
  assert config.dataset == "synth"
  assert config.seed == DEFAULT_SEED
  assert config.protocol == ProtocolSettings(30, 300, 10)
  assert config.include_null is True


def test_flags_override_file():
  config = merge_config(
    {"family": "cnn", "seed": 3, "n": 7},
    {"seed": 4, "n": None, "out": "runs/x"},
  )
  assert config.family == "cnn"
  assert config.seed == 4
  assert config.n == 7
  assert config.out == "runs/x"


def test_protocol_and_hyper_layer():
  config = merge_config(
    {
      "protocol": {"min_epochs": 5, "max_epochs": 50},
      "hyper": {"units": 64, "layers": 1},
    },
    {"protocol": {"patience": 2}, "hyper": {"units": 32}},
  )
  assert config.protocol == ProtocolSettings(5, 50, 2)
  assert config.hyper == {"units": 32, "layers": 1}


def test_values_coerced_to_field_types():
  config = merge_config(
    {
      "seed": "12",
      "timeout-s": "1.5",
      "include_null": "false",
      "literal_eq": "yes",
    }
  )
  assert config.seed == 12
  assert config.timeout_s == 1.5
  assert config.include_null is False
  assert config.literal_eq is True


def test_unknown_key_rejected():
  with pytest.raises(RejectedConfigError):
    merge_config({"epochs": 3})


@pytest.mark.parametrize(
  "min_epochs, max_epochs, patience",
  [(0, 10, 1), (5, 4, 1), (1, 10, 0)],
)
def test_bad_protocol_rejected(min_epochs, max_epochs, patience):
  with pytest.raises(RejectedConfigError):
    ProtocolSettings(min_epochs, max_epochs, patience)


def test_config_file(tmp_path):
  path = tmp_path / "run.yaml"
  path.write_text("family: lstm-s\nn: 3\n", encoding="utf-8")
  assert load_config_file(str(path)) == {
    "family": "lstm-s",
    "n": 3,
  }
  empty = tmp_path / "empty.yaml"
  empty.write_text("", encoding="utf-8")
  assert load_config_file(str(empty)) == {}
  listing = tmp_path / "list.yaml"
  listing.write_text("- 1\n- 2\n", encoding="utf-8")
  with pytest.raises(RejectedConfigError):
    load_config_file(str(listing))


def test_to_dict_round_trips():
  config = merge_config({"family": "dnn", "trees": 7})
  again = merge_config(config.to_dict())
  assert again == config
  assert isinstance(again, RunConfig)
