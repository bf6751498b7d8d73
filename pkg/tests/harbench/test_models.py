import numpy as np
import pytest

from harbench.cnn import CnnModel, block_lengths
from harbench.dnn import DnnModel, dnn_forward
from harbench.errors import (
  FrameTooShortError,
  RejectedConfigError,
  RejectedInputError,
)
from harbench.lstm import (
  LstmModel,
  bilstm_forward_sequence,
  lstm_cell_step,
  lstm_forward_sequence,
)
from harbench.params import (
  load_checkpoint,
  loss,
  max_incoming_norm,
  maxin_norm,
  predict,
  save_checkpoint,
)

EPS = 1e-6


def numeric_gradient_check(model, inputs, targets, **kw):
  """
  Central differences on a few entries of every
  parameter against the analytic gradient.
  """
  _, cache = model.forward(inputs, "infer", **kw)
  _, grads = model.backward(cache, targets)
  assert set(grads) == set(model.params)
  rng = np.random.default_rng(0)

  def objective():
    _, c = model.forward(inputs, "infer", **kw)
    value, _ = model.backward(c, targets)
    return value

  for name, param in model.params.items():
    flat = param.reshape(-1)
    picks = rng.choice(
      flat.size, size=min(6, flat.size), replace=False
    )
    for i in picks:
      saved = flat[i]
      flat[i] = saved + EPS
      up = objective()
      flat[i] = saved - EPS
      down = objective()
      flat[i] = saved
      numeric = (up - down) / (2 * EPS)
      analytic = grads[name].reshape(-1)[i]
      assert analytic == pytest.approx(
        numeric, rel=1e-4, abs=1e-7
      ), name


def test_dnn_gradients():
  rng = np.random.default_rng(1)
  model = DnnModel(12, 3, 2, 5, rng)
  inputs = rng.standard_normal((4, 4, 3))
  targets = np.array([0, 1, 2, 1])
  numeric_gradient_check(model, inputs, targets)


def test_cnn_gradients():
  rng = np.random.default_rng(2)
  model = CnnModel(12, 2, 3, [3, 2], [3, 4], 1, 5, rng)
  assert model.lengths == [5, 2]
  inputs = rng.standard_normal((3, 12, 2))
  targets = np.array([2, 0, 1])
  numeric_gradient_check(model, inputs, targets)


def test_lstm_frame_gradients():
  rng = np.random.default_rng(3)
  model = LstmModel(4 * 2, 3, 2, 4, rng)
  # (B, L, s, d) frames
  inputs = rng.standard_normal((2, 3, 4, 2))
  targets = rng.integers(0, 3, size=(2, 3))
  numeric_gradient_check(model, inputs, targets)


def test_lstm_sample_gradients_with_state_and_resets():
  rng = np.random.default_rng(4)
  model = LstmModel(3, 2, 2, 4, rng)
  inputs = rng.standard_normal((2, 6, 3))
  targets = rng.integers(0, 2, size=(2, 6))
  states = [
    (rng.standard_normal((2, 4)), rng.standard_normal((2, 4)))
    for _ in range(2)
  ]
  resets = np.zeros((2, 6), dtype=bool)
  resets[1, 3] = True
  numeric_gradient_check(
    model,
    inputs,
    targets,
    initial_states=states,
    resets=resets,
  )


def test_blstm_gradients():
  rng = np.random.default_rng(5)
  model = LstmModel(
    3, 3, 1, 4, rng, direction="bidirectional"
  )
  inputs = rng.standard_normal((2, 5, 3))
  targets = rng.integers(0, 3, size=(2, 5))
  resets = np.zeros((2, 5), dtype=bool)
  resets[0, 2] = True
  numeric_gradient_check(
    model, inputs, targets, resets=resets
  )


#


def test_cell_step_shapes():
  rng = np.random.default_rng(6)
  weights = rng.standard_normal((3, 8))
  recurrent = rng.standard_normal((2, 8))
  h, c = lstm_cell_step(
    rng.standard_normal(3),
    np.zeros(2),
    np.zeros(2),
    weights,
    recurrent,
    np.zeros(8),
  )
  assert h.shape == c.shape == (2,)
  assert np.all(np.abs(h) < 1)
  with pytest.raises(RejectedInputError):
    lstm_cell_step(
      rng.standard_normal(4),
      np.zeros(2),
      np.zeros(2),
      weights,
      recurrent,
      np.zeros(8),
    )


def test_carried_state_equals_one_pass():
  rng = np.random.default_rng(7)
  model = LstmModel(3, 2, 2, 5, rng)
  sequence = rng.standard_normal((20, 3))
  whole, _ = lstm_forward_sequence(model, sequence)
  first, states = lstm_forward_sequence(
    model, sequence[:8]
  )
  second, _ = lstm_forward_sequence(
    model, sequence[8:], initial_states=states
  )
  np.testing.assert_allclose(
    np.concatenate([first, second]), whole, atol=1e-12
  )


def test_reset_matches_separate_recordings():
  rng = np.random.default_rng(8)
  a = rng.standard_normal((7, 3))
  b = rng.standard_normal((5, 3))
  joined = np.concatenate([a, b])[None]
  resets = np.zeros((1, 12), dtype=bool)
  resets[0, 7] = True

  forward = LstmModel(3, 2, 1, 4, rng)
  probs, _ = lstm_forward_sequence(
    forward, joined, resets=resets
  )
  pa, _ = lstm_forward_sequence(forward, a)
  pb, _ = lstm_forward_sequence(forward, b)
  np.testing.assert_allclose(
    probs[0], np.concatenate([pa, pb]), atol=1e-12
  )

  both = LstmModel(
    3, 2, 2, 4, rng, direction="bidirectional"
  )
  probs = bilstm_forward_sequence(both, joined, resets)
  expected = np.concatenate(
    [
      bilstm_forward_sequence(both, a),
      bilstm_forward_sequence(both, b),
    ]
  )
  np.testing.assert_allclose(
    probs[0], expected, atol=1e-12
  )


#


def test_maxin_norm_bounds_every_unit():
  rng = np.random.default_rng(9)
  for model in (
    DnnModel(10, 3, 2, 6, rng),
    CnnModel(16, 3, 3, [3], [4], 2, 6, rng),
    LstmModel(4, 3, 2, 5, rng),
  ):
    for value in model.params.values():
      value *= 10.0
    maxin_norm(model, 0.5)
    assert max_incoming_norm(model) <= 0.5 + 1e-12
    before = {k: v.copy() for k, v in model.params.items()}
    maxin_norm(model, 0.5)
    for name, value in model.params.items():
      np.testing.assert_array_equal(value, before[name])


def test_maxin_norm_leaves_small_weights():
  rng = np.random.default_rng(10)
  model = DnnModel(4, 2, 1, 3, rng)
  before = {k: v.copy() for k, v in model.params.items()}
  maxin_norm(model, 1e6)
  for name, value in model.params.items():
    np.testing.assert_array_equal(value, before[name])
  with pytest.raises(RejectedConfigError):
    maxin_norm(model, 0.0)


def test_cnn_rejects_short_frames():
  assert block_lengths(30, [5, 3, 3]) == [13, 5, 1]
  with pytest.raises(FrameTooShortError):
    block_lengths(10, [5, 3, 3])
  with pytest.raises(FrameTooShortError):
    CnnModel(
      10, 2, 3, [5, 3, 3], [4, 4, 4], 1, 8,
      np.random.default_rng(0),
    )


def test_dnn_layer_limits():
  rng = np.random.default_rng(0)
  with pytest.raises(RejectedConfigError):
    DnnModel(4, 2, 6, 3, rng)
  model = DnnModel(4, 2, 1, 3, rng)
  with pytest.raises(RejectedInputError):
    model.forward(np.zeros((1, 5)), "infer")
  with pytest.raises(RejectedInputError):
    model.forward(np.zeros((1, 4)), "train")
  probs = dnn_forward(model, np.zeros((2, 2)), "infer")
  assert probs.sum() == pytest.approx(1.0)


def test_dropout_only_in_train_mode():
  rng = np.random.default_rng(12)
  model = DnnModel(6, 3, 2, 32, rng)
  x = rng.standard_normal((5, 6))
  a, _ = model.forward(x, "infer")
  b, _ = model.forward(x, "infer")
  np.testing.assert_array_equal(a, b)
  c, _ = model.forward(x, "train", np.random.default_rng(1))
  assert not np.allclose(a, c)


#


def test_checkpoint_round_trip(tmp_path):
  rng = np.random.default_rng(13)
  model = CnnModel(12, 2, 3, [3], [4], 1, 5, rng)
  path = save_checkpoint(
    str(tmp_path / "model.json"),
    "cnn",
    {"family": "cnn", "lr": 0.01},
    model.params,
    {"dataset": "synth"},
  )
  family, hyper, params = load_checkpoint(path)
  assert family == "cnn"
  assert hyper["lr"] == 0.01
  assert set(params) == set(model.params)
  for name, value in params.items():
    np.testing.assert_array_equal(value, model.params[name])

  frames = rng.standard_normal((6, 12, 2))
  restored = CnnModel(
    12, 2, 3, [3], [4], 1, 5, np.random.default_rng(99)
  )
  for name, value in params.items():
    restored.params[name][...] = value
  np.testing.assert_array_equal(
    predict(restored, frames), predict(model, frames)
  )


def test_prediction_helpers():
  rng = np.random.default_rng(14)
  model = LstmModel(3, 4, 1, 4, rng)
  x = rng.standard_normal((2, 5, 3))
  labels = predict(model, x)
  assert labels.shape == (2, 5)
  assert labels.dtype == np.int64
  value = loss(model, x, np.zeros((2, 5), dtype=np.int64))
  assert value > 0
  with pytest.raises(RejectedInputError):
    loss(model, x, np.zeros(3, dtype=np.int64))


def test_cell_step_matches_scalar_equations():
  rng = np.random.default_rng(15)
  n_in, units = 3, 2
  weights = rng.standard_normal((n_in, 4 * units))
  recurrent = rng.standard_normal((units, 4 * units))
  bias = rng.standard_normal(4 * units)
  x = rng.standard_normal(n_in)
  h_prev = rng.standard_normal(units)
  c_prev = rng.standard_normal(units)
  h, c = lstm_cell_step(
    x, h_prev, c_prev, weights, recurrent, bias
  )

  def sig(v):
    return 1.0 / (1.0 + np.exp(-v))

  for j in range(units):
    z = []
    for gate in range(4):
      col = gate * units + j
      total = bias[col]
      for i in range(n_in):
        total += x[i] * weights[i, col]
      for k in range(units):
        total += h_prev[k] * recurrent[k, col]
      z.append(total)
    cell = sig(z[1]) * c_prev[j] + sig(z[0]) * np.tanh(z[3])
    assert c[j] == pytest.approx(cell, rel=1e-12)
    assert h[j] == pytest.approx(
      sig(z[2]) * np.tanh(cell), rel=1e-12
    )


def test_reversed_input_with_swapped_tracks():
  rng = np.random.default_rng(16)
  units = 3
  model = LstmModel(
    2, 3, 1, units, rng, direction="bidirectional"
  )
  swapped = LstmModel(
    2, 3, 1, units, rng, direction="bidirectional"
  )
  for part in ("W", "U", "b"):
    swapped.params[f"lstm0.fwd.{part}"][...] = model.params[
      f"lstm0.bwd.{part}"
    ]
    swapped.params[f"lstm0.bwd.{part}"][...] = model.params[
      f"lstm0.fwd.{part}"
    ]
  top = model.params["softmax.W"]
  swapped.params["softmax.W"][...] = np.concatenate(
    [top[units:], top[:units]]
  )
  swapped.params["softmax.b"][...] = model.params[
    "softmax.b"
  ]
  x = rng.standard_normal((1, 9, 2))
  probs, _ = model.forward(x)
  mirrored, _ = swapped.forward(x[:, ::-1].copy())
  np.testing.assert_allclose(
    mirrored[:, ::-1], probs, atol=1e-12
  )


def test_dropout_expectation_matches_inference():
  rng = np.random.default_rng(17)
  model = DnnModel(4, 2, 1, 3, rng, dropout=[0.5])
  x = rng.standard_normal((1, 4))
  _, infer = model.logits(x, "infer")
  expected = infer.activations[0][0]
  draws = np.array(
    [
      model.logits(x, "train", rng)[1].activations[0][0]
      for _ in range(10_000)
    ]
  )
  error = draws.std(axis=0) / np.sqrt(len(draws))
  assert np.all(
    np.abs(draws.mean(axis=0) - expected)
    <= 4 * error + 1e-12
  )
