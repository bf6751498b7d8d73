import numpy as np
import pytest

from harbench.errors import FrameTooShortError, RejectedInputError
from harbench.ops import (
  as_tensor,
  batch_nll,
  conv1d_temporal,
  conv1d_temporal_backward,
  matmul,
  maxpool1d,
  maxpool1d_backward,
  sigmoid,
  softmax_nll,
)


def loop_conv(x, k, b):
  n_filters, width, channels = k.shape
  out = np.zeros((x.shape[0] - width + 1, n_filters))
  for t in range(out.shape[0]):
    for f in range(n_filters):
      out[t, f] = b[f]
      for tau in range(width):
        for c in range(channels):
          out[t, f] += x[t + tau, c] * k[f, tau, c]
  return out


def test_conv_matches_loop():
  rng = np.random.default_rng(0)
  x = rng.normal(size=(11, 3))
  k = rng.normal(size=(4, 5, 3))
  b = rng.normal(size=4)
  out = conv1d_temporal(x, k, b)
  assert out.shape == (7, 4)
  np.testing.assert_allclose(out, loop_conv(x, k, b), atol=1e-12)
  batched = conv1d_temporal(np.stack([x, 2 * x]), k)
  np.testing.assert_allclose(
    batched[1], 2 * conv1d_temporal(x, k), atol=1e-12
  )


def test_conv_backward_is_the_adjoint():
  rng = np.random.default_rng(1)
  x = rng.normal(size=(2, 9, 3))
  k = rng.normal(size=(4, 3, 3))
  g = rng.normal(size=(2, 7, 4))
  d_x, d_k, d_b = conv1d_temporal_backward(x, k, g)
  # <conv(x, k), g> is linear in x and in k
  value = np.sum(conv1d_temporal(x, k) * g)
  assert np.sum(d_x * x) == pytest.approx(value)
  assert np.sum(d_k * k) == pytest.approx(value)
  np.testing.assert_allclose(d_b, g.sum(axis=(0, 1)))


def test_conv_shape_errors():
  with pytest.raises(FrameTooShortError):
    conv1d_temporal(np.zeros((4, 2)), np.zeros((1, 5, 2)))
  with pytest.raises(RejectedInputError):
    conv1d_temporal(np.zeros((8, 3)), np.zeros((1, 5, 2)))


def test_maxpool_drops_the_tail():
  x = np.array([[1.0], [3.0], [2.0], [2.0], [9.0]])
  np.testing.assert_array_equal(
    maxpool1d(x), [[3.0], [2.0]]
  )
  with pytest.raises(FrameTooShortError):
    maxpool1d(np.zeros((1, 2)))


def test_maxpool_backward_routes_to_first_max():
  x = np.array([[[1.0], [3.0], [2.0], [2.0], [9.0]]])
  d_x = maxpool1d_backward(x, np.array([[[5.0], [7.0]]]))
  np.testing.assert_array_equal(
    d_x[0, :, 0], [0.0, 5.0, 7.0, 0.0, 0.0]
  )


def test_softmax_nll_is_stable():
  probs, nll = softmax_nll(np.array([1000.0, 0.0, -1000.0]), 0)
  np.testing.assert_allclose(probs, [1.0, 0.0, 0.0])
  assert nll == pytest.approx(0.0)
  _, uniform = softmax_nll(np.zeros(4), 2)
  assert uniform == pytest.approx(np.log(4.0))
  with pytest.raises(RejectedInputError):
    softmax_nll(np.zeros(3), 3)
  with pytest.raises(RejectedInputError):
    softmax_nll(np.array([0.0, np.inf]), 0)


def test_batch_nll_gradient():
  rng = np.random.default_rng(2)
  logits = rng.normal(size=(3, 4, 5))
  targets = rng.integers(0, 5, size=(3, 4))
  _, loss, d_logits = batch_nll(logits, targets)
  eps = 1e-6
  numeric = np.zeros_like(logits)
  for index in np.ndindex(logits.shape):
    shifted = logits.copy()
    shifted[index] += eps
    up = batch_nll(shifted, targets)[1]
    shifted[index] -= 2 * eps
    down = batch_nll(shifted, targets)[1]
    numeric[index] = (up - down) / (2 * eps)
  np.testing.assert_allclose(d_logits, numeric, atol=1e-8)
  assert loss > 0


def test_matmul_and_inputs():
  a = np.arange(6.0).reshape(2, 3)
  np.testing.assert_array_equal(
    matmul(a, np.eye(3)), a
  )
  with pytest.raises(RejectedInputError):
    matmul(a, np.eye(2))
  with pytest.raises(RejectedInputError):
    as_tensor([1.0, np.nan])
  np.testing.assert_allclose(
    sigmoid(np.array([-800.0, 0.0, 800.0])), [0.0, 0.5, 1.0]
  )
