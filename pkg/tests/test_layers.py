import math

import numpy as np
import pytest

from advlip import layers
from advlip.errors import ShapeError
from advlip.layers import LstmParams, LstmState
from advlip.tensor import Rng, finite_diff_grad


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_dense_matches_manual():
    rng = Rng(0, "init")
    x, w, b = rng.normal((3, 4)), rng.normal((4, 2)), rng.normal((2,))
    y, _ = layers.dense(x, w, b)
    assert np.allclose(y, x @ w + b)


def test_dense_rejects_bad_bias():
    with pytest.raises(ShapeError):
        layers.dense(np.zeros((2, 3)), np.zeros((3, 4)), np.zeros(5))


def test_dense_backward_gradients():
    rng = Rng(1, "init")
    x, w, b = rng.normal((3, 4)), rng.normal((4, 2)), rng.normal((2,))
    r = rng.normal((3, 2))
    _, cache = layers.dense(x, w, b)
    dx, dw, db = layers.dense_backward(r, cache)
    num_dw = finite_diff_grad(lambda v: float(np.sum(layers.dense(x, v, b)[0] * r)), w)
    num_dx = finite_diff_grad(lambda v: float(np.sum(layers.dense(v, w, b)[0] * r)), x)
    assert np.allclose(dw, num_dw, atol=1e-6)
    assert np.allclose(dx, num_dx, atol=1e-6)
    assert np.allclose(db, r.sum(axis=0))


def test_tanh_forward_backward():
    x = Rng(2, "init").normal((4, 3))
    y, cache = layers.tanh_op(x)
    assert np.allclose(y, np.tanh(x))
    dy = np.ones_like(x)
    assert np.allclose(layers.tanh_backward(dy, cache), 1.0 - np.tanh(x) ** 2)


def test_dropout_inference_is_identity():
    x = Rng(3, "init").normal((5, 6))
    y, cache = layers.dropout(x, 0.5, training=False, rng=None)
    assert y is x
    assert cache.mask is None
    y0, _ = layers.dropout(x, 0.0, training=True, rng=Rng(0, "dropout"))
    assert y0 is x


def test_dropout_training_scales_survivors():
    x = np.ones((200, 200), dtype=np.float64)
    ratio = 0.5
    y, cache = layers.dropout(x, ratio, training=True, rng=Rng(4, "dropout"))
    kept = y != 0
    assert np.allclose(y[kept], 1.0 / (1.0 - ratio))
    # survivor fraction concentrates around 1 - ratio
    assert abs(kept.mean() - (1.0 - ratio)) < 0.01


def test_dropout_backward_masks_gradient():
    x = Rng(5, "init").normal((4, 4))
    y, cache = layers.dropout(x, 0.25, training=True, rng=Rng(5, "dropout"))
    dy = np.ones_like(x)
    dx = layers.dropout_backward(dy, cache)
    assert np.array_equal(dx != 0, y != 0)
    assert np.allclose(dx[dx != 0], 1.0 / 0.75)


def test_dropout_validates():
    with pytest.raises(ValueError):
        layers.dropout(np.zeros(3), 1.0, True, Rng(0, "dropout"))
    with pytest.raises(ValueError):
        layers.dropout(np.zeros(3), 0.5, True, None)


def test_lstm_step_matches_manual_formulas():
    rng = Rng(6, "init")
    n_in, units, batch = 3, 4, 2
    params = LstmParams(
        rng.normal((n_in, 4 * units)), rng.normal((units, 4 * units)), rng.normal((4 * units,))
    )
    x = rng.normal((batch, n_in))
    state = LstmState(rng.normal((batch, units)), rng.normal((batch, units)))
    new, _ = layers.lstm_step(x, state, params)

    z = x @ params.wx + state.h @ params.wh + params.b
    i = sigmoid(z[:, :units])
    f = sigmoid(z[:, units : 2 * units])
    g = np.tanh(z[:, 2 * units : 3 * units])
    o = sigmoid(z[:, 3 * units :])
    c = f * state.c + i * g
    assert np.allclose(new.c, c, atol=1e-12)
    assert np.allclose(new.h, o * np.tanh(c), atol=1e-12)


def test_lstm_step_rejects_bad_state():
    params = LstmParams(np.zeros((2, 8)), np.zeros((2, 8)), np.zeros(8))
    with pytest.raises(ShapeError):
        layers.lstm_step(np.zeros((1, 2)), LstmState(np.zeros((1, 3)), np.zeros((1, 3))), params)


def test_lstm_forward_equals_stepping():
    rng = Rng(7, "init")
    n_in, units, steps = 3, 5, 6
    params = LstmParams(
        rng.normal((n_in, 4 * units)),
        rng.normal((units, 4 * units)) * 0.5,
        rng.normal((4 * units,)),
    )
    x = rng.normal((steps, n_in))
    hs, _ = layers.lstm_forward(x, params)

    state = layers.lstm_zero_state(None, units, dtype=x.dtype)
    state = LstmState(state.h[None, :], state.c[None, :])
    for t in range(steps):
        state, _ = layers.lstm_step(x[t : t + 1], state, params)
        assert np.allclose(hs[t], state.h[0], atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_lstm_sequence_gradients(seed):
    rng = Rng(seed, "init")
    n_in, units, steps = 3, 3, 4
    params = LstmParams(
        rng.normal((n_in, 4 * units)),
        rng.normal((units, 4 * units)) * 0.5,
        rng.normal((4 * units,)),
    )
    x = rng.normal((steps, n_in))
    r = rng.normal((steps, units))
    _, cache = layers.lstm_forward(x, params)
    dx, dwx, dwh, db = layers.lstm_backward(r, cache, params)

    def obj(wxv, whv, bv, xv):
        h, _ = layers.lstm_forward(xv, LstmParams(wxv, whv, bv))
        return float(np.sum(h * r))

    for analytic, arg, repack in (
        (dx, x, lambda v: obj(params.wx, params.wh, params.b, v)),
        (dwx, params.wx, lambda v: obj(v, params.wh, params.b, x)),
        (dwh, params.wh, lambda v: obj(params.wx, v, params.b, x)),
        (db, params.b, lambda v: obj(params.wx, params.wh, v, x)),
    ):
        numeric = finite_diff_grad(repack, arg)
        scale = max(1e-8, np.abs(numeric).max(), np.abs(analytic).max())
        assert np.abs(analytic - numeric).max() / scale < 1e-5


def test_softmax_ce_uniform_logits():
    loss, dlogits = layers.weighted_softmax_ce(np.zeros((1, 2)), [0], [1.0])
    assert loss == pytest.approx(math.log(2.0), abs=1e-12)
    assert np.allclose(dlogits, [[-0.5, 0.5]])


def test_softmax_ce_weighted_average():
    logits = np.array([[2.0, -1.0, 0.5], [0.0, 3.0, 1.0]])
    labels = [0, 2]
    weights = [1.0, 3.0]
    loss, _ = layers.weighted_softmax_ce(logits, labels, weights)
    lse = np.log(np.exp(logits).sum(axis=1))
    nll = lse - logits[np.arange(2), labels]
    assert loss == pytest.approx((1.0 * nll[0] + 3.0 * nll[1]) / 4.0, rel=1e-12)


def test_softmax_ce_gradient():
    rng = Rng(8, "init")
    logits = rng.normal((5, 4))
    labels = np.asarray(rng.integers(0, 4, size=5))
    weights = rng.random((5,)) + 0.5
    _, dlogits = layers.weighted_softmax_ce(logits, labels, weights)
    numeric = finite_diff_grad(
        lambda v: layers.weighted_softmax_ce(v, labels, weights)[0], logits
    )
    assert np.allclose(dlogits, numeric, atol=1e-7)


def test_softmax_ce_validates():
    with pytest.raises(ValueError):
        layers.weighted_softmax_ce(np.zeros((2, 3)), [0, 3], [1.0, 1.0])
    with pytest.raises(ValueError):
        layers.weighted_softmax_ce(np.zeros((2, 3)), [0, 1], [1.0, 0.0])
    with pytest.raises(ShapeError):
        layers.weighted_softmax_ce(np.zeros((2, 3)), [0], [1.0, 1.0])


def test_gradient_reversal_forward_is_identity():
    x = Rng(9, "init").normal((6, 3))
    for lam in (0.0, 0.2, 1.0):
        assert layers.gradient_reversal(x, lam) is x


@pytest.mark.parametrize("lam", [0.0, 0.2, 1.0])
def test_gradient_reversal_backward_exact(lam):
    dy = Rng(10, "init").normal((4, 5))
    dx = layers.gradient_reversal_backward(dy, lam)
    assert np.array_equal(dx, (-lam) * dy)


def test_gradient_reversal_rejects_negative_weight():
    with pytest.raises(ValueError):
        layers.gradient_reversal(np.zeros(2), -0.1)
    with pytest.raises(ValueError):
        layers.gradient_reversal_backward(np.zeros(2), -1.0)
