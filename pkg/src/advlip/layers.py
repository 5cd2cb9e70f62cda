"""Differentiable building blocks with explicit forward/backward pairs.

Every forward returns (output, cache) and the matching backward consumes that
cache; caches are never reused across calls.  All functions are pure with
respect to their inputs, so independent sequences can be evaluated on
different threads (dropout needs a per-thread Rng).
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from ._kernels import sigmoid
from .errors import ShapeError
from .tensor import Rng, matmul


class DenseCache(NamedTuple):
    x: np.ndarray
    w: np.ndarray


class TanhCache(NamedTuple):
    y: np.ndarray


class DropoutCache(NamedTuple):
    mask: Optional[np.ndarray]
    scale: float


class LstmParams(NamedTuple):
    """Packed cell parameters; gate order along the last axis is (i, f, g, o)."""

    wx: np.ndarray  # [input, 4*units]
    wh: np.ndarray  # [units, 4*units]
    b: np.ndarray  # [4*units]


class LstmState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


class LstmStepCache(NamedTuple):
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    gates: np.ndarray
    tanh_c: np.ndarray


class LstmSeqCache(NamedTuple):
    x: np.ndarray
    h0: np.ndarray
    hs: np.ndarray
    gates: np.ndarray
    tanh_c: np.ndarray
    c_prev: np.ndarray


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """y = x @ w + b for a [batch, in] input."""
    if b.ndim != 1 or b.shape[0] != w.shape[1]:
        raise ShapeError(f"dense bias shape {b.shape} does not match weight {w.shape}")
    y = matmul(x, w) + b
    return y, DenseCache(x, w)


def dense_backward(dy: np.ndarray, cache: DenseCache):
    dx = matmul(dy, cache.w.T)
    dw = matmul(cache.x.T, dy)
    db = dy.sum(axis=0)
    return dx, dw, db


def tanh_op(x: np.ndarray):
    y = np.tanh(x)
    return y, TanhCache(y)


def tanh_backward(dy: np.ndarray, cache: TanhCache):
    return dy * (1.0 - cache.y * cache.y)


def dropout(x: np.ndarray, ratio: float, training: bool, rng: Optional[Rng]):
    """Inverted dropout: survivors are scaled by 1/(1-ratio) at train time,
    inference is the bit-exact identity."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"dropout ratio must be in [0, 1), got {ratio}")
    if not training or ratio == 0.0:
        return x, DropoutCache(None, 1.0)
    if rng is None:
        raise ValueError("dropout in training mode requires an rng")
    mask = rng.random(x.shape) >= ratio
    scale = 1.0 / (1.0 - ratio)
    return x * mask * scale, DropoutCache(mask, scale)


def dropout_backward(dy: np.ndarray, cache: DropoutCache):
    if cache.mask is None:
        return dy
    return dy * cache.mask * cache.scale


def lstm_zero_state(batch: Optional[int], units: int, dtype=np.float32) -> LstmState:
    shape = (units,) if batch is None else (batch, units)
    return LstmState(np.zeros(shape, dtype=dtype), np.zeros(shape, dtype=dtype))


def _split_gates(z: np.ndarray, units: int):
    i = sigmoid(z[..., :units])
    f = sigmoid(z[..., units : 2 * units])
    g = np.tanh(z[..., 2 * units : 3 * units])
    o = sigmoid(z[..., 3 * units :])
    return i, f, g, o


def lstm_step(x: np.ndarray, state: LstmState, params: LstmParams):
    """One cell update for a [batch, in] input.

    c' = f*c + i*g, h' = o*tanh(c'); input/forget/output gates are logistic,
    the candidate is tanh, no peephole connections.
    """
    units = params.wh.shape[0]
    if state.h.shape != state.c.shape:
        raise ShapeError(f"state shapes differ: h {state.h.shape} vs c {state.c.shape}")
    if state.h.shape[-1] != units:
        raise ShapeError(f"state width {state.h.shape[-1]} does not match {units} units")
    z = matmul(x, params.wx) + state.h @ params.wh + params.b
    i, f, g, o = _split_gates(z, units)
    c_new = f * state.c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    gates = np.concatenate([i, f, g, o], axis=-1)
    cache = LstmStepCache(x, state.h, state.c, gates, tc)
    return LstmState(h_new, c_new), cache


def lstm_step_backward(dh: np.ndarray, dc: np.ndarray, cache: LstmStepCache, params: LstmParams):
    """Gradients of one cell update; dh/dc are the upstream gradients on the
    new hidden and cell state.  Returns (dx, dh_prev, dc_prev, dwx, dwh, db)."""
    units = params.wh.shape[0]
    g4 = cache.gates
    i, f = g4[..., :units], g4[..., units : 2 * units]
    g, o = g4[..., 2 * units : 3 * units], g4[..., 3 * units :]
    tc = cache.tanh_c
    dc_total = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [
            dc_total * g * i * (1.0 - i),
            dc_total * cache.c_prev * f * (1.0 - f),
            dc_total * i * (1.0 - g * g),
            dh * tc * o * (1.0 - o),
        ],
        axis=-1,
    )
    dx = matmul(dz, params.wx.T)
    dh_prev = dz @ params.wh.T
    dc_prev = dc_total * f
    dwx = matmul(cache.x.T, dz)
    dwh = cache.h_prev.T @ dz
    db = dz.sum(axis=0)
    return dx, dh_prev, dc_prev, dwx, dwh, db


def lstm_forward(x: np.ndarray, params: LstmParams, state: Optional[LstmState] = None):
    """Run a whole [T, in] sequence; the hot loop dispatches to the active
    kernel backend.  Returns (hs [T, units], cache)."""
    units = params.wh.shape[0]
    if state is None:
        state = lstm_zero_state(None, units, dtype=x.dtype)
    zx = matmul(x, params.wx) + params.b
    hs, gates, tanh_c, c_prev = _kernels.lstm_seq_forward(
        np.ascontiguousarray(zx),
        np.ascontiguousarray(params.wh),
        np.ascontiguousarray(state.h),
        np.ascontiguousarray(state.c),
    )
    return hs, LstmSeqCache(x, state.h, hs, gates, tanh_c, c_prev)


def lstm_backward(dhs: np.ndarray, cache: LstmSeqCache, params: LstmParams):
    """BPTT over a sequence processed by lstm_forward.

    dhs carries the upstream gradient for every frame's hidden state (zeros
    where nothing flows back).  Returns (dx [T, in], dwx, dwh, db).
    """
    dz, _, _ = _kernels.lstm_seq_backward(
        np.ascontiguousarray(dhs),
        cache.gates,
        cache.tanh_c,
        cache.c_prev,
        np.ascontiguousarray(params.wh),
    )
    dx = matmul(dz, params.wx.T)
    dwx = matmul(cache.x.T, dz)
    h_prev = np.vstack([cache.h0[None, :], cache.hs[:-1]])
    dwh = matmul(h_prev.T, dz)
    db = dz.sum(axis=0)
    return dx, dwx, dwh, db


def weighted_softmax_ce(logits: np.ndarray, labels, sample_weights):
    """Weighted multi-class cross-entropy over a [n, C] logit block.

    loss = sum_i w_i * (-log softmax(logits_i)[label_i]) / sum_i w_i, and
    dlogits is the exact gradient of that expression.
    """
    labels = np.asarray(labels)
    weights = np.asarray(sample_weights, dtype=np.float64)
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} logit rows")
    if weights.shape != (n,):
        raise ShapeError(f"weights shape {weights.shape} does not match {n} logit rows")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"label out of range [0, {n_classes}): {labels.min()}..{labels.max()}")
    if (weights <= 0).any():
        raise ValueError("sample weights must be positive")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    log_p_true = shifted[np.arange(n), labels] - lse
    wsum = weights.sum()
    loss = float(-(weights * log_p_true).sum() / wsum)
    probs = np.exp(shifted - lse[:, None])
    dlogits = probs.astype(logits.dtype, copy=True)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits *= (weights / wsum)[:, None].astype(logits.dtype)
    return loss, dlogits


def gradient_reversal(x: np.ndarray, lam: float) -> np.ndarray:
    """Forward: bit-exact identity.  The reversal lives entirely in backward."""
    if lam < 0:
        raise ValueError(f"reversal weight must be >= 0, got {lam}")
    return x


def gradient_reversal_backward(dy: np.ndarray, lam: float) -> np.ndarray:
    """dx = -lam * dy: the upstream gradient, inverted and scaled."""
    if lam < 0:
        raise ValueError(f"reversal weight must be >= 0, got {lam}")
    return (-lam) * dy
