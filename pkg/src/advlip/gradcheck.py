"""Finite-difference verification of every analytic backward pass.

Each check builds a random instance in float64, frames a scalar objective,
and compares the analytic gradient against central differences.  The full
network check splits the objective to expose the gradient-reversal semantics:
shared parameters are checked against d(word_loss - lambda*speaker_loss),
speaker-head parameters against d(speaker_loss).  A deliberately broken
reversal (sign bug hook) must make that check fail; it is wired to a hidden
CLI flag as a negative control.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np

from . import layers
from .layers import LstmParams, LstmState
from .model import Model, ModelConfig, batch_losses, backward_batch, build_model, forward_sequence
from .tensor import Rng, finite_diff_grad

TOLERANCE = 1e-4
FULL_MODEL_LAMBDA = 0.7


def tiny_config() -> ModelConfig:
    """Smallest config that still exercises every code path."""
    return ModelConfig(
        height=2,
        width=2,
        trunk_widths=(3, 3, 3),
        dropout_ratio=0.0,
        lstm_units=3,
        word_classes=2,
        adv_attach_index=2,
        adv_widths=(3, 3),
        adv_domains=2,
    )


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute difference scaled by the larger gradient magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(1e-8, float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    return float(np.max(np.abs(analytic - numeric))) / scale


@dataclass(frozen=True)
class CheckRow:
    name: str
    seed: int
    rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.rel_err < self.tolerance


def _rand(rng: Rng, shape) -> np.ndarray:
    return rng.normal(shape, std=1.0)


def _check_against(f: Callable[[np.ndarray], float], x: np.ndarray, analytic: np.ndarray) -> float:
    return rel_error(analytic, finite_diff_grad(f, x))


def check_dense(seed: int) -> float:
    rng = Rng(seed, "init")
    x, w, b = _rand(rng, (3, 4)), _rand(rng, (4, 2)), _rand(rng, (2,))
    r = _rand(rng, (3, 2))
    y, cache = layers.dense(x, w, b)
    dx, dw, db = layers.dense_backward(r, cache)
    errs = [
        _check_against(lambda v: float(np.sum(layers.dense(v, w, b)[0] * r)), x, dx),
        _check_against(lambda v: float(np.sum(layers.dense(x, v, b)[0] * r)), w, dw),
        _check_against(lambda v: float(np.sum(layers.dense(x, w, v)[0] * r)), b, db),
    ]
    return max(errs)


def check_tanh(seed: int) -> float:
    rng = Rng(seed, "init")
    x = _rand(rng, (4, 5))
    r = _rand(rng, (4, 5))
    y, cache = layers.tanh_op(x)
    dx = layers.tanh_backward(r, cache)
    return _check_against(lambda v: float(np.sum(np.tanh(v) * r)), x, dx)


def check_dropout(seed: int) -> float:
    """Training-mode dropout with the mask held fixed across FD evaluations;
    the mask depends only on the rng draw, never on the input values."""
    rng = Rng(seed, "init")
    x = _rand(rng, (4, 6))
    r = _rand(rng, (4, 6))
    ratio = 0.4

    def run(v):
        return layers.dropout(v, ratio, True, Rng(seed, "dropout"))

    _, cache = run(x)
    dx = layers.dropout_backward(r, cache)
    return _check_against(lambda v: float(np.sum(run(v)[0] * r)), x, dx)


def check_lstm_step(seed: int) -> float:
    rng = Rng(seed, "init")
    n_in, units, batch = 4, 3, 2
    params = LstmParams(_rand(rng, (n_in, 4 * units)), _rand(rng, (units, 4 * units)) * 0.5,
                        _rand(rng, (4 * units,)))
    x = _rand(rng, (batch, n_in))
    state = LstmState(_rand(rng, (batch, units)), _rand(rng, (batch, units)))
    rh, rc = _rand(rng, (batch, units)), _rand(rng, (batch, units))

    new, cache = layers.lstm_step(x, state, params)
    dx, dh0, dc0, dwx, dwh, db = layers.lstm_step_backward(rh, rc, cache, params)

    def obj(xv, hv, cv, wxv, whv, bv):
        p = LstmParams(wxv, whv, bv)
        s, _ = layers.lstm_step(xv, LstmState(hv, cv), p)
        return float(np.sum(s.h * rh) + np.sum(s.c * rc))

    errs = [
        _check_against(lambda v: obj(v, state.h, state.c, *params), x, dx),
        _check_against(lambda v: obj(x, v, state.c, *params), state.h, dh0),
        _check_against(lambda v: obj(x, state.h, v, *params), state.c, dc0),
        _check_against(lambda v: obj(x, state.h, state.c, v, params.wh, params.b), params.wx, dwx),
        _check_against(lambda v: obj(x, state.h, state.c, params.wx, v, params.b), params.wh, dwh),
        _check_against(lambda v: obj(x, state.h, state.c, params.wx, params.wh, v), params.b, db),
    ]
    return max(errs)


def check_lstm_sequence(seed: int) -> float:
    rng = Rng(seed, "init")
    n_in, units, steps = 3, 3, 3
    params = LstmParams(_rand(rng, (n_in, 4 * units)), _rand(rng, (units, 4 * units)) * 0.5,
                        _rand(rng, (4 * units,)))
    x = _rand(rng, (steps, n_in))
    r = _rand(rng, (steps, units))

    hs, cache = layers.lstm_forward(x, params)
    dx, dwx, dwh, db = layers.lstm_backward(r, cache, params)

    def obj(xv, wxv, whv, bv):
        h, _ = layers.lstm_forward(xv, LstmParams(wxv, whv, bv))
        return float(np.sum(h * r))

    errs = [
        _check_against(lambda v: obj(v, *params), x, dx),
        _check_against(lambda v: obj(x, v, params.wh, params.b), params.wx, dwx),
        _check_against(lambda v: obj(x, params.wx, v, params.b), params.wh, dwh),
        _check_against(lambda v: obj(x, params.wx, params.wh, v), params.b, db),
    ]
    return max(errs)


def check_softmax_ce(seed: int) -> float:
    rng = Rng(seed, "init")
    n, classes = 5, 3
    logits = _rand(rng, (n, classes))
    labels = np.asarray(rng.integers(0, classes, size=n))
    weights = rng.random((n,)) + 0.5
    loss, dlogits = layers.weighted_softmax_ce(logits, labels, weights)
    return _check_against(
        lambda v: float(layers.weighted_softmax_ce(v, labels, weights)[0]), logits, dlogits
    )


@dataclass
class _TinyBatch:
    frames: List[np.ndarray]
    word_labels: List[Optional[int]]
    domains: List[int]
    class_weights: np.ndarray


def _make_tiny_batch(cfg: ModelConfig, rng: Rng) -> _TinyBatch:
    lengths = [2, 3, 4, 3]
    frames = [_rand(rng, (t, cfg.height, cfg.width)) for t in lengths]
    return _TinyBatch(
        frames=frames,
        word_labels=[0, 1, None, None],
        domains=[0, 0, 1, 1],
        class_weights=np.array([1.0, 1.3]),
    )


def _tiny_model_and_batch(seed: int):
    cfg = tiny_config()
    model = build_model(cfg, Rng(seed, "init"), dtype=np.float64)
    batch = _make_tiny_batch(cfg, Rng(seed, "synth"))
    return model, batch


def _batch_objective(model: Model, batch: _TinyBatch, lam: float, speaker_head: bool) -> float:
    outs = [
        forward_sequence(model, f, training=False, lam=lam, need_speaker=True)
        for f in batch.frames
    ]
    loss_word, loss_speaker = batch_losses(
        outs, batch.word_labels, batch.domains, batch.class_weights
    )
    if speaker_head:
        return float(loss_speaker)
    return float(loss_word - lam * loss_speaker)


def check_full_model(seed: int) -> float:
    """Whole-network gradient check at lambda=0.7.

    backward_batch routes speaker gradients through the reversal, so for the
    shared parameters it computes d(word_loss)/dp - lambda*d(speaker_loss)/dp
    while the head parameters get +d(speaker_loss)/dp.  Differencing those
    exact objectives verifies both halves, including the flipped sign.
    """
    lam = FULL_MODEL_LAMBDA
    model, batch = _tiny_model_and_batch(seed)
    outs = [
        forward_sequence(model, f, training=False, lam=lam, need_speaker=True)
        for f in batch.frames
    ]
    grads, _, _ = backward_batch(
        model, outs, batch.word_labels, batch.domains, batch.class_weights, lam
    )

    worst = 0.0
    for name in sorted(model.params):
        speaker_head = name.startswith("adv")
        base = model.params[name]

        def obj(v, _name=name, _head=speaker_head):
            trial = Model(model.config, dict(model.params))
            trial.params[_name] = v
            return _batch_objective(trial, batch, lam, _head)

        fd = finite_diff_grad(obj, base)
        worst = max(worst, rel_error(grads[name], fd))
    return worst


LAYER_CHECKS: Dict[str, Callable[[int], float]] = {
    "dense": check_dense,
    "tanh": check_tanh,
    "dropout": check_dropout,
    "lstm_step": check_lstm_step,
    "lstm_sequence": check_lstm_sequence,
    "softmax_ce": check_softmax_ce,
    "full_model": check_full_model,
}


@contextlib.contextmanager
def reversal_sign_bug():
    """Negative control: make the reversal backward forget its minus sign."""
    original = layers.gradient_reversal_backward

    def broken(dy, lam):
        return -original(dy, lam)

    layers.gradient_reversal_backward = broken
    try:
        yield
    finally:
        layers.gradient_reversal_backward = original


def run_all(
    seeds: Iterable[int] = range(10),
    tolerance: float = TOLERANCE,
    inject_sign_bug: bool = False,
) -> List[CheckRow]:
    ctx = reversal_sign_bug() if inject_sign_bug else contextlib.nullcontext()
    rows = []
    with ctx:
        for name, check in LAYER_CHECKS.items():
            for seed in seeds:
                rows.append(CheckRow(name, int(seed), check(int(seed)), tolerance))
    return rows
