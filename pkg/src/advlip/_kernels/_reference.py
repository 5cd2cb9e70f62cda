"""Pure-numpy reference implementation of the recurrent sequence kernels.

This is the import-time fallback when the compiled extension is missing and
the ground truth its outputs are compared against.  Gate order inside the
packed preactivation axis is (input, forget, candidate, output).
"""

import numpy as np


def sigmoid(x):
    """Numerically stable logistic function."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_seq_forward(zx, wh, h0, c0):
    """Run one sequence through an LSTM cell.

    zx: [T, 4u] input-side preactivations (x @ wx + bias), wh: [u, 4u]
    recurrent weights, h0/c0: [u] initial state.  Returns (hs, gates,
    tanh_c, c_prev) where gates holds the post-activation gate values and
    c_prev the cell state entering each step; all are needed by backward.
    """
    steps, four_u = zx.shape
    units = four_u // 4
    hs = np.empty((steps, units), dtype=zx.dtype)
    gates = np.empty((steps, four_u), dtype=zx.dtype)
    tanh_c = np.empty((steps, units), dtype=zx.dtype)
    c_prev = np.empty((steps, units), dtype=zx.dtype)
    h = h0
    c = c0
    for t in range(steps):
        z = zx[t] + h @ wh
        i = sigmoid(z[:units])
        f = sigmoid(z[units : 2 * units])
        g = np.tanh(z[2 * units : 3 * units])
        o = sigmoid(z[3 * units :])
        c_prev[t] = c
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[t, :units] = i
        gates[t, units : 2 * units] = f
        gates[t, 2 * units : 3 * units] = g
        gates[t, 3 * units :] = o
        tanh_c[t] = tc
        hs[t] = h
    return hs, gates, tanh_c, c_prev


def lstm_seq_backward(dhs, gates, tanh_c, c_prev, wh):
    """Backpropagation through time over one sequence.

    dhs: [T, u] upstream gradient on every hidden state.  Returns
    (dz [T, 4u], dh0, dc0); the caller turns dz into weight gradients with
    three matrix products.
    """
    steps, units = dhs.shape
    dz = np.empty((steps, 4 * units), dtype=dhs.dtype)
    dh = np.zeros(units, dtype=dhs.dtype)
    dc = np.zeros(units, dtype=dhs.dtype)
    for t in range(steps - 1, -1, -1):
        dh = dh + dhs[t]
        i = gates[t, :units]
        f = gates[t, units : 2 * units]
        g = gates[t, 2 * units : 3 * units]
        o = gates[t, 3 * units :]
        tc = tanh_c[t]
        dc = dc + dh * o * (1.0 - tc * tc)
        row = dz[t]
        row[:units] = dc * g * i * (1.0 - i)
        row[units : 2 * units] = dc * c_prev[t] * f * (1.0 - f)
        row[2 * units : 3 * units] = dc * i * (1.0 - g * g)
        row[3 * units :] = dh * tc * o * (1.0 - o)
        dc = dc * f
        dh = wh @ row
    return dz, dh, dc
