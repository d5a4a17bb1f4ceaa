"""Pure numpy implementations of the hot kernels.

Signatures mirror the compiled ``_core`` extension exactly; ``stepcast.kernels``
picks one of the two at import time.
"""

import numpy as np


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def lstm_forward(x, W_ih, W_hh, b, h0, c0):
    """Run a batched LSTM over ``x`` of shape (B, T, D).

    Returns hidden states (B, T, H), cell states (B, T, H) and the activated
    gates (B, T, 4H) in i, f, o, g order.
    """
    B, T, D = x.shape
    H = W_hh.shape[1]
    hs = np.empty((B, T, H))
    cs = np.empty((B, T, H))
    gates = np.empty((B, T, 4 * H))
    if T == 0:
        return hs, cs, gates
    pre = (x.reshape(B * T, D) @ W_ih.T).reshape(B, T, 4 * H) + b
    h = h0
    c = c0
    for t in range(T):
        a = pre[:, t] + h @ W_hh.T
        sg = _sigmoid(a[:, : 3 * H])
        g = np.tanh(a[:, 3 * H :])
        i = sg[:, :H]
        f = sg[:, H : 2 * H]
        o = sg[:, 2 * H :]
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t, : 3 * H] = sg
        gates[:, t, 3 * H :] = g
        hs[:, t] = h
        cs[:, t] = c
    return hs, cs, gates


def lstm_backward(x, W_ih, W_hh, h0, c0, hs, cs, gates, dhs, dcs):
    """Backpropagation through time for :func:`lstm_forward`.

    ``dhs`` and ``dcs`` are the upstream gradients on every hidden and cell
    state. Returns ``(dx, dW_ih, dW_hh, db, dh0, dc0)``.
    """
    B, T, D = x.shape
    H = W_hh.shape[1]
    dx = np.zeros((B, T, D))
    dW_ih = np.zeros_like(W_ih)
    dW_hh = np.zeros_like(W_hh)
    db = np.zeros(4 * H)
    if T == 0:
        return dx, dW_ih, dW_hh, db, np.zeros((B, H)), np.zeros((B, H))
    da_all = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i = gates[:, t, :H]
        f = gates[:, t, H : 2 * H]
        o = gates[:, t, 2 * H : 3 * H]
        g = gates[:, t, 3 * H :]
        c_prev = cs[:, t - 1] if t > 0 else c0
        tc = np.tanh(cs[:, t])
        dh = dhs[:, t] + dh_next
        dc = dc_next + dcs[:, t] + dh * o * (1.0 - tc * tc)
        da = da_all[:, t]
        da[:, :H] = dc * g * i * (1.0 - i)
        da[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        da[:, 3 * H :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = da @ W_hh
    flat = da_all.reshape(B * T, 4 * H)
    dW_ih = flat.T @ x.reshape(B * T, D)
    dx = (flat @ W_ih).reshape(B, T, D)
    h_prev = np.concatenate([h0[:, None, :], hs[:, :-1]], axis=1)
    dW_hh = flat.T @ h_prev.reshape(B * T, H)
    db = flat.sum(axis=0)
    return dx, dW_ih, dW_hh, db, dh_next, dc_next


def css_residuals(z, const, ar, ma):
    """Conditional residuals of an ARMA(p, q) model with intercept.

    The first ``p`` residuals are fixed at zero; pre-sample residuals are zero.
    """
    z = np.asarray(z, dtype=np.float64)
    p = len(ar)
    q = len(ma)
    n = len(z)
    e = np.zeros(n)
    for t in range(p, n):
        acc = z[t] - const
        for i in range(p):
            acc -= ar[i] * z[t - 1 - i]
        for j in range(q):
            k = t - 1 - j
            if k >= p:
                acc -= ma[j] * e[k]
        e[t] = acc
    return e


def css_objective(z, const, ar, ma):
    """Sum of squared conditional residuals and its gradient.

    Gradient is ordered ``[const, ar..., ma...]``.
    """
    z = np.asarray(z, dtype=np.float64)
    p = len(ar)
    q = len(ma)
    n = len(z)
    k = 1 + p + q
    e = np.zeros(n)
    de = np.zeros((n, k))
    sse = 0.0
    grad = np.zeros(k)
    for t in range(p, n):
        acc = z[t] - const
        d = np.zeros(k)
        d[0] = -1.0
        for i in range(p):
            acc -= ar[i] * z[t - 1 - i]
            d[1 + i] = -z[t - 1 - i]
        for j in range(q):
            s = t - 1 - j
            if s >= p:
                acc -= ma[j] * e[s]
                d[1 + p + j] -= e[s]
                d -= ma[j] * de[s]
        e[t] = acc
        de[t] = d
        sse += acc * acc
        grad += 2.0 * acc * d
    return sse, grad
