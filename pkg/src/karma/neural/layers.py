"""Forward/backward pairs for the layers of the dual-stream network.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)`` and returns ``(dx, grads)`` with ``grads`` keyed like
the parameters it received.  Sequences are batch-major: ``(batch, time, channels)``.
Gate orders follow the usual PyTorch layout (LSTM ``i, f, g, o``; GRU ``r, z, n``).
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit, softmax

from ..errors import ShapeMismatch


def _check_features(x, expected, what):
    if x.ndim != 3 or x.shape[2] != expected:
        raise ShapeMismatch(f"{what} expects (batch, time, {expected}) input, got {x.shape}")


# -- conv1d ('same' padding) -------------------------------------------------

def conv1d_forward(x, W, b):
    """``x`` (B, L, Cin), ``W`` (K, Cin, Cout), ``b`` (Cout,) -> (B, L, Cout)."""
    K, cin, _ = W.shape
    _check_features(x, cin, "conv1d")
    left = (K - 1) // 2
    xp = np.pad(x, ((0, 0), (left, K - 1 - left), (0, 0)))
    # patches: (B, L, Cin, K)
    patches = np.lib.stride_tricks.sliding_window_view(xp, K, axis=1)
    out = np.einsum("blck,kco->blo", patches, W) + b
    return out, (patches, W, x.shape, left)


def conv1d_backward(dout, cache):
    patches, W, xshape, left = cache
    K = W.shape[0]
    dW = np.einsum("blck,blo->kco", patches, dout)
    db = dout.sum(axis=(0, 1))
    dpatch = np.einsum("blo,kco->blck", dout, W)
    B, L, C = xshape
    dxp = np.zeros((B, L + K - 1, C))
    for k in range(K):
        dxp[:, k:k + L, :] += dpatch[..., k]
    return dxp[:, left:left + L, :], {"W": dW, "b": db}


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout, mask):
    return dout * mask


# -- max pooling --------------------------------------------------------------

def maxpool_forward(x, size):
    """Non-overlapping max pooling along time; a ragged tail is dropped."""
    B, L, C = x.shape
    n = L // size
    if n < 1:
        raise ShapeMismatch(f"cannot pool length {L} with size {size}")
    blocks = x[:, :n * size, :].reshape(B, n, size, C)
    arg = blocks.argmax(axis=2)
    out = np.take_along_axis(blocks, arg[:, :, None, :], axis=2)[:, :, 0, :]
    return out, (arg, x.shape, size)


def maxpool_backward(dout, cache):
    arg, (B, L, C), size = cache
    n = arg.shape[1]
    dblocks = np.zeros((B, n, size, C))
    np.put_along_axis(dblocks, arg[:, :, None, :], dout[:, :, None, :], axis=2)
    dx = np.zeros((B, L, C))
    dx[:, :n * size, :] = dblocks.reshape(B, n * size, C)
    return dx


# -- LSTM -----------------------------------------------------------------------

def lstm_forward(x, Wx, Wh, b, h0=None, c0=None):
    """Single-layer LSTM; returns the final hidden state (B, H)."""
    B, T, _ = x.shape
    H = Wh.shape[0]
    _check_features(x, Wx.shape[0], "lstm")
    h = np.zeros((B, H)) if h0 is None else h0
    c = np.zeros((B, H)) if c0 is None else c0
    steps = []
    for t in range(T):
        a = x[:, t, :] @ Wx + h @ Wh + b
        i = expit(a[:, :H])
        f = expit(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = expit(a[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        steps.append((h, c, i, f, g, o, tc))
        h, c = h_new, c_new
    return h, (x, Wx, Wh, steps)


def lstm_backward(dh, cache):
    x, Wx, Wh, steps = cache
    B, T, _ = x.shape
    H = Wh.shape[0]
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * H)
    dx = np.zeros_like(x)
    dc = np.zeros((B, H))
    for t in reversed(range(T)):
        h_prev, c_prev, i, f, g, o, tc = steps[t]
        do = dh * tc
        dc = dc + dh * o * (1 - tc ** 2)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        da = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g ** 2), do * o * (1 - o)], axis=1)
        dWx += x[:, t, :].T @ da
        dWh += h_prev.T @ da
        db += da.sum(axis=0)
        dx[:, t, :] = da @ Wx.T
        dh = da @ Wh.T
        dc = dc * f
    return dx, {"Wx": dWx, "Wh": dWh, "b": db}


# -- GRU --------------------------------------------------------------------------

def gru_forward(x, Wx, Wh, bx, bh, h0=None):
    """Single-direction GRU over ``x``; returns the final hidden state (B, H)."""
    B, T, _ = x.shape
    H = Wh.shape[0]
    _check_features(x, Wx.shape[0], "gru")
    h = np.zeros((B, H)) if h0 is None else h0
    steps = []
    for t in range(T):
        gx = x[:, t, :] @ Wx + bx
        gh = h @ Wh + bh
        r = expit(gx[:, :H] + gh[:, :H])
        z = expit(gx[:, H:2 * H] + gh[:, H:2 * H])
        n = np.tanh(gx[:, 2 * H:] + r * gh[:, 2 * H:])
        steps.append((h, r, z, n, gh[:, 2 * H:]))
        h = (1 - z) * n + z * h
    return h, (x, Wx, Wh, steps)


def gru_backward(dh, cache):
    x, Wx, Wh, steps = cache
    T = x.shape[1]
    H = Wh.shape[0]
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    dbx = np.zeros(3 * H)
    dbh = np.zeros(3 * H)
    dx = np.zeros_like(x)
    for t in reversed(range(T)):
        h_prev, r, z, n, ghn = steps[t]
        dn = dh * (1 - z)
        dz = dh * (h_prev - n)
        dan = dn * (1 - n ** 2)
        dr = dan * ghn
        dar = dr * r * (1 - r)
        daz = dz * z * (1 - z)
        dgx = np.concatenate([dar, daz, dan], axis=1)
        dgh = np.concatenate([dar, daz, dan * r], axis=1)
        dWx += x[:, t, :].T @ dgx
        dbx += dgx.sum(axis=0)
        dWh += h_prev.T @ dgh
        dbh += dgh.sum(axis=0)
        dx[:, t, :] = dgx @ Wx.T
        dh = dh * z + dgh @ Wh.T
    return dx, {"Wx": dWx, "Wh": dWh, "bx": dbx, "bh": dbh}


def bigru_forward(x, fwd, bwd):
    """Bidirectional GRU; output is ``[h_forward_T, h_backward_0]`` of width ``2H``.

    ``fwd``/``bwd`` are dicts with keys ``Wx, Wh, bx, bh``.
    """
    hf, cf = gru_forward(x, fwd["Wx"], fwd["Wh"], fwd["bx"], fwd["bh"])
    hb, cb = gru_forward(x[:, ::-1, :], bwd["Wx"], bwd["Wh"], bwd["bx"], bwd["bh"])
    return np.concatenate([hf, hb], axis=1), (cf, cb, hf.shape[1])


def bigru_backward(dout, cache):
    cf, cb, H = cache
    dxf, gf = gru_backward(dout[:, :H], cf)
    dxb, gb = gru_backward(dout[:, H:], cb)
    return dxf + dxb[:, ::-1, :], gf, gb


# -- attention ------------------------------------------------------------------------

def attend(Q, K, V, d_k):
    """Scaled dot-product attention ``softmax(Q K^T / sqrt(d_k)) V``.

    Works on 2-D ``(tokens, dim)`` matrices or batched 3-D arrays.
    """
    Q, K, V = (np.asarray(m, dtype=float) for m in (Q, K, V))
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ShapeMismatch(f"incompatible shapes Q{Q.shape} K{K.shape} V{V.shape}")
    if d_k != K.shape[-1]:
        raise ShapeMismatch(f"d_k={d_k} but keys have dimension {K.shape[-1]}")
    return attend_forward(Q, K, V, d_k)[0]


def attend_forward(Q, K, V, d_k):
    scores = Q @ np.swapaxes(K, -1, -2) / np.sqrt(d_k)
    P = softmax(scores, axis=-1)
    return P @ V, (Q, K, V, P, d_k)


def attend_backward(dout, cache):
    Q, K, V, P, d_k = cache
    dV = np.swapaxes(P, -1, -2) @ dout
    dP = dout @ np.swapaxes(V, -1, -2)
    dS = P * (dP - np.sum(dP * P, axis=-1, keepdims=True)) / np.sqrt(d_k)
    dQ = dS @ K
    dK = np.swapaxes(dS, -1, -2) @ Q
    return dQ, dK, dV


# -- dense ------------------------------------------------------------------------------

def dense_forward(x, W, b):
    return x @ W + b, (x, W)


def dense_backward(dout, cache):
    x, W = cache
    return dout @ W.T, {"W": x.T @ dout, "b": dout.sum(axis=0)}
