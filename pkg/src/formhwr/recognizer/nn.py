"""Neural network primitives with explicit forward caches and backward passes.

Everything is double precision and vectorized over the batch. Layouts:
feature maps are (N, C, H, W); sequences are (N, T, D); LSTM gate blocks are
ordered input, forget, cell, output along the 4H axis.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    # clip keeps exp finite; sigmoid is already saturated far before +-500
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


# ---------------------------------------------------------------------------
# Convolution (3x3, stride 1, same padding) via im2col + batched matmul
# ---------------------------------------------------------------------------


def _im2col(padded: np.ndarray, h: int, w: int) -> np.ndarray:
    """(N, C, H+2, W+2) zero-padded maps -> (N, C*9, H*W) patch columns,
    patch index ordered (channel, ki, kj) to match kernel.reshape(O, C*9)."""
    n, c, _, _ = padded.shape
    cols = np.empty((n, c, 9, h * w))
    k = 0
    for i in range(3):
        for j in range(3):
            cols[:, :, k, :] = padded[:, :, i : i + h, j : j + w].reshape(n, c, h * w)
            k += 1
    return cols.reshape(n, c * 9, h * w)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    n, c, h, width = x.shape
    out_ch = w.shape[0]
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col(padded, h, width)
    w_mat = w.reshape(out_ch, c * 9)
    out = np.matmul(w_mat, cols).reshape(n, out_ch, h, width)
    out += b[None, :, None, None]
    return out, (x.shape, cols, w)


def conv2d_backward(dout: np.ndarray, cache):
    x_shape, cols, w = cache
    n, c, h, width = x_shape
    out_ch = w.shape[0]
    dout_flat = dout.reshape(n, out_ch, h * width)
    dw_mat = np.einsum("nol,ncl->oc", dout_flat, cols, optimize=True)
    dw = dw_mat.reshape(w.shape)
    db = dout.sum(axis=(0, 2, 3))
    dcols = np.matmul(w.reshape(out_ch, c * 9).T, dout_flat)
    dcols = dcols.reshape(n, c, 9, h, width)  # contiguous, so this is a view
    dpadded = np.zeros((n, c, h + 2, width + 2))
    k = 0
    for i in range(3):
        for j in range(3):
            dpadded[:, :, i : i + h, j : j + width] += dcols[:, :, k]
            k += 1
    return dpadded[:, :, 1 : h + 1, 1 : width + 1], dw, db


# ---------------------------------------------------------------------------
# ReLU
# ---------------------------------------------------------------------------


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


# ---------------------------------------------------------------------------
# Max pooling with exact divisibility
# ---------------------------------------------------------------------------


def maxpool_forward(x: np.ndarray, pool: tuple[int, int]):
    n, c, h, w = x.shape
    ph, pw = pool
    if h % ph or w % pw:
        raise ValueError(f"pool {pool} does not divide feature map {h}x{w}")
    ho, wo = h // ph, w // pw
    tiles = (
        x.reshape(n, c, ho, ph, wo, pw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, ph * pw)
    )
    idx = tiles.argmax(axis=4)
    out = np.take_along_axis(tiles, idx[..., None], axis=4)[..., 0]
    return out, (x.shape, pool, idx)


def maxpool_backward(dout: np.ndarray, cache) -> np.ndarray:
    x_shape, (ph, pw), idx = cache
    n, c, h, w = x_shape
    ho, wo = h // ph, w // pw
    tiles = np.zeros((n, c, ho, wo, ph * pw))
    np.put_along_axis(tiles, idx[..., None], dout[..., None], axis=4)
    return tiles.reshape(n, c, ho, wo, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


# ---------------------------------------------------------------------------
# Batch normalization over (N, H, W) per channel
# ---------------------------------------------------------------------------

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
):
    """Returns (out, cache, new_running_mean, new_running_var)."""
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        new_mean = (1 - BN_MOMENTUM) * running_mean + BN_MOMENTUM * mean
        new_var = (1 - BN_MOMENTUM) * running_var + BN_MOMENTUM * var
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, gamma, inv, train), new_mean, new_var


def batchnorm_backward(dout: np.ndarray, cache):
    xhat, gamma, inv, train = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    if not train:
        return dxhat * inv[None, :, None, None], dgamma, dbeta
    n = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    sum_dxhat = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    dx = (inv[None, :, None, None] / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# LSTM (left-to-right; callers reverse the time axis for the backward
# direction of a bidirectional layer)
# ---------------------------------------------------------------------------


def lstm_forward(x: np.ndarray, wx: np.ndarray, wh: np.ndarray, b: np.ndarray):
    n, t_steps, _ = x.shape
    hidden = wh.shape[1]
    xg = x @ wx.T + b  # (N, T, 4H), input contributions for all steps
    h_out = np.zeros((n, t_steps, hidden))
    steps = []
    h_prev = np.zeros((n, hidden))
    c_prev = np.zeros((n, hidden))
    for t in range(t_steps):
        gates = xg[:, t] + h_prev @ wh.T
        act = sigmoid(gates)
        i = act[:, :hidden]
        f = act[:, hidden : 2 * hidden]
        g = np.tanh(gates[:, 2 * hidden : 3 * hidden])
        o = act[:, 3 * hidden :]
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        steps.append((i, f, g, o, c_prev, tc, h_prev))
        h_out[:, t] = h
        h_prev, c_prev = h, c
    return h_out, (x, wx, wh, steps)


def lstm_backward(dh_out: np.ndarray, cache):
    x, wx, wh, steps = cache
    n, t_steps, _ = x.shape
    hidden = wh.shape[1]
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * hidden)
    dx = np.zeros_like(x)
    dh_next = np.zeros((n, hidden))
    dc_next = np.zeros((n, hidden))
    for t in range(t_steps - 1, -1, -1):
        i, f, g, o, c_prev, tc, h_prev = steps[t]
        dh = dh_out[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_next = dc * f
        dgates = np.concatenate(
            (
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ),
            axis=1,
        )
        dwx += dgates.T @ x[:, t]
        dwh += dgates.T @ h_prev
        db += dgates.sum(axis=0)
        dx[:, t] = dgates @ wx
        dh_next = dgates @ wh
    return dx, dwx, dwh, db


# ---------------------------------------------------------------------------
# Linear projection over the trailing axis
# ---------------------------------------------------------------------------


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w.T + b, (x, w)


def linear_backward(dout: np.ndarray, cache):
    x, w = cache
    flat_x = x.reshape(-1, x.shape[-1])
    flat_d = dout.reshape(-1, dout.shape[-1])
    dw = flat_d.T @ flat_x
    db = flat_d.sum(axis=0)
    dx = dout @ w
    return dx, dw, db
