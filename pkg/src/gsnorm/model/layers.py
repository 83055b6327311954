"""Layer primitives with explicit backward passes.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward`` takes
the upstream gradient and the cache and returns input and parameter gradients.
Arrays are channels-last throughout.
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-3


def sigmoid(x):
    # split on sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# --- 1-D convolution over the time axis (same padding) ---


def conv1d_forward(x, kernel, bias):
    """x (N, D, C), kernel (F, C, w) -> (N, D, F)."""
    N, D, C = x.shape
    F, _, w = kernel.shape
    p = w // 2
    xp = np.pad(x, ((0, 0), (p, p), (0, 0)))
    cols = np.stack([xp[:, j : j + D, :] for j in range(w)], axis=2).reshape(N * D, w * C)
    Wm = kernel.transpose(2, 1, 0).reshape(w * C, F)
    out = (cols @ Wm + bias).reshape(N, D, F)
    return out, (cols, Wm, x.shape, w)


def conv1d_backward(dout, cache):
    cols, Wm, (N, D, C), w = cache
    F = dout.shape[-1]
    d2 = dout.reshape(N * D, F)
    dkernel = (cols.T @ d2).reshape(w, C, F).transpose(2, 1, 0)
    dbias = d2.sum(axis=0)
    dcols = (d2 @ Wm.T).reshape(N, D, w, C)
    p = w // 2
    dxp = np.zeros((N, D + 2 * p, C), dtype=dout.dtype)
    for j in range(w):
        dxp[:, j : j + D] += dcols[:, :, j]
    return dxp[:, p : p + D], dkernel, dbias


# --- 2-D convolution (3x3-style, same padding, stride 1) ---


def conv2d_forward(x, kernel, bias):
    """x (N, H, W, C), kernel (kh, kw, C, F) -> (N, H, W, F)."""
    N, H, W, C = x.shape
    kh, kw, _, F = kernel.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = np.empty((N, H, W, kh * kw, C), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i * kw + j] = xp[:, i : i + H, j : j + W]
    cols = cols.reshape(N * H * W, kh * kw * C)
    Km = kernel.reshape(kh * kw * C, F)
    out = (cols @ Km + bias).reshape(N, H, W, F)
    return out, (cols, Km, x.shape, (kh, kw))


def conv2d_backward(dout, cache):
    cols, Km, (N, H, W, C), (kh, kw) = cache
    F = dout.shape[-1]
    d2 = dout.reshape(-1, F)
    dkernel = (cols.T @ d2).reshape(kh, kw, C, F)
    dbias = d2.sum(axis=0)
    dcols = (d2 @ Km.T).reshape(N, H, W, kh * kw, C)
    ph, pw = kh // 2, kw // 2
    dxp = np.zeros((N, H + 2 * ph, W + 2 * pw, C), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + H, j : j + W] += dcols[:, :, :, i * kw + j]
    return dxp[:, ph : ph + H, pw : pw + W], dkernel, dbias


# --- 2x2 max pooling, stride 2, floor ---


def maxpool_forward(x):
    N, H, W, C = x.shape
    Ho, Wo = H // 2, W // 2
    win = x[:, : 2 * Ho, : 2 * Wo].reshape(N, Ho, 2, Wo, 2, C).transpose(0, 1, 3, 5, 2, 4).reshape(N, Ho, Wo, C, 4)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape)


def maxpool_backward(dout, cache):
    arg, (N, H, W, C) = cache
    Ho, Wo = H // 2, W // 2
    dwin = np.zeros((N, Ho, Wo, C, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros((N, H, W, C), dtype=dout.dtype)
    dx[:, : 2 * Ho, : 2 * Wo] = dwin.reshape(N, Ho, Wo, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(N, 2 * Ho, 2 * Wo, C)
    return dx


# --- ReLU, dense ---


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def dense_forward(x, kernel, bias):
    return x @ kernel + bias, x


def dense_backward(dout, x, kernel):
    return dout @ kernel.T, x.T @ dout, dout.sum(axis=0)


# --- batch normalization over the last axis ---


def batchnorm_forward(x, gamma, beta, mean, var, training):
    """Normalize per feature (last axis) over all leading axes.

    In training the batch statistics are used and returned so the caller can
    fold them into the running estimates.
    """
    F = x.shape[-1]
    x2 = x.reshape(-1, F)
    if training:
        mu = x2.mean(axis=0)
        v = x2.var(axis=0)
    else:
        mu, v = mean, var
    inv = 1.0 / np.sqrt(v + BN_EPS)
    xhat = (x2 - mu) * inv
    out = (gamma * xhat + beta).reshape(x.shape)
    return out, (xhat, inv, gamma, x.shape, training), (mu, v)


def batchnorm_backward(dout, cache):
    xhat, inv, gamma, shape, training = cache
    F = shape[-1]
    d2 = dout.reshape(-1, F)
    dgamma = (d2 * xhat).sum(axis=0)
    dbeta = d2.sum(axis=0)
    dxhat = d2 * gamma
    if training:
        n = d2.shape[0]
        dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    else:
        dx = dxhat * inv
    return dx.reshape(shape), dgamma, dbeta


# --- inverted dropout ---


def dropout_mask(rng: np.random.Generator, shape, rate: float, dtype) -> np.ndarray:
    keep = rng.random(shape) >= rate
    return (keep / (1.0 - rate)).astype(dtype)


# --- LSTM over a full sequence (gate order i, f, g, o) ---


def lstm_forward(x, kernel, recurrent, bias):
    """x (N, D, I) -> hidden sequence (N, D, H); zero initial state."""
    N, D, _ = x.shape
    H = recurrent.shape[0]
    zx = (x.reshape(N * D, -1) @ kernel).reshape(N, D, 4 * H) + bias
    h = np.zeros((N, H), dtype=x.dtype)
    c = np.zeros((N, H), dtype=x.dtype)
    hs = np.empty((N, D, H), dtype=x.dtype)
    steps = []
    for t in range(D):
        z = zx[:, t] + h @ recurrent
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = sigmoid(z[:, 3 * H :])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        steps.append((i, f, g, o, c_prev, h_prev, tc))
    return hs, (x, steps, kernel, recurrent)


def lstm_backward(dhs, cache):
    x, steps, kernel, recurrent = cache
    N, D, I = x.shape
    H = recurrent.shape[0]
    dz_all = np.empty((N, D, 4 * H), dtype=dhs.dtype)
    drec = np.zeros_like(recurrent)
    dh_next = np.zeros((N, H), dtype=dhs.dtype)
    dc_next = np.zeros((N, H), dtype=dhs.dtype)
    for t in reversed(range(D)):
        i, f, g, o, c_prev, h_prev, tc = steps[t]
        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)],
            axis=1,
        )
        dz_all[:, t] = dz
        drec += h_prev.T @ dz
        dh_next = dz @ recurrent.T
    dz2 = dz_all.reshape(N * D, 4 * H)
    dkernel = x.reshape(N * D, I).T @ dz2
    dbias = dz2.sum(axis=0)
    dx = (dz2 @ kernel.T).reshape(N, D, I)
    return dx, dkernel, drec, dbias


# --- softmax cross-entropy ---


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``)."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-np.mean(logp[np.arange(len(labels)), labels]))
