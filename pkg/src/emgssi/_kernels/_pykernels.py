"""Pure-numpy implementations of the hot kernels.

Fallback backend used when the compiled extension is unavailable (or when
forced via EMGSSI_BACKEND=python). Semantics are identical to the Cython
versions; summation order may differ, so cross-backend agreement is up to
floating-point rounding, not bit-exact.
"""

import numpy as np


def conv1d_forward(x, w, stride, padding):
    """Cross-correlate x [B, Ci, T] with w [Co, Ci, K] -> y [B, Co, To]."""
    B, Ci, T = x.shape
    Co, _, K = w.shape
    To = (T + 2 * padding - K) // stride + 1
    if padding:
        xp = np.zeros((B, Ci, T + 2 * padding), dtype=x.dtype)
        xp[:, :, padding:padding + T] = x
    else:
        xp = x
    # Accumulate one kernel tap at a time; each tap is a strided slice + GEMM.
    acc = np.zeros((B, To, Co), dtype=x.dtype)
    for k in range(K):
        seg = xp[:, :, k:k + (To - 1) * stride + 1:stride]  # [B, Ci, To]
        acc += np.matmul(seg.transpose(0, 2, 1), w[:, :, k].T)
    return np.ascontiguousarray(acc.transpose(0, 2, 1))


def conv1d_backward_input(w, gy, stride, padding, in_len):
    """Gradient of conv1d_forward w.r.t. x. gy is [B, Co, To]."""
    B, Co, To = gy.shape
    _, Ci, K = w.shape
    gxp = np.zeros((B, Ci, in_len + 2 * padding), dtype=gy.dtype)
    gyt = gy.transpose(0, 2, 1)  # [B, To, Co]
    for k in range(K):
        contrib = np.matmul(gyt, w[:, :, k])  # [B, To, Ci]
        gxp[:, :, k:k + (To - 1) * stride + 1:stride] += contrib.transpose(0, 2, 1)
    if padding:
        gxp = gxp[:, :, padding:padding + in_len]
    return np.ascontiguousarray(gxp)


def conv1d_backward_weights(x, gy, stride, padding, kernel_size):
    """Gradient of conv1d_forward w.r.t. w. Returns [Co, Ci, K]."""
    B, Ci, T = x.shape
    Co, To = gy.shape[1], gy.shape[2]
    if padding:
        xp = np.zeros((B, Ci, T + 2 * padding), dtype=x.dtype)
        xp[:, :, padding:padding + T] = x
    else:
        xp = x
    gw = np.empty((Co, Ci, kernel_size), dtype=gy.dtype)
    for k in range(kernel_size):
        seg = xp[:, :, k:k + (To - 1) * stride + 1:stride]  # [B, Ci, To]
        gw[:, :, k] = np.tensordot(gy, seg, axes=([0, 2], [0, 2]))
    return gw


def maxpool1d_forward(x, kernel, stride, padding):
    """Windowed max with -inf padding. Returns (y, idx) where idx holds the
    input coordinate of each window's first maximum."""
    B, C, T = x.shape
    To = (T + 2 * padding - kernel) // stride + 1
    xp = np.full((B, C, T + 2 * padding), -np.inf, dtype=x.dtype)
    xp[:, :, padding:padding + T] = x
    s0, s1, s2 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(B, C, To, kernel), strides=(s0, s1, s2 * stride, s2),
        writeable=False)
    y = windows.max(axis=-1)
    arg = windows.argmax(axis=-1)  # first maximum on ties
    idx = arg + (np.arange(To, dtype=np.int64) * stride - padding)
    return np.ascontiguousarray(y), np.ascontiguousarray(idx)


def maxpool1d_backward(idx, gy, in_len):
    """Scatter gy back to the argmax positions recorded by the forward."""
    B, C, To = gy.shape
    gx = np.zeros((B, C, in_len), dtype=gy.dtype)
    rows = np.repeat(np.arange(B * C), To)
    np.add.at(gx.reshape(B * C, in_len), (rows, idx.reshape(-1)), gy.reshape(-1))
    return gx


def sosfilt_many(sections, gain, x):
    """Run a biquad cascade (direct form II transposed, zero initial state)
    over each row of x [N, T]. Always double precision."""
    y = np.array(x, dtype=np.float64, copy=True)
    N, T = y.shape
    for b0, b1, b2, a1, a2 in sections:
        z1 = np.zeros(N)
        z2 = np.zeros(N)
        for t in range(T):
            xn = y[:, t].copy()
            yn = b0 * xn + z1
            z1 = b1 * xn - a1 * yn + z2
            z2 = b2 * xn - a2 * yn
            y[:, t] = yn
    y *= gain
    return y
