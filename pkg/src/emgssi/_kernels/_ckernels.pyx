# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: 1-D convolution forward/backward, max pooling, and the
biquad cascade filter. Loops are arranged so no two threads write the same
output element; results are independent of the OpenMP schedule."""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _imax(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a > b else b


cdef inline Py_ssize_t _imin(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a < b else b


def conv1d_forward(real[:, :, ::1] x, real[:, :, ::1] w, int stride, int padding):
    """Cross-correlate x [B, Ci, T] with w [Co, Ci, K] -> y [B, Co, To]."""
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], T = x.shape[2]
    cdef Py_ssize_t Co = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t To = (T + 2 * padding - K) // stride + 1
    dtype = np.float32 if real is float else np.float64
    y = np.zeros((B, Co, To), dtype=dtype)
    cdef real[:, :, ::1] yv = y
    cdef Py_ssize_t[::1] lo = np.empty(K, dtype=np.intp)
    cdef Py_ssize_t[::1] hi = np.empty(K, dtype=np.intp)
    cdef Py_ssize_t b, co, ci, k, to, off
    cdef real wv
    for k in range(K):
        off = k - padding
        lo[k] = _imax(0, (-off + stride - 1) // stride)
        hi[k] = _imin(To, (T - 1 - off) // stride + 1) if T - 1 - off >= 0 else 0
    with nogil:
        for b in prange(B, schedule='static'):
            for co in range(Co):
                for ci in range(Ci):
                    for k in range(K):
                        wv = w[co, ci, k]
                        off = k - padding
                        for to in range(lo[k], hi[k]):
                            yv[b, co, to] += wv * x[b, ci, to * stride + off]
    return y


def conv1d_backward_input(real[:, :, ::1] w, real[:, :, ::1] gy,
                          int stride, int padding, Py_ssize_t in_len):
    """Gradient of conv1d_forward w.r.t. x. gy is [B, Co, To]."""
    cdef Py_ssize_t Co = w.shape[0], Ci = w.shape[1], K = w.shape[2]
    cdef Py_ssize_t B = gy.shape[0], To = gy.shape[2]
    dtype = np.float32 if real is float else np.float64
    gx = np.zeros((B, Ci, in_len), dtype=dtype)
    cdef real[:, :, ::1] gxv = gx
    cdef Py_ssize_t[::1] lo = np.empty(K, dtype=np.intp)
    cdef Py_ssize_t[::1] hi = np.empty(K, dtype=np.intp)
    cdef Py_ssize_t b, co, ci, k, to, off
    cdef real wv
    for k in range(K):
        off = k - padding
        lo[k] = _imax(0, (-off + stride - 1) // stride)
        hi[k] = _imin(To, (in_len - 1 - off) // stride + 1) if in_len - 1 - off >= 0 else 0
    cdef Py_ssize_t end4
    with nogil:
        for b in prange(B, schedule='static'):
            for ci in range(Ci):
                for co in range(Co):
                    for k in range(K):
                        wv = w[co, ci, k]
                        off = k - padding
                        to = lo[k]
                        end4 = lo[k] + ((hi[k] - lo[k]) // 4) * 4
                        while to < end4:
                            gxv[b, ci, to * stride + off] += wv * gy[b, co, to]
                            gxv[b, ci, (to + 1) * stride + off] += wv * gy[b, co, to + 1]
                            gxv[b, ci, (to + 2) * stride + off] += wv * gy[b, co, to + 2]
                            gxv[b, ci, (to + 3) * stride + off] += wv * gy[b, co, to + 3]
                            to = to + 4
                        while to < hi[k]:
                            gxv[b, ci, to * stride + off] += wv * gy[b, co, to]
                            to = to + 1
    return gx


def conv1d_backward_weights(real[:, :, ::1] x, real[:, :, ::1] gy,
                            int stride, int padding, Py_ssize_t kernel_size):
    """Gradient of conv1d_forward w.r.t. w. Returns [Co, Ci, K]."""
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], T = x.shape[2]
    cdef Py_ssize_t Co = gy.shape[1], To = gy.shape[2], K = kernel_size
    dtype = np.float32 if real is float else np.float64
    gw = np.zeros((Co, Ci, K), dtype=dtype)
    cdef real[:, :, ::1] gwv = gw
    cdef Py_ssize_t[::1] lo = np.empty(K, dtype=np.intp)
    cdef Py_ssize_t[::1] hi = np.empty(K, dtype=np.intp)
    cdef Py_ssize_t b, co, ci, k, to, off
    for k in range(K):
        off = k - padding
        lo[k] = _imax(0, (-off + stride - 1) // stride)
        hi[k] = _imin(To, (T - 1 - off) // stride + 1) if T - 1 - off >= 0 else 0
    cdef Py_ssize_t end4
    cdef real a0, a1, a2, a3
    with nogil:
        for co in prange(Co, schedule='static'):
            for ci in range(Ci):
                for k in range(K):
                    off = k - padding
                    # four independent accumulators break the serial
                    # dependency of the long reduction
                    a0 = 0
                    a1 = 0
                    a2 = 0
                    a3 = 0
                    end4 = lo[k] + ((hi[k] - lo[k]) // 4) * 4
                    for b in range(B):
                        to = lo[k]
                        while to < end4:
                            a0 = a0 + gy[b, co, to] * x[b, ci, to * stride + off]
                            a1 = a1 + gy[b, co, to + 1] * x[b, ci, (to + 1) * stride + off]
                            a2 = a2 + gy[b, co, to + 2] * x[b, ci, (to + 2) * stride + off]
                            a3 = a3 + gy[b, co, to + 3] * x[b, ci, (to + 3) * stride + off]
                            to = to + 4
                        while to < hi[k]:
                            a0 = a0 + gy[b, co, to] * x[b, ci, to * stride + off]
                            to = to + 1
                    gwv[co, ci, k] = (a0 + a1) + (a2 + a3)
    return gw


def maxpool1d_forward(real[:, :, ::1] x, int kernel, int stride, int padding):
    """Windowed max with -inf padding semantics; idx records the input
    coordinate of each window's first maximum."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], T = x.shape[2]
    cdef Py_ssize_t To = (T + 2 * padding - kernel) // stride + 1
    dtype = np.float32 if real is float else np.float64
    y = np.empty((B, C, To), dtype=dtype)
    idx = np.empty((B, C, To), dtype=np.int64)
    cdef real[:, :, ::1] yv = y
    cdef cnp.int64_t[:, :, ::1] iv = idx
    cdef Py_ssize_t b, c, to, kk, i, start, best_i
    cdef real v, best
    cdef bint found
    with nogil:
        for b in prange(B, schedule='static'):
            for c in range(C):
                for to in range(To):
                    start = to * stride - padding
                    found = False
                    best = 0
                    best_i = 0
                    for kk in range(kernel):
                        i = start + kk
                        if i < 0 or i >= T:
                            continue
                        v = x[b, c, i]
                        if not found or v > best:
                            best = v
                            best_i = i
                            found = True
                    yv[b, c, to] = best
                    iv[b, c, to] = best_i
    return y, idx


def maxpool1d_backward(cnp.int64_t[:, :, ::1] idx, real[:, :, ::1] gy, Py_ssize_t in_len):
    """Scatter gy back to the argmax positions recorded by the forward."""
    cdef Py_ssize_t B = gy.shape[0], C = gy.shape[1], To = gy.shape[2]
    dtype = np.float32 if real is float else np.float64
    gx = np.zeros((B, C, in_len), dtype=dtype)
    cdef real[:, :, ::1] gxv = gx
    cdef Py_ssize_t b, c, to
    with nogil:
        for b in prange(B, schedule='static'):
            for c in range(C):
                for to in range(To):
                    gxv[b, c, idx[b, c, to]] += gy[b, c, to]
    return gx


def sosfilt_many(double[:, ::1] sections, double gain, double[:, ::1] x):
    """Run a biquad cascade (direct form II transposed, zero initial state)
    over each row of x [N, T]. Double precision only."""
    cdef Py_ssize_t N = x.shape[0], T = x.shape[1], S = sections.shape[0]
    y = np.empty((N, T), dtype=np.float64)
    state = np.zeros((N, S, 2), dtype=np.float64)
    cdef double[:, ::1] yv = y
    cdef double[:, :, ::1] zv = state
    cdef Py_ssize_t n, t, s
    cdef double v, vin
    with nogil:
        for n in prange(N, schedule='static'):
            for t in range(T):
                v = x[n, t]
                for s in range(S):
                    vin = v
                    v = sections[s, 0] * vin + zv[n, s, 0]
                    zv[n, s, 0] = sections[s, 1] * vin - sections[s, 3] * v + zv[n, s, 1]
                    zv[n, s, 1] = sections[s, 2] * vin - sections[s, 4] * v
                yv[n, t] = gain * v
    return y
