"""Numeric kernels with two interchangeable backends.

The compiled extension is used when it imports cleanly; otherwise the numpy
fallback takes over. ``EMGSSI_BACKEND=c|python`` forces the choice at import
time, and :func:`set_backend` switches at runtime (used by the benchmark and
the cross-backend tests). Both backends implement the same six functions with
identical semantics.
"""

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["c"] = _ckernels

_impl = None
_name = None


def available_backends():
    """Names of the backends that imported successfully."""
    return tuple(sorted(_BACKENDS))


def set_backend(name):
    """Select the kernel backend ('c' or 'python') for this process."""
    global _impl, _name
    if name not in ("c", "python"):
        raise ValueError(f"unknown backend {name!r}")
    if name not in _BACKENDS:
        raise RuntimeError("compiled kernels are not available in this build")
    _impl = _BACKENDS[name]
    _name = name


def current_backend():
    """Name of the backend in use."""
    return _name


set_backend(os.environ.get("EMGSSI_BACKEND") or ("c" if _ckernels is not None else "python"))


def _common_float(*arrays):
    dt = np.result_type(*arrays)
    if dt not in (np.float32, np.float64):
        dt = np.float64
    return tuple(np.ascontiguousarray(a, dtype=dt) for a in arrays)


def conv1d_forward(x, w, stride=1, padding=0):
    """Cross-correlate x [B, Ci, T] with w [Co, Ci, K] -> y [B, Co, To]."""
    x, w = _common_float(x, w)
    return _impl.conv1d_forward(x, w, int(stride), int(padding))


def conv1d_backward_input(w, gy, stride, padding, in_len):
    """Gradient of conv1d_forward with respect to its input."""
    w, gy = _common_float(w, gy)
    return _impl.conv1d_backward_input(w, gy, int(stride), int(padding), int(in_len))


def conv1d_backward_weights(x, gy, stride, padding, kernel_size):
    """Gradient of conv1d_forward with respect to the kernel."""
    x, gy = _common_float(x, gy)
    return _impl.conv1d_backward_weights(x, gy, int(stride), int(padding), int(kernel_size))


def maxpool1d_forward(x, kernel, stride, padding=0):
    """Max pool x [B, C, T]; returns (y, idx) with idx in input coordinates."""
    (x,) = _common_float(x)
    return _impl.maxpool1d_forward(x, int(kernel), int(stride), int(padding))


def maxpool1d_backward(idx, gy, in_len):
    """Scatter gy back through the argmax indices of the pooling forward."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    (gy,) = _common_float(gy)
    return _impl.maxpool1d_backward(idx, gy, int(in_len))


def sosfilt_many(sections, gain, x):
    """Apply a biquad cascade along the last axis of x [N, T], in float64."""
    sections = np.ascontiguousarray(sections, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _impl.sosfilt_many(sections, float(gain), x)
