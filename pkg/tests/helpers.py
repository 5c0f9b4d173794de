"""Shared test utilities: finite-difference gradients and error metrics."""

import numpy as np


def central_diff(f, x, h=1e-5):
    """Elementwise central-difference gradient of the scalar function f with
    respect to x. Mutates x in place during probing and restores it."""
    x = np.asarray(x)
    assert x.dtype == np.float64, "finite differences need 64-bit probes"
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_err(a, b):
    """Max absolute difference scaled by the larger magnitude present."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / denom)
