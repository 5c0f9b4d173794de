"""Differentiable building blocks with explicit forward and backward passes.

Every op comes as a pure function pair (forward producing a cache, backward
consuming it) plus a thin layer class that owns parameters, preallocated
gradient buffers, and the per-step cache. There is no autodiff graph: the
network wires backward calls by hand in reverse order.

Conventions: convolution is cross-correlation; tensors are [batch, channels,
time] (a leading batch axis is added to 2-D inputs and stripped again);
class labels are the 1-based word ids. Gradient buffers are written in place
so optimizer state can hold stable array references.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels

__all__ = [
    "ConvSpec",
    "ParamSet",
    "conv1d",
    "conv1d_backward",
    "batchnorm1d",
    "batchnorm1d_backward",
    "activation",
    "activation_backward",
    "maxpool1d",
    "maxpool1d_backward",
    "global_avg_pool",
    "global_avg_pool_backward",
    "linear",
    "linear_backward",
    "dropout",
    "dropout_backward",
    "softmax_cross_entropy",
    "softmax_cross_entropy_backward",
    "AdamState",
    "adam_step",
    "he_normal",
    "Conv1d",
    "BatchNorm1d",
    "ReLU",
    "MaxPool1d",
    "GlobalAvgPool",
    "Linear",
    "Dropout",
]


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    bias: bool = True

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel, self.stride) < 1 or self.padding < 0:
            raise ValueError("invalid convolution geometry")

    def out_len(self, in_len):
        return (in_len + 2 * self.padding - self.kernel) // self.stride + 1


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ValueError("expected a [channels, time] or [batch, channels, time] tensor")


def _debatch(y, squeeze):
    return y[0] if squeeze else y


def conv1d(x, spec, weights, bias=None):
    """Cross-correlate x with weights [out, in, kernel]; optional bias."""
    xb, squeeze = _batched(x)
    if xb.shape[1] != spec.in_channels:
        raise ValueError(f"expected {spec.in_channels} input channels, got {xb.shape[1]}")
    if weights.shape != (spec.out_channels, spec.in_channels, spec.kernel):
        raise ValueError("weights do not match the convolution spec")
    if xb.shape[2] + 2 * spec.padding < spec.kernel:
        raise ValueError("kernel longer than padded input")
    y = _kernels.conv1d_forward(xb, weights, spec.stride, spec.padding)
    if spec.bias:
        if bias is None or bias.shape != (spec.out_channels,):
            raise ValueError("bias vector of out_channels values required")
        y += bias[None, :, None]
    return _debatch(y, squeeze)


def conv1d_backward(x, spec, weights, gy):
    """Gradients of conv1d w.r.t. input, weights, and bias (None if no bias)."""
    xb, _ = _batched(x)
    gyb, squeeze = _batched(gy)
    gx = _kernels.conv1d_backward_input(weights, gyb, spec.stride, spec.padding, xb.shape[2])
    gw = _kernels.conv1d_backward_weights(xb, gyb, spec.stride, spec.padding, spec.kernel)
    gb = gyb.sum(axis=(0, 2)) if spec.bias else None
    return _debatch(gx, squeeze), gw, gb


def batchnorm1d(x, gamma, beta, mode="train", eps=1e-5, momentum=0.1,
                running_mean=None, running_var=None):
    """Per-channel normalization over (batch, time).

    train mode uses batch statistics (biased variance) and, when running
    buffers are given, updates them in place as new = (1-momentum)*old +
    momentum*batch. eval mode normalizes with the running statistics.
    Returns (y, cache).
    """
    xb, squeeze = _batched(x)
    if mode == "train":
        if xb.shape[0] * xb.shape[2] < 2:
            raise ValueError("need at least 2 values per channel for batch statistics")
        mean = xb.mean(axis=(0, 2), dtype=np.float64)
        var = xb.var(axis=(0, 2), dtype=np.float64)
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean.astype(running_mean.dtype)
            running_var *= 1.0 - momentum
            running_var += momentum * var.astype(running_var.dtype)
    elif mode == "eval":
        if running_mean is None or running_var is None:
            mean = np.zeros(xb.shape[1])
            var = np.ones(xb.shape[1])
        else:
            mean, var = running_mean.astype(np.float64), running_var.astype(np.float64)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    scale = (gamma * inv_std).astype(xb.dtype)
    shift = (beta - gamma * mean * inv_std).astype(xb.dtype)
    y = xb * scale[None, :, None] + shift[None, :, None]
    xhat = (xb - mean.astype(xb.dtype)[None, :, None]) * inv_std.astype(xb.dtype)[None, :, None]
    cache = (xhat, inv_std, gamma, mode, squeeze)
    return _debatch(y, squeeze), cache


def batchnorm1d_backward(cache, gy):
    """Returns (gx, dgamma, dbeta). In eval mode the statistics are constants."""
    xhat, inv_std, gamma, mode, _ = cache
    gyb, squeeze = _batched(gy)
    dgamma = (gyb * xhat).sum(axis=(0, 2), dtype=np.float64).astype(gamma.dtype)
    dbeta = gyb.sum(axis=(0, 2), dtype=np.float64).astype(gamma.dtype)
    g_scaled = gyb * gamma[None, :, None].astype(gyb.dtype)
    if mode == "train":
        mean_g = g_scaled.mean(axis=(0, 2), dtype=np.float64).astype(gyb.dtype)
        mean_gx = (g_scaled * xhat).mean(axis=(0, 2), dtype=np.float64).astype(gyb.dtype)
        gx = (g_scaled - mean_g[None, :, None] - xhat * mean_gx[None, :, None])
        gx = gx * inv_std.astype(gyb.dtype)[None, :, None]
    else:
        gx = g_scaled * inv_std.astype(gyb.dtype)[None, :, None]
    return _debatch(gx, squeeze), dgamma, dbeta


def activation(x, kind):
    """Elementwise relu or sigmoid; returns (y, cache)."""
    if kind == "relu":
        y = np.maximum(x, 0)
    elif kind == "sigmoid":
        y = np.empty_like(x, dtype=np.result_type(x.dtype, np.float32))
        np.negative(x, out=y)
        np.exp(y, out=y)
        y += 1.0
        np.reciprocal(y, out=y)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return y, (kind, x if kind == "relu" else y)


def activation_backward(cache, gy):
    kind, saved = cache
    if kind == "relu":
        return gy * (saved > 0)
    return gy * saved * (1.0 - saved)


def maxpool1d(x, kernel, stride, padding=0):
    """Windowed max with minus-infinity padding; returns (y, cache)."""
    if kernel < 1:
        raise ValueError("kernel must be at least 1")
    xb, squeeze = _batched(x)
    y, idx = _kernels.maxpool1d_forward(xb, kernel, stride, padding)
    return _debatch(y, squeeze), (idx, xb.shape[2], squeeze)


def maxpool1d_backward(cache, gy):
    idx, in_len, squeeze = cache
    gyb, _ = _batched(gy)
    gx = _kernels.maxpool1d_backward(idx, gyb, in_len)
    return _debatch(gx, squeeze)


def global_avg_pool(x):
    """Mean over the time axis: [*, C, T] -> [*, C]."""
    x = np.asarray(x)
    return x.mean(axis=-1), x.shape[-1]


def global_avg_pool_backward(cache, gy):
    t = cache
    return np.repeat(np.asarray(gy)[..., None], t, axis=-1) / t


def linear(x, weights, bias=None):
    """y = x W^T + b with weights [out, in]; x may be a vector or [batch, in]."""
    x = np.asarray(x)
    if x.shape[-1] != weights.shape[1]:
        raise ValueError("input width does not match the weight matrix")
    y = x @ weights.T
    if bias is not None:
        y = y + bias
    return y


def linear_backward(x, weights, gy, bias_used=True):
    x = np.asarray(x)
    gy = np.asarray(gy)
    if x.ndim == 1:
        gw = np.outer(gy, x)
        gb = gy.copy() if bias_used else None
    else:
        gw = gy.T @ x
        gb = gy.sum(axis=0) if bias_used else None
    return gy @ weights, gw, gb


def dropout(x, p, mode, rng=None):
    """Inverted dropout: train mode zeroes with probability p and rescales
    survivors by 1/(1-p); eval mode is the identity. Returns (y, cache)."""
    if not 0.0 <= p < 1.0:
        raise ValueError("p must be in [0, 1)")
    if mode == "eval" or p == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs a generator")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * mask, mask


def dropout_backward(cache, gy):
    if cache is None:
        return gy
    return gy * cache


def softmax_cross_entropy(logits, labels):
    """Stabilized softmax plus cross-entropy against 1-based labels.

    Accepts a single logit vector with an integer label, or [batch, classes]
    with a label array; the batched loss is the mean. Returns (loss, probs).
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None] if single else z
    idx = (np.atleast_1d(np.asarray(labels, dtype=np.int64)) - 1)
    if idx.min() < 0 or idx.max() >= zb.shape[1]:
        raise ValueError("labels must be 1-based class ids")
    shifted = zb - zb.max(axis=1, keepdims=True)
    ez = np.exp(shifted)
    probs = ez / ez.sum(axis=1, keepdims=True)
    losses = -shifted[np.arange(len(idx)), idx] + np.log(ez.sum(axis=1))
    loss = float(losses.mean())
    return loss, (probs[0] if single else probs)


def softmax_cross_entropy_backward(probs, labels):
    """Gradient of the (mean) loss w.r.t. the logits: probs - onehot."""
    p = np.asarray(probs)
    single = p.ndim == 1
    pb = p[None].copy() if single else p.copy()
    idx = (np.atleast_1d(np.asarray(labels, dtype=np.int64)) - 1)
    pb[np.arange(len(idx)), idx] -= 1.0
    if not single:
        pb /= pb.shape[0]
    return pb[0] if single else pb


class ParamSet:
    """Named parameters with paired gradient buffers plus non-learned state
    (BatchNorm running statistics). Arrays are shared by reference with the
    owning layers; gradients are filled in place by the backward passes."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.state = {}

    def register(self, name, param, grad):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if param.shape != grad.shape:
            raise ValueError("gradient shape must mirror the parameter")
        self.params[name] = param
        self.grads[name] = grad

    def register_state(self, name, array):
        if name in self.state:
            raise ValueError(f"duplicate state name {name!r}")
        self.state[name] = array

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def n_params(self):
        return int(sum(p.size for p in self.params.values()))


class AdamState:
    """First/second moment buffers and the shared step counter."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(params, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, t=None):
    """Bias-corrected Adam update applied in place to every parameter."""
    state.t = int(t) if t is not None else state.t + 1
    if state.t < 1:
        raise ValueError("step index must be at least 1")
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in params.params.items():
        g = params.grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p, dtype=np.float64)
            state.v[name] = np.zeros_like(p, dtype=np.float64)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g, dtype=np.float64)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)


def he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv1d:
    def __init__(self, spec, rng, dtype=np.float32):
        self.spec = spec
        self.w = he_normal(rng, (spec.out_channels, spec.in_channels, spec.kernel),
                           spec.in_channels * spec.kernel, dtype)
        self.gw = np.zeros_like(self.w)
        self.b = np.zeros(spec.out_channels, dtype=dtype) if spec.bias else None
        self.gb = np.zeros_like(self.b) if spec.bias else None
        self._x = None

    def forward(self, x):
        self._x = x
        return conv1d(x, self.spec, self.w, self.b)

    def backward(self, gy):
        gx, gw, gb = conv1d_backward(self._x, self.spec, self.w, gy)
        self.gw[...] = gw
        if self.spec.bias:
            self.gb[...] = gb
        return gx

    def register(self, prefix, paramset):
        paramset.register(prefix + ".w", self.w, self.gw)
        if self.spec.bias:
            paramset.register(prefix + ".b", self.b, self.gb)


class BatchNorm1d:
    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.ggamma = np.zeros_like(self.gamma)
        self.gbeta = np.zeros_like(self.beta)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum
        self._cache = None

    def forward(self, x, mode):
        y, self._cache = batchnorm1d(x, self.gamma, self.beta, mode, self.eps,
                                     self.momentum, self.running_mean, self.running_var)
        return y

    def backward(self, gy):
        gx, dgamma, dbeta = batchnorm1d_backward(self._cache, gy)
        self.ggamma[...] = dgamma
        self.gbeta[...] = dbeta
        return gx

    def register(self, prefix, paramset):
        paramset.register(prefix + ".gamma", self.gamma, self.ggamma)
        paramset.register(prefix + ".beta", self.beta, self.gbeta)
        paramset.register_state(prefix + ".running_mean", self.running_mean)
        paramset.register_state(prefix + ".running_var", self.running_var)


class ReLU:
    def __init__(self):
        self._cache = None

    def forward(self, x):
        y, self._cache = activation(x, "relu")
        return y

    def backward(self, gy):
        return activation_backward(self._cache, gy)


class MaxPool1d:
    def __init__(self, kernel, stride, padding=0):
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self._cache = None

    def forward(self, x):
        y, self._cache = maxpool1d(x, self.kernel, self.stride, self.padding)
        return y

    def backward(self, gy):
        return maxpool1d_backward(self._cache, gy)


class GlobalAvgPool:
    def __init__(self):
        self._cache = None

    def forward(self, x):
        y, self._cache = global_avg_pool(x)
        return y

    def backward(self, gy):
        return global_avg_pool_backward(self._cache, gy)


class Linear:
    def __init__(self, in_features, out_features, rng, bias=True, dtype=np.float32):
        self.w = he_normal(rng, (out_features, in_features), in_features, dtype)
        self.gw = np.zeros_like(self.w)
        self.b = np.zeros(out_features, dtype=dtype) if bias else None
        self.gb = np.zeros_like(self.b) if bias else None
        self._x = None

    def forward(self, x):
        self._x = x
        return linear(x, self.w, self.b)

    def backward(self, gy):
        gx, gw, gb = linear_backward(self._x, self.w, gy, self.b is not None)
        self.gw[...] = gw
        if self.b is not None:
            self.gb[...] = gb
        return gx

    def register(self, prefix, paramset):
        paramset.register(prefix + ".w", self.w, self.gw)
        if self.b is not None:
            paramset.register(prefix + ".b", self.b, self.gb)


class Dropout:
    def __init__(self, p):
        self.p = p
        self._cache = None

    def forward(self, x, mode, rng=None):
        y, self._cache = dropout(x, self.p, mode, rng)
        return y

    def backward(self, gy):
        return dropout_backward(self._cache, gy)
