"""1D squeeze-and-excitation residual network for EMG word classification.

Assembles the network (stem conv, three residual stages with channel
attention, global-average-pool head), counts its arithmetic cost, exposes
the attention weights, attributes predictions to input channels, and
persists weights in a self-describing binary container.
"""

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from .nn import (
    BatchNorm1d,
    Conv1d,
    ConvSpec,
    Dropout,
    GlobalAvgPool,
    Linear,
    MaxPool1d,
    ParamSet,
    ReLU,
    activation,
    activation_backward,
    global_avg_pool,
    global_avg_pool_backward,
    he_normal,
    linear,
    linear_backward,
    softmax_cross_entropy,
)

__all__ = [
    "SeResNet1dConfig",
    "AttentionTrace",
    "SEBlock",
    "ResBlock",
    "SeResNet1d",
    "se_block",
    "build_model",
    "forward",
    "input_attribution",
    "count_flops",
    "save_weights",
    "load_weights",
]

WEIGHT_MAGIC = b"EMGW"
WEIGHT_VERSION = 1


@dataclass(frozen=True)
class SeResNet1dConfig:
    """Network hyperparameters.

    stages lists (n_blocks, out_channels, stride of the first block) per
    residual stage. The defaults give the 4-channel, 10-word network:
    stem 4->16 k7 s2 p3, maxpool k3 s2 p1, stages 2x16/s1, 2x32/s2,
    2x64/s2, squeeze-excite reduction 8, dropout 0.5, head FC 64->10.
    """

    in_channels: int = 4
    n_classes: int = 10
    seg_len: int = 3000
    stem_channels: int = 16
    stem_kernel: int = 7
    stem_stride: int = 2
    stem_padding: int = 3
    pool_kernel: int = 3
    pool_stride: int = 2
    pool_padding: int = 1
    stages: tuple = ((2, 16, 1), (2, 32, 2), (2, 64, 2))
    block_kernel: int = 3
    block_padding: int = 1
    se_reduction: int = 8
    dropout_p: float = 0.5

    def __post_init__(self):
        for name in ("in_channels", "n_classes", "seg_len", "stem_channels",
                     "stem_kernel", "stem_stride", "stem_padding",
                     "pool_kernel", "pool_stride", "pool_padding",
                     "block_kernel", "block_padding", "se_reduction"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise ValueError(f"{name} must be an integer, got {v!r}")
        if self.in_channels < 1 or self.n_classes < 2:
            raise ValueError("need at least 1 input channel and 2 classes")
        if self.stem_kernel < 1 or self.stem_stride < 1 or self.stem_padding < 0:
            raise ValueError("invalid stem geometry")
        if self.pool_kernel < 1 or self.pool_stride < 1 or self.pool_padding < 0:
            raise ValueError("invalid pooling geometry")
        if self.block_kernel < 1 or self.block_padding < 0:
            raise ValueError("invalid residual block geometry")
        if self.seg_len + 2 * self.stem_padding < self.stem_kernel:
            raise ValueError("segment shorter than the stem kernel")
        if self.se_reduction < 1:
            raise ValueError("se_reduction must be at least 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if not self.stages:
            raise ValueError("at least one residual stage is required")
        for stage in self.stages:
            if len(stage) != 3:
                raise ValueError("each stage must be (n_blocks, channels, stride)")
            n_blocks, channels, stride = stage
            if n_blocks < 1 or channels < 1 or stride < 1:
                raise ValueError(f"invalid stage spec {stage!r}")
            if channels // self.se_reduction < 1:
                raise ValueError(
                    f"se_reduction {self.se_reduction} leaves no bottleneck "
                    f"units for a {channels}-channel stage")


@dataclass(frozen=True)
class AttentionTrace:
    """Batch-averaged sigmoid gate vectors from every SE block, in network
    order, plus the per-input-channel attribution when one was computed."""

    se_weights: tuple
    input_attribution: np.ndarray = None


def _se_forward(x, w1, w2):
    """Squeeze/excite on a [batch, C, T] tensor through the shared layer
    primitives; returns (y, s, caches for backward)."""
    z, gap_cache = global_avg_pool(x)
    a, relu_cache = activation(linear(z, w1), "relu")
    s, sig_cache = activation(linear(a, w2), "sigmoid")
    return x * s[:, :, None], s, (gap_cache, relu_cache, sig_cache, z, a)


def se_block(f, w1, w2, r):
    """Channel attention on a single [C, T] feature map.

    z = mean over time, s = sigmoid(w2 @ relu(w1 @ z)), output = f scaled
    per channel by s. w1 must be [C//r, C] and w2 [C, C//r]. Returns
    (recalibrated map, gate vector s).
    """
    f = np.asarray(f)
    if f.ndim != 2:
        raise ValueError("expected a [channels, time] feature map")
    c = f.shape[0]
    q = c // int(r)
    if q < 1:
        raise ValueError(f"reduction {r} leaves no bottleneck units for {c} channels")
    w1 = np.asarray(w1)
    w2 = np.asarray(w2)
    if w1.shape != (q, c):
        raise ValueError(f"w1 must have shape {(q, c)}, got {w1.shape}")
    if w2.shape != (c, q):
        raise ValueError(f"w2 must have shape {(c, q)}, got {w2.shape}")
    y, s, _ = _se_forward(f[None], w1, w2)
    return y[0], s[0]


class SEBlock:
    """Squeeze-and-excitation gate with bias-free bottleneck FCs."""

    def __init__(self, channels, reduction, rng, dtype=np.float32):
        q = channels // reduction
        if q < 1:
            raise ValueError("reduction leaves no bottleneck units")
        self.w1 = he_normal(rng, (q, channels), channels, dtype)
        self.w2 = he_normal(rng, (channels, q), q, dtype)
        self.gw1 = np.zeros_like(self.w1)
        self.gw2 = np.zeros_like(self.w2)
        self.last_gate = None
        self._cache = None

    def forward(self, x):
        y, s, caches = _se_forward(x, self.w1, self.w2)
        self.last_gate = s
        self._cache = (x, s) + caches
        return y

    def backward(self, gy):
        x, s, gap_cache, relu_cache, sig_cache, z, a = self._cache
        gx = gy * s[:, :, None]
        gs = (gy * x).sum(axis=2)
        gu = activation_backward(sig_cache, gs)
        ga, gw2, _ = linear_backward(a, self.w2, gu, bias_used=False)
        gh = activation_backward(relu_cache, ga)
        gz, gw1, _ = linear_backward(z, self.w1, gh, bias_used=False)
        self.gw1[...] = gw1
        self.gw2[...] = gw2
        gx += global_avg_pool_backward(gap_cache, gz)
        return gx

    def register(self, prefix, paramset):
        paramset.register(prefix + ".w1", self.w1, self.gw1)
        paramset.register(prefix + ".w2", self.w2, self.gw2)


class ResBlock:
    """conv(k, stride)->BN->ReLU->conv(k, 1)->BN->SE->dropout, added to an
    identity shortcut (1x1 conv + BN projection when the shape changes),
    then ReLU."""

    def __init__(self, in_channels, out_channels, stride, kernel, padding,
                 reduction, dropout_p, rng, dtype=np.float32):
        self.conv1 = Conv1d(ConvSpec(in_channels, out_channels, kernel,
                                     stride, padding, bias=False), rng, dtype)
        self.bn1 = BatchNorm1d(out_channels, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv1d(ConvSpec(out_channels, out_channels, kernel,
                                     1, padding, bias=False), rng, dtype)
        self.bn2 = BatchNorm1d(out_channels, dtype=dtype)
        self.se = SEBlock(out_channels, reduction, rng, dtype)
        self.drop = Dropout(dropout_p)
        self.relu_out = ReLU()
        self.projects = stride != 1 or in_channels != out_channels
        if self.projects:
            self.proj = Conv1d(ConvSpec(in_channels, out_channels, 1,
                                        stride, 0, bias=False), rng, dtype)
            self.proj_bn = BatchNorm1d(out_channels, dtype=dtype)

    def forward(self, x, mode, rng=None):
        h = self.relu1.forward(self.bn1.forward(self.conv1.forward(x), mode))
        h = self.bn2.forward(self.conv2.forward(h), mode)
        h = self.se.forward(h)
        h = self.drop.forward(h, mode, rng)
        if self.projects:
            shortcut = self.proj_bn.forward(self.proj.forward(x), mode)
        else:
            shortcut = x
        return self.relu_out.forward(h + shortcut)

    def backward(self, gy):
        g = self.relu_out.backward(gy)
        gh = self.drop.backward(g)
        gh = self.se.backward(gh)
        gh = self.conv2.backward(self.bn2.backward(gh))
        gh = self.relu1.backward(gh)
        gx = self.conv1.backward(self.bn1.backward(gh))
        if self.projects:
            gx = gx + self.proj.backward(self.proj_bn.backward(g))
        else:
            gx = gx + g
        return gx

    def register(self, prefix, paramset):
        self.conv1.register(prefix + ".conv1", paramset)
        self.bn1.register(prefix + ".bn1", paramset)
        self.conv2.register(prefix + ".conv2", paramset)
        self.bn2.register(prefix + ".bn2", paramset)
        self.se.register(prefix + ".se", paramset)
        if self.projects:
            self.proj.register(prefix + ".proj", paramset)
            self.proj_bn.register(prefix + ".proj_bn", paramset)


class SeResNet1d:
    """The assembled network. Parameters live in the layer objects and are
    shared by reference with the ParamSet, so optimizer updates written
    through the ParamSet are visible to the layers and vice versa.

    Eval-mode forward is read-only and safe to call concurrently;
    train-mode forward and backward mutate BN running statistics and the
    gradient buffers and must not be shared across threads.
    """

    def __init__(self, config, seed, dtype=np.float32):
        self.config = config
        self.mode = "eval"
        rng = np.random.default_rng(seed)
        self.stem = Conv1d(ConvSpec(config.in_channels, config.stem_channels,
                                    config.stem_kernel, config.stem_stride,
                                    config.stem_padding, bias=False), rng, dtype)
        self.stem_bn = BatchNorm1d(config.stem_channels, dtype=dtype)
        self.stem_relu = ReLU()
        self.pool = MaxPool1d(config.pool_kernel, config.pool_stride,
                              config.pool_padding)
        self.blocks = []
        in_ch = config.stem_channels
        for n_blocks, out_ch, stride in config.stages:
            for b in range(n_blocks):
                self.blocks.append(ResBlock(
                    in_ch, out_ch, stride if b == 0 else 1,
                    config.block_kernel, config.block_padding,
                    config.se_reduction, config.dropout_p, rng, dtype))
                in_ch = out_ch
        self.gap = GlobalAvgPool()
        self.head_drop = Dropout(config.dropout_p)
        self.fc = Linear(in_ch, config.n_classes, rng, bias=True, dtype=dtype)
        self._params = ParamSet()
        self.stem.register("stem", self._params)
        self.stem_bn.register("stem_bn", self._params)
        for i, block in enumerate(self.blocks):
            block.register(f"block{i}", self._params)
        self.fc.register("fc", self._params)

    @property
    def dtype(self):
        return self.fc.w.dtype

    def param_set(self):
        return self._params

    def n_params(self):
        return self._params.n_params()

    def _check_input(self, x):
        x = np.asarray(getattr(x, "data", x))
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != self.config.in_channels \
                or x.shape[2] != self.config.seg_len:
            raise ValueError(
                f"expected input shaped [batch, {self.config.in_channels}, "
                f"{self.config.seg_len}], got {np.asarray(x).shape}")
        return x.astype(self.dtype, copy=False), squeeze

    def features(self, x, mode="eval", rng=None):
        """Trunk up to and including global average pooling: [batch, C]."""
        x, squeeze = self._check_input(x)
        self.mode = mode
        h = self.stem_relu.forward(self.stem_bn.forward(self.stem.forward(x), mode))
        h = self.pool.forward(h)
        for block in self.blocks:
            h = block.forward(h, mode, rng)
        z = self.gap.forward(h)
        return z[0] if squeeze else z

    def forward(self, x, mode="eval", rng=None, capture_attention=False):
        """Returns (logits, AttentionTrace or None). A 2-D input yields a
        logit vector, a 3-D batch yields one row per segment."""
        x3, squeeze = self._check_input(x)
        z = self.features(x3, mode, rng)
        h = self.head_drop.forward(z, mode, rng)
        logits = self.fc.forward(h)
        trace = None
        if capture_attention:
            gates = tuple(np.asarray(b.se.last_gate).mean(axis=0).copy()
                          for b in self.blocks)
            trace = AttentionTrace(gates)
        if squeeze:
            logits = logits[0]
        return logits, trace

    def backward(self, glogits):
        """Propagates logit gradients into every parameter gradient buffer;
        returns the gradient w.r.t. the input batch."""
        glogits = np.asarray(glogits)
        if glogits.ndim == 1:
            glogits = glogits[None]
        g = self.fc.backward(glogits)
        g = self.head_drop.backward(g)
        g = self.gap.backward(g)
        for block in reversed(self.blocks):
            g = block.backward(g)
        g = self.pool.backward(g)
        g = self.stem_relu.backward(g)
        g = self.stem_bn.backward(g)
        return self.stem.backward(g)


def build_model(config, seed, dtype=np.float32):
    """Deterministically initialized network: same config and seed give
    bit-identical parameters."""
    return SeResNet1d(config, seed, dtype)


def forward(model, x, mode="eval", rng=None, capture_attention=False):
    return model.forward(x, mode, rng, capture_attention)


def input_attribution(model, segment, label=None, method="occlusion"):
    """Shares of the prediction carried by each input channel; nonnegative,
    sums to 1.

    occlusion (primary): zero one channel at a time and measure the drop in
    the true-class probability; negative drops clamp to 0. When every drop
    is 0 the attribution degenerates to uniform. The class comes from the
    explicit ``label``, else the segment's own label, else the model's
    winning class (unlabeled arrays).

    stem_projection (diagnostic): first-stage SE gates pushed back onto the
    input channels through the absolute stem convolution weight mass.
    """
    x = np.asarray(getattr(segment, "data", segment), dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a single [channels, time] segment")
    n_ch = x.shape[0]
    if label is None:
        label = getattr(segment, "label", None)
    if method == "occlusion":
        logits, _ = model.forward(x, mode="eval")
        if label is None:
            label = int(np.argmax(logits)) + 1
        _, probs = softmax_cross_entropy(logits, label)
        p_full = probs[label - 1]
        drops = np.zeros(n_ch)
        for c in range(n_ch):
            occluded = x.copy()
            occluded[c] = 0.0
            logits_c, _ = model.forward(occluded, mode="eval")
            _, probs_c = softmax_cross_entropy(logits_c, label)
            drops[c] = max(0.0, p_full - probs_c[label - 1])
        total = drops.sum()
        if total <= 0.0:
            return np.full(n_ch, 1.0 / n_ch)
        return drops / total
    if method == "stem_projection":
        _, trace = model.forward(x, mode="eval", capture_attention=True)
        gate = np.asarray(trace.se_weights[0], dtype=np.float64)
        mass = np.abs(model.stem.w.astype(np.float64)).sum(axis=2)
        attr = gate @ mass
        total = attr.sum()
        if total <= 0.0:
            return np.full(n_ch, 1.0 / n_ch)
        return attr / total
    raise ValueError(f"unknown attribution method {method!r}")


def _conv_out_len(t, kernel, stride, padding):
    return (t + 2 * padding - kernel) // stride + 1


def count_flops(config):
    """Arithmetic cost of one single-segment inference.

    Multiply-accumulates count as 2 floating-point operations; bias terms
    add one per output. Convolutions, batch norms (eval form: one scale and
    one shift per element), SE gates, and the classifier FC are counted;
    comparisons in pooling and ReLU are not.
    """
    def conv(cin, cout, k, t_out, bias=False):
        return 2 * cin * k * cout * t_out + (cout * t_out if bias else 0)

    def bn(c, t):
        return 2 * c * t

    def se(c, t):
        q = c // config.se_reduction
        squeeze = 2 * c * t
        bottleneck = 2 * q * c + 2 * c * q
        rescale = 2 * c * t
        return squeeze + bottleneck + rescale

    total = 0
    t = _conv_out_len(config.seg_len, config.stem_kernel, config.stem_stride,
                      config.stem_padding)
    total += conv(config.in_channels, config.stem_channels, config.stem_kernel, t)
    total += bn(config.stem_channels, t)
    t = _conv_out_len(t, config.pool_kernel, config.pool_stride, config.pool_padding)
    in_ch = config.stem_channels
    for n_blocks, out_ch, stride in config.stages:
        for b in range(n_blocks):
            s = stride if b == 0 else 1
            t_out = _conv_out_len(t, config.block_kernel, s, config.block_padding)
            total += conv(in_ch, out_ch, config.block_kernel, t_out)
            total += bn(out_ch, t_out)
            t2 = _conv_out_len(t_out, config.block_kernel, 1, config.block_padding)
            total += conv(out_ch, out_ch, config.block_kernel, t2)
            total += bn(out_ch, t2)
            total += se(out_ch, t2)
            if s != 1 or in_ch != out_ch:
                total += conv(in_ch, out_ch, 1, _conv_out_len(t, 1, s, 0))
                total += bn(out_ch, _conv_out_len(t, 1, s, 0))
            t = t2
            in_ch = out_ch
    total += 2 * in_ch * config.n_classes + config.n_classes
    return int(total)


def _named_tensors(model):
    ps = model.param_set()
    out = list(ps.params.items())
    out.extend(ps.state.items())
    return out


def save_weights(model, path):
    """Writes config and all tensors (parameters plus BN running statistics)
    as float32. Round-trips are bit-exact for float32 models."""
    config_blob = json.dumps(dataclasses.asdict(model.config)).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<H", WEIGHT_VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        for name, arr in _named_tensors(model):
            data = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError(f"weight file truncated in {what}")
    return buf


def load_weights(path, expected_config=None):
    """Rebuilds a model from a weight file.

    When expected_config is given, any differing config field raises with
    that field named. Unknown, duplicate, missing, or misshapen tensors are
    rejected before any state is returned.
    """
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "header") != WEIGHT_MAGIC:
            raise ValueError("not a weight file: bad magic")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "header"))
        if version != WEIGHT_VERSION:
            raise ValueError(f"unsupported weight file version {version}")
        (config_len,) = struct.unpack("<I", _read_exact(fh, 4, "header"))
        raw = json.loads(_read_exact(fh, config_len, "config").decode("utf-8"))
        if "stages" in raw:
            raw["stages"] = tuple(tuple(stage) for stage in raw["stages"])
        try:
            config = SeResNet1dConfig(**raw)
        except TypeError as exc:
            raise ValueError(f"malformed config block: {exc}") from exc
        if expected_config is not None:
            for field in dataclasses.fields(SeResNet1dConfig):
                if getattr(config, field.name) != getattr(expected_config, field.name):
                    raise ValueError(
                        f"config mismatch in field {field.name!r}: file has "
                        f"{getattr(config, field.name)!r}, expected "
                        f"{getattr(expected_config, field.name)!r}")
        model = build_model(config, seed=0)
        ps = model.param_set()
        targets = {**ps.params, **ps.state}
        seen = set()
        while True:
            head = fh.read(2)
            if not head:
                break
            if len(head) != 2:
                raise ValueError("weight file truncated in tensor header")
            (name_len,) = struct.unpack("<H", head)
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, f"tensor {name!r}"))
            dims = struct.unpack(f"<{rank}I",
                                 _read_exact(fh, 4 * rank, f"tensor {name!r}"))
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = _read_exact(fh, 4 * count, f"tensor {name!r}")
            if name not in targets:
                raise ValueError(f"unknown tensor {name!r} in weight file")
            if name in seen:
                raise ValueError(f"duplicate tensor {name!r} in weight file")
            target = targets[name]
            if tuple(dims) != target.shape:
                raise ValueError(
                    f"tensor {name!r} has shape {tuple(dims)}, expected "
                    f"{target.shape}")
            target[...] = np.frombuffer(payload, dtype="<f4").reshape(dims)
            seen.add(name)
        missing = sorted(set(targets) - seen)
        if missing:
            raise ValueError(f"weight file missing tensors: {missing}")
    return model
