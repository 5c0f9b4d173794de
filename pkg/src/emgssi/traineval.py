"""Training loop, evaluation metrics, filter/channel ablations, and t-SNE
feature analysis.

The preprocessing pipeline order is fixed: bandpass filter (when enabled),
then channel masking, then train-time augmentation, then the network. The
held-out split doubles as the validation set; there is no third split and
no early stopping.
"""

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, augment_batch
from .dsp import FilterSpec, apply_iir, design_bandpass
from .model import SeResNet1dConfig, build_model
from .nn import (
    AdamState,
    adam_step,
    softmax_cross_entropy,
    softmax_cross_entropy_backward,
)

__all__ = [
    "TrainConfig",
    "ConfusionMatrix",
    "AblationReport",
    "EmbeddingResult",
    "train",
    "evaluate",
    "ablate",
    "extract_features",
    "tsne_embed",
    "separability_score",
    "write_metrics_csv",
    "write_confusion_csv",
    "write_ablation_csv",
    "write_embedding_csv",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, augmentation, and pipeline flags for one training run.

    channel_mask holds one flag per input channel; masked-off channels are
    zeroed after filtering. filter_on toggles the bandpass stage.
    """

    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    filter_on: bool = True
    channel_mask: tuple = (True, True, True, True)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.lr < 0:
            raise ValueError("learning rate must be nonnegative")
        if not any(self.channel_mask):
            raise ValueError("at least one channel must stay unmasked")


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[i, j] = segments of true class i+1 predicted as class j+1."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(counts < 0) or not np.issubdtype(counts.dtype, np.integer):
            raise ValueError("counts must be nonnegative integers")
        object.__setattr__(self, "counts", counts)

    @property
    def accuracy(self):
        total = self.counts.sum()
        if total == 0:
            return 0.0
        return float(np.trace(self.counts) / total)

    @property
    def row_sums(self):
        return self.counts.sum(axis=1)


@dataclass(frozen=True)
class AblationReport:
    """Accuracies and confusion matrices for the controlled arms: baseline
    (filter on, all channels), no_filter, and the four single-channel masks.
    All arms share the same initialization and data-order seed."""

    accuracies: dict
    confusions: dict
    seed: int

    @property
    def best_single_channel(self):
        channels = {k: v for k, v in self.accuracies.items()
                    if k.startswith("channel_")}
        return max(channels, key=channels.get)

    @property
    def single_channel_best_accuracy(self):
        return self.accuracies[self.best_single_channel]


@dataclass(frozen=True)
class EmbeddingResult:
    """2-d embedding with class labels; source records whether the points
    came from raw input windows or learned 64-d features."""

    points: np.ndarray
    labels: np.ndarray
    source: str

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if points.ndim != 2 or points.shape[1] != 2:
            raise ValueError("points must be n x 2")
        if labels.shape != (points.shape[0],):
            raise ValueError("one label per point required")
        if not np.all(np.isfinite(points)):
            raise ValueError("embedding coordinates must be finite")
        if self.source not in ("raw_input", "deep_feature"):
            raise ValueError(f"unknown source {self.source!r}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)


def _stack(segments):
    arrays = [np.asarray(getattr(s, "data", s), dtype=np.float32) for s in segments]
    return np.stack(arrays)


def preprocess(segments, config):
    """Filter and channel-mask a list of segments into a [n, C, T] batch."""
    x = _stack(segments)
    if config.filter_on:
        cascade = design_bandpass(FilterSpec())
        n, c, t = x.shape
        x = apply_iir(cascade, x.reshape(n * c, t)).reshape(n, c, t).astype(np.float32)
    mask = np.asarray(config.channel_mask, dtype=bool)
    x[:, ~mask, :] = 0.0
    return x


def _labels_of(segments):
    return np.array([s.label for s in segments], dtype=np.int64)


def _predict(model, x, batch_size=64):
    preds = np.empty(len(x), dtype=np.int64)
    for start in range(0, len(x), batch_size):
        logits, _ = model.forward(x[start:start + batch_size], mode="eval")
        preds[start:start + batch_size] = np.argmax(logits, axis=1) + 1
    return preds


def _accuracy(model, x, labels):
    if len(x) == 0:
        return float("nan")
    return float(np.mean(_predict(model, x) == labels))


def train(model, dataset, config):
    """Runs the full loop and returns (model, history); history rows are
    dicts with epoch, loss, and val_accuracy (held-out split accuracy, NaN
    when the dataset has no test split). Deterministic given config.seed."""
    train_segments = dataset.subset("train")
    if not train_segments:
        raise ValueError("training split is empty")
    x_train = preprocess(train_segments, config)
    y_train = _labels_of(train_segments)
    test_segments = dataset.subset("test")
    x_test = preprocess(test_segments, config) if test_segments else np.zeros((0,))
    y_test = _labels_of(test_segments)

    seq = np.random.SeedSequence(config.seed)
    shuffle_rng, augment_rng, dropout_rng = (
        np.random.default_rng(s) for s in seq.spawn(3))
    adam = AdamState()
    params = model.param_set()
    n = len(x_train)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = np.stack(augment_batch(list(x_train[idx]), config.augment,
                                           augment_rng))
            labels = y_train[idx]
            params.zero_grads()
            logits, _ = model.forward(batch, mode="train", rng=dropout_rng)
            loss, probs = softmax_cross_entropy(logits, labels)
            model.backward(softmax_cross_entropy_backward(probs, labels))
            adam_step(params, adam, lr=config.lr, beta1=config.beta1,
                      beta2=config.beta2, eps=config.adam_eps)
            loss_sum += loss * len(idx)
        history.append({
            "epoch": epoch,
            "loss": loss_sum / n,
            "val_accuracy": _accuracy(model, x_test, y_test),
        })
    return model, history


def evaluate(model, dataset, config):
    """Accuracy and confusion matrix on the test split, preprocessed with
    the same pipeline flags used for training."""
    test_segments = dataset.subset("test")
    if not test_segments:
        raise ValueError("test split is empty")
    x = preprocess(test_segments, config)
    labels = _labels_of(test_segments)
    preds = _predict(model, x)
    k = model.config.n_classes
    counts = np.zeros((k, k), dtype=np.int64)
    for true, pred in zip(labels, preds):
        counts[true - 1, pred - 1] += 1
    return float(np.mean(preds == labels)), ConfusionMatrix(counts)


def _arm_configs(base_config):
    arms = {
        "baseline": base_config,
        "no_filter": dataclasses.replace(base_config, filter_on=False),
    }
    for c in range(4):
        mask = tuple(i == c for i in range(4))
        arms[f"channel_{c + 1}"] = dataclasses.replace(base_config,
                                                       channel_mask=mask)
    return arms


def ablate(dataset, base_config, model_config=None, model_seed=None):
    """Trains one model per arm from an identical initialization and data
    order, differing only in the flag under test."""
    if model_config is None:
        model_config = SeResNet1dConfig()
    if model_seed is None:
        model_seed = base_config.seed
    accuracies = {}
    confusions = {}
    for name, config in _arm_configs(base_config).items():
        arm_model = build_model(model_config, seed=model_seed)
        train(arm_model, dataset, config)
        accuracy, confusion = evaluate(arm_model, dataset, config)
        accuracies[name] = accuracy
        confusions[name] = confusion
    return AblationReport(accuracies, confusions, base_config.seed)


def extract_features(model, segments):
    """64-d post-GAP activations, one row per segment (eval mode)."""
    if len(segments) == 0:
        return np.zeros((0, model.fc.w.shape[1]), dtype=np.float32)
    x = _stack(segments)
    rows = []
    for start in range(0, len(x), 64):
        rows.append(model.features(x[start:start + 64], mode="eval"))
    return np.concatenate(rows, axis=0)


def pairwise_sq_distances(x):
    sq = np.sum(np.square(x), axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def calibrated_affinities(features, perplexity, tol=1e-5, max_iter=50):
    """Per-point conditional affinities whose entropy matches the target
    perplexity via bandwidth binary search. Returns (P_conditional, betas);
    rows with fully degenerate distances fall back to uniform."""
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    d2 = pairwise_sq_distances(x)
    target = np.log(perplexity)
    p = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        row = np.delete(d2[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            w = np.exp(-row * beta)
            total = w.sum()
            if total <= 0.0:
                h = 0.0
                prob = np.full(n - 1, 1.0 / (n - 1))
            else:
                prob = w / total
                h = np.log(total) + beta * float((row * w).sum()) / total
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if np.isinf(hi) else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
        if not np.all(np.isfinite(prob)) or prob.sum() <= 0.0:
            prob = np.full(n - 1, 1.0 / (n - 1))
        p[i, np.arange(n) != i] = prob
        betas[i] = beta
    return p, betas


def tsne_embed(features, labels, perplexity=30.0, iters=1000, seed=0,
               source="deep_feature"):
    """Exact t-SNE of the feature rows down to 2 dimensions.

    Dense O(n^2) affinities with perplexity-matched bandwidths, early
    exaggeration (x12 for the first 250 iterations), momentum 0.5 then 0.8,
    and adaptive per-coordinate gains. Deterministic given seed.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be an n x d matrix")
    n = x.shape[0]
    if n <= 3 * perplexity:
        raise ValueError(f"need more than {3 * perplexity:.0f} points for "
                         f"perplexity {perplexity}")
    cond, _ = calibrated_affinities(x, perplexity)
    p = (cond + cond.T) / (2.0 * n)
    np.maximum(p, 1e-12, out=p)

    rng = np.random.default_rng(seed)
    y = rng.normal(scale=1e-4, size=(n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    p_run = p * 12.0
    for it in range(iters):
        if it == 250:
            p_run = p
        d2 = pairwise_sq_distances(y)
        num = 1.0 / (1.0 + d2)
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        weight = (p_run - q) * num
        grad = 4.0 * (weight.sum(axis=1)[:, None] * y - weight @ y)
        momentum = 0.5 if it < 250 else 0.8
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - 200.0 * gains * grad
        y = y + update
        y = y - y.mean(axis=0)
    return EmbeddingResult(y, np.asarray(labels), source)


def separability_score(embedding):
    """Leave-one-out 1-NN accuracy over the embedded points. A single-class
    embedding scores 1.0 (every neighbor agrees by construction)."""
    points = embedding.points
    labels = embedding.labels
    if len(np.unique(labels)) < 2:
        return 1.0
    d2 = pairwise_sq_distances(points)
    np.fill_diagonal(d2, np.inf)
    nearest = np.argmin(d2, axis=1)
    return float(np.mean(labels[nearest] == labels))


def write_metrics_csv(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "val_accuracy"])
        for row in history:
            writer.writerow([row["epoch"], f"{row['loss']:.6f}",
                             f"{row['val_accuracy']:.4f}"])


def write_confusion_csv(confusion, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        k = confusion.counts.shape[0]
        writer.writerow(["true\\pred"] + [str(j + 1) for j in range(k)])
        for i in range(k):
            writer.writerow([str(i + 1)] + [str(int(v)) for v in confusion.counts[i]])


def write_ablation_csv(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm", "accuracy"])
        for arm, accuracy in report.accuracies.items():
            writer.writerow([arm, f"{accuracy:.4f}"])
        writer.writerow(["single_channel_best", f"{report.single_channel_best_accuracy:.4f}"])


def write_embedding_csv(embedding, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "label"])
        for (px, py), label in zip(embedding.points, embedding.labels):
            writer.writerow([f"{px:.6f}", f"{py:.6f}", int(label)])
