"""Self-contained SVG reports: confusion heatmap, embedding scatter,
scalogram, ablation and attention bars, training curves.

matplotlib is imported lazily so the numeric modules stay importable
without a plotting stack. SVGs are written with a fixed hash salt and no
embedded date, so identical inputs give byte-identical files.
"""

import numpy as np

from .synth import WORDS

__all__ = [
    "save_confusion_heatmap",
    "save_embedding_scatter",
    "save_scalogram",
    "save_ablation_bars",
    "save_attribution_bars",
    "save_training_curves",
]

_WORD_LIST = [WORDS[i] for i in sorted(WORDS)]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "emgssi"
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt

    plt.close(fig)


def save_confusion_heatmap(confusion, path):
    plt = _pyplot()
    counts = confusion.counts
    k = counts.shape[0]
    names = _WORD_LIST if k == len(_WORD_LIST) else [str(i + 1) for i in range(k)]
    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    im = ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(k), names, rotation=45, ha="right")
    ax.set_yticks(range(k), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"accuracy {confusion.accuracy:.3f}")
    for i in range(k):
        for j in range(k):
            if counts[i, j]:
                ax.text(j, i, str(counts[i, j]), ha="center", va="center",
                        fontsize=7)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    _save(fig, path)


def save_embedding_scatter(embedding, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    cmap = plt.get_cmap("tab10")
    for label in np.unique(embedding.labels):
        mask = embedding.labels == label
        ax.scatter(embedding.points[mask, 0], embedding.points[mask, 1],
                   s=12, color=cmap((int(label) - 1) % 10),
                   label=WORDS.get(int(label), str(label)))
    ax.set_title(embedding.source.replace("_", " "))
    ax.legend(fontsize=7, markerscale=1.5, loc="best")
    fig.tight_layout()
    _save(fig, path)


def save_scalogram(scalogram, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    mags = scalogram.magnitudes
    extent = [scalogram.times_s[0], scalogram.times_s[-1], 0,
              len(scalogram.freqs_hz)]
    im = ax.imshow(mags, aspect="auto", origin="lower", extent=extent,
                   cmap="magma")
    # frequencies are log-spaced, so label a handful of rows instead of
    # pretending the axis is linear
    ticks = np.linspace(0, len(scalogram.freqs_hz) - 1, 6).astype(int)
    ax.set_yticks(ticks + 0.5, [f"{scalogram.freqs_hz[i]:.0f}" for i in ticks])
    ax.set_xlabel("time [s]")
    ax.set_ylabel("frequency [Hz]")
    fig.colorbar(im, ax=ax, label="|CWT|")
    fig.tight_layout()
    _save(fig, path)


def save_ablation_bars(report, path):
    plt = _pyplot()
    arms = list(report.accuracies)
    values = [report.accuracies[a] for a in arms]
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.bar(range(len(arms)), values, color="tab:blue")
    ax.set_xticks(range(len(arms)), arms, rotation=30, ha="right")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.0)
    for i, v in enumerate(values):
        ax.text(i, v + 0.01, f"{v:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def save_attribution_bars(attribution, path, title="channel attribution"):
    plt = _pyplot()
    attribution = np.asarray(attribution, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.bar(range(1, attribution.size + 1), attribution, color="tab:orange")
    ax.set_xticks(range(1, attribution.size + 1))
    ax.set_xlabel("channel")
    ax.set_ylabel("attribution")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def save_training_curves(history, path):
    plt = _pyplot()
    epochs = [row["epoch"] for row in history]
    losses = [row["loss"] for row in history]
    accs = [row["val_accuracy"] for row in history]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(epochs, losses, color="tab:blue", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss", color="tab:blue")
    if not all(np.isnan(a) for a in accs):
        twin = ax.twinx()
        twin.plot(epochs, accs, color="tab:green", label="val accuracy")
        twin.set_ylabel("val accuracy", color="tab:green")
        twin.set_ylim(0.0, 1.05)
    fig.tight_layout()
    _save(fig, path)
