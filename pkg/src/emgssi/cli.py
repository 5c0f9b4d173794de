"""Command-line entry point: one subcommand per pipeline stage, CSV and SVG
reports, and the replay/decode pair for live streaming.

Defaults may come from a JSON file named by the EMG_SSI_CONFIG environment
variable, mapping subcommand names to flag defaults, e.g.
{"train": {"epochs": 20}}. Explicit flags always win. Exit codes: 0 on
success, 2 on usage errors, 1 on runtime errors. On a runtime error any
output file created by the failed run is removed.
"""

import argparse
import csv
import json
import os
import signal
import sys
import threading
from dataclasses import dataclass, replace

import numpy as np

from .augment import AugmentConfig
from .dsp import FilterSpec, apply_iir, cwt_scalogram, design_bandpass
from .model import (SeResNet1dConfig, build_model, input_attribution,
                    load_weights, save_weights)
from .stream import StreamStats, ingest_decode, serve_replay
from .synth import (WORDS, FS_HZ, SynthConfig, load_dataset, save_dataset,
                    split_dataset, synth_dataset)
from .traineval import (TrainConfig, ablate, evaluate, extract_features,
                        preprocess, separability_score, train, tsne_embed,
                        write_ablation_csv, write_confusion_csv,
                        write_embedding_csv, write_metrics_csv)
from . import plots

__all__ = ["Command", "parse_args", "execute", "main"]

SUBCOMMANDS = ("synth", "train", "eval", "infer", "ablate", "attn", "tsne",
               "scalogram", "serve", "decode")

# flags whose values are files the subcommand writes; removed if the run fails
_OUTPUT_FLAGS = ("out", "metrics", "curves", "confusion", "heatmap", "bars",
                 "scatter")


@dataclass(frozen=True)
class Command:
    """One parsed subcommand plus its flag values."""

    name: str
    options: dict


def _coupling(text):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("coupling needs 4 comma-separated values")
    return tuple(parts)


def _mask(text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 4 or any(p not in ("0", "1") for p in parts):
        raise argparse.ArgumentTypeError("mask needs 4 comma-separated 0/1 values")
    return tuple(p == "1" for p in parts)


def _drop_list(text):
    if not text:
        return ()
    return tuple(int(p) for p in text.split(","))


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="emgssi",
        description="Silent-speech EMG pipeline: synthesis, training, "
                    "evaluation, analysis, and live streaming.")
    subs = parser.add_subparsers(dest="command", metavar="subcommand")
    parsers = {}

    def sub(name, help_text):
        p = subs.add_parser(name, help=help_text)
        parsers[name] = p
        return p

    p = sub("synth", "generate a labeled synthetic dataset")
    p.add_argument("--out", required=True, help="output .emgd path")
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--coupling", type=_coupling, default=(1.0, 1.0, 1.0, 1.0),
                   help="per-channel skin coupling, e.g. 1,1,0.3,0.3")
    p.add_argument("--artefact", type=float, default=0.5,
                   help="motion artefact amplitude in mV")
    p.add_argument("--noise", type=float, default=0.01,
                   help="sensor noise sigma in mV")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)

    p = sub("train", "train the classifier on a dataset")
    p.add_argument("--data", required=True, help="input .emgd path")
    p.add_argument("--out", required=True, help="output .emgw path")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-filter", action="store_true")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--metrics", help="per-epoch metrics CSV path")
    p.add_argument("--curves", help="training-curve SVG path")

    p = sub("eval", "evaluate a trained model on a dataset's test split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="input .emgw path")
    p.add_argument("--no-filter", action="store_true")
    p.add_argument("--mask", type=_mask, default=(True,) * 4,
                   help="channel keep-mask, e.g. 1,1,0,0")
    p.add_argument("--confusion", help="confusion-matrix CSV path")
    p.add_argument("--heatmap", help="confusion-heatmap SVG path")

    p = sub("infer", "classify one stored segment")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--index", type=int, default=0,
                   help="segment index into the dataset")
    p.add_argument("--causal", action="store_true",
                   help="filter causally as the live decoder does")

    p = sub("ablate", "filter and channel ablation study")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="ablation CSV path")
    p.add_argument("--bars", help="ablation bar-chart SVG path")

    p = sub("attn", "channel attribution for one segment")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--method", choices=("occlusion", "stem_projection"),
                   default="occlusion")
    p.add_argument("--out", help="attribution CSV path")
    p.add_argument("--bars", help="attribution bar-chart SVG path")

    p = sub("tsne", "2-D embedding of segments")
    p.add_argument("--data", required=True)
    p.add_argument("--model", help=".emgw path; required for deep features")
    p.add_argument("--source", choices=("deep_feature", "raw_input"),
                   default="deep_feature")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="embedding CSV path")
    p.add_argument("--scatter", help="embedding scatter SVG path")

    p = sub("scalogram", "wavelet time-frequency map of one channel")
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--channel", type=int, default=1, choices=(1, 2, 3, 4))
    p.add_argument("--raw", action="store_true",
                   help="skip the bandpass before the transform")
    p.add_argument("--out", required=True, help="scalogram SVG path")

    p = sub("serve", "replay a dataset over TCP as timed frames")
    p.add_argument("--data", required=True)
    p.add_argument("--endpoint", default="127.0.0.1:7600")
    p.add_argument("--frame-ms", type=int, default=50)
    p.add_argument("--no-realtime", action="store_true")
    p.add_argument("--scale", type=float, default=1.0,
                   help="microvolts per ADC count")
    p.add_argument("--drop", type=_drop_list, default=(),
                   help="comma-separated seq numbers to drop")

    p = sub("decode", "connect to a replay server and classify live")
    p.add_argument("--endpoint", default="127.0.0.1:7600")
    p.add_argument("--model", required=True)
    p.add_argument("--max-windows", type=int,
                   help="stop after this many predictions")

    return parser, parsers


def _apply_config_file(parsers):
    path = os.environ.get("EMG_SSI_CONFIG")
    if not path:
        return
    with open(path) as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError("config file must map subcommands to flag defaults")
    for name, defaults in config.items():
        if name not in parsers:
            raise ValueError(f"config file names unknown subcommand {name!r}")
        parsers[name].set_defaults(**{k.replace("-", "_"): v
                                      for k, v in defaults.items()})


def parse_args(argv):
    parser, parsers = _build_parser()
    try:
        _apply_config_file(parsers)
    except (OSError, ValueError) as exc:
        parser.error(f"bad EMG_SSI_CONFIG file: {exc}")
    ns = parser.parse_args(argv)
    if ns.command is None:
        parser.error("a subcommand is required")
    options = {k: v for k, v in vars(ns).items() if k != "command"}
    return Command(ns.command, options)


def _word(label):
    return f"{WORDS[label]} ({label})"


def _run_synth(opt):
    config = SynthConfig(n_per_class=opt["per_class"], coupling=opt["coupling"],
                         artefact_amplitude_mv=opt["artefact"],
                         sensor_noise_mv=opt["noise"], seed=opt["seed"])
    dataset = split_dataset(synth_dataset(config), opt["train_fraction"],
                            seed=opt["seed"])
    save_dataset(dataset, opt["out"])
    n_train = len(dataset.subset("train"))
    n_test = len(dataset.subset("test"))
    print(f"synth: wrote {opt['out']} with {len(dataset.segments)} segments "
          f"({n_train} train, {n_test} test)")


def _train_config(opt):
    augment = AugmentConfig(apply_probability=0.0) if opt.get("no_augment") \
        else AugmentConfig()
    return TrainConfig(epochs=opt["epochs"], batch_size=opt["batch"],
                       seed=opt["seed"], lr=opt["lr"], augment=augment,
                       filter_on=not opt.get("no_filter", False))


def _run_train(opt):
    dataset = load_dataset(opt["data"])
    config = _train_config(opt)
    model = build_model(SeResNet1dConfig(), seed=opt["seed"])
    _, history = train(model, dataset, config)
    save_weights(model, opt["out"])
    if opt.get("metrics"):
        write_metrics_csv(history, opt["metrics"])
    if opt.get("curves"):
        plots.save_training_curves(history, opt["curves"])
    last = history[-1] if history else {"loss": float("nan"),
                                        "val_accuracy": float("nan")}
    print(f"train: {len(history)} epochs, final loss {last['loss']:.4f}, "
          f"val accuracy {last['val_accuracy']:.4f}, wrote {opt['out']}")


def _run_eval(opt):
    dataset = load_dataset(opt["data"])
    model = load_weights(opt["model"], expected_config=SeResNet1dConfig())
    config = TrainConfig(filter_on=not opt["no_filter"],
                         channel_mask=opt["mask"])
    accuracy, confusion = evaluate(model, dataset, config)
    if opt.get("confusion"):
        write_confusion_csv(confusion, opt["confusion"])
    if opt.get("heatmap"):
        plots.save_confusion_heatmap(confusion, opt["heatmap"])
    n_test = int(confusion.counts.sum())
    print(f"eval: accuracy {accuracy:.4f} on {n_test} test segments")


def _run_infer(opt):
    dataset = load_dataset(opt["data"])
    model = load_weights(opt["model"], expected_config=SeResNet1dConfig())
    segment = dataset.segments[opt["index"]]
    if opt["causal"]:
        cascade = design_bandpass(FilterSpec())
        x = apply_iir(cascade, segment.data, mode="causal").astype(np.float32)
    else:
        x = preprocess([segment], TrainConfig())[0]
    logits, _ = model.forward(x, mode="eval")
    shifted = logits.astype(np.float64) - float(np.max(logits))
    probs = np.exp(shifted) / np.exp(shifted).sum()
    word_id = int(np.argmax(logits)) + 1
    # enough digits that the printed vector itself sums to 1 within 1e-6
    prob_text = " ".join(f"{p:.10f}" for p in probs)
    print(f"infer: segment {opt['index']} -> {_word(word_id)} "
          f"(true {_word(segment.label)})")
    print(f"probabilities: {prob_text}")


def _run_ablate(opt):
    dataset = load_dataset(opt["data"])
    base = _train_config({**opt, "no_augment": False})
    report = ablate(dataset, base)
    if opt.get("out"):
        write_ablation_csv(report, opt["out"])
    if opt.get("bars"):
        plots.save_ablation_bars(report, opt["bars"])
    best = report.best_single_channel
    print(f"ablate: baseline {report.accuracies['baseline']:.4f}, "
          f"no_filter {report.accuracies['no_filter']:.4f}, "
          f"best single channel {best} {report.accuracies[best]:.4f}")


def _run_attn(opt):
    dataset = load_dataset(opt["data"])
    model = load_weights(opt["model"], expected_config=SeResNet1dConfig())
    segment = dataset.segments[opt["index"]]
    x = preprocess([segment], TrainConfig())[0]
    attribution = input_attribution(model, x, label=segment.label,
                                    method=opt["method"])
    if opt.get("out"):
        with open(opt["out"], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["channel", "attribution"])
            for i, value in enumerate(attribution, start=1):
                writer.writerow([i, f"{value:.6f}"])
    if opt.get("bars"):
        plots.save_attribution_bars(attribution, opt["bars"],
                                    title=opt["method"].replace("_", " "))
    values = " ".join(f"ch{i}={v:.3f}" for i, v in enumerate(attribution, 1))
    print(f"attn: {opt['method']} on segment {opt['index']} "
          f"(true {_word(segment.label)}): {values}")


def _run_tsne(opt):
    dataset = load_dataset(opt["data"])
    segments = dataset.segments if opt["split"] == "all" \
        else dataset.subset(opt["split"])
    if not segments:
        raise ValueError(f"dataset has no {opt['split']} segments")
    labels = np.array([s.label for s in segments], dtype=np.int64)
    if opt["source"] == "deep_feature":
        if not opt.get("model"):
            raise ValueError("--model is required for deep features")
        model = load_weights(opt["model"], expected_config=SeResNet1dConfig())
        filtered = preprocess(segments, TrainConfig())
        features = extract_features(model, filtered)
    else:
        features = np.stack([s.data.reshape(-1) for s in segments]) \
            .astype(np.float64)
    embedding = tsne_embed(features, labels, perplexity=opt["perplexity"],
                           iters=opt["iters"], seed=opt["seed"],
                           source=opt["source"])
    if opt.get("out"):
        write_embedding_csv(embedding, opt["out"])
    if opt.get("scatter"):
        plots.save_embedding_scatter(embedding, opt["scatter"])
    score = separability_score(embedding)
    print(f"tsne: {opt['source']} embedding of {len(segments)} segments, "
          f"1-NN separability {score:.4f}")


def _run_scalogram(opt):
    dataset = load_dataset(opt["data"])
    segment = dataset.segments[opt["index"]]
    signal = segment.data[opt["channel"] - 1].astype(np.float64)
    if not opt["raw"]:
        cascade = design_bandpass(FilterSpec())
        signal = apply_iir(cascade, signal)
    # the transform needs analysis frequencies strictly below fs/2
    freqs = np.geomspace(5.0, 495.0, 64)
    scalogram = cwt_scalogram(signal, FS_HZ, freqs)
    plots.save_scalogram(scalogram, opt["out"])
    print(f"scalogram: segment {opt['index']} channel {opt['channel']} "
          f"(true {_word(segment.label)}) -> {opt['out']}")


def _run_serve(opt):
    stop = threading.Event()
    # signal handlers may only be installed from the main thread; embedded
    # callers (tests, other programs) fall back to plain KeyboardInterrupt
    previous = None
    if threading.current_thread() is threading.main_thread():
        previous = signal.signal(signal.SIGINT, lambda *_: stop.set())
    try:
        report = serve_replay(opt["data"], opt["endpoint"],
                              frame_ms=opt["frame_ms"],
                              realtime=not opt["no_realtime"],
                              drop_seqs=opt["drop"],
                              scale_uv_per_count=opt["scale"],
                              stop_event=stop)
    finally:
        if previous is not None:
            signal.signal(signal.SIGINT, previous)
    print(f"serve: sent {report.frames_sent} frames "
          f"({report.samples_sent} samples, {report.frames_dropped} dropped)")


def _run_decode(opt):
    model = load_weights(opt["model"], expected_config=SeResNet1dConfig())
    cascade = design_bandpass(FilterSpec())
    stats = StreamStats()
    windows = 0
    try:
        for win in ingest_decode(opt["endpoint"], model, cascade, stats=stats,
                                 max_windows=opt["max_windows"]):
            windows += 1
            print(f"t={win.end_ms}ms -> {_word(win.word_id)} "
                  f"p={win.probabilities[win.word_id - 1]:.3f} "
                  f"latency={win.latency_s * 1000.0:.1f}ms")
    except KeyboardInterrupt:
        pass
    print(f"decode: {windows} windows, {stats.frames_received} frames, "
          f"{stats.gaps_detected} gaps, {stats.duplicate_frames} duplicates")


_HANDLERS = {
    "synth": _run_synth,
    "train": _run_train,
    "eval": _run_eval,
    "infer": _run_infer,
    "ablate": _run_ablate,
    "attn": _run_attn,
    "tsne": _run_tsne,
    "scalogram": _run_scalogram,
    "serve": _run_serve,
    "decode": _run_decode,
}


def execute(command):
    """Runs one parsed command; returns the process exit code."""
    outputs = [command.options.get(flag) for flag in _OUTPUT_FLAGS]
    outputs = [p for p in outputs if p]
    existed = {p for p in outputs if os.path.exists(p)}
    try:
        _HANDLERS[command.name](command.options)
    except (KeyboardInterrupt, Exception) as exc:  # noqa: BLE001
        for path in outputs:
            if path not in existed and os.path.exists(path):
                os.remove(path)
        if isinstance(exc, KeyboardInterrupt):
            print("interrupted", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    return execute(parse_args(argv))
