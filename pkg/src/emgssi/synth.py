"""Deterministic synthetic 4-channel EMG generator.

Each word class is a template of per-channel activation bursts; a segment is
envelope-modulated band-limited noise (the EMG carrier, 20-400 Hz) mixed per
channel with low-frequency motion artefact (random-walk drift plus 0.5-10 Hz
sinusoids) according to a skin-electrode coupling factor, plus white sensor
noise. Class identity is carried by which burst pattern each channel plays:
channels draw their patterns from small shared pools, so no single channel
separates all ten classes but the four together do.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "WORDS",
    "N_CHANNELS",
    "SEGMENT_LEN",
    "FS_HZ",
    "Burst",
    "ClassTemplate",
    "EmgSegment",
    "SynthConfig",
    "Dataset",
    "make_class_template",
    "synth_segment",
    "synth_dataset",
    "split_dataset",
    "save_dataset",
    "load_dataset",
]

WORDS = {
    1: "Open", 2: "Close", 3: "Start", 4: "Stop", 5: "Yes",
    6: "No", 7: "Next", 8: "Back", 9: "Okay", 10: "Cancel",
}

N_CHANNELS = 4
SEGMENT_LEN = 3000
FS_HZ = 1000.0

# Pattern-pool index per (class, channel). Channels 1-2 share a pattern pair
# between neighbouring classes and channels 3-4 split those pairs, so any
# single channel sees only 3 distinct patterns across the 10 classes while
# the full 4-tuple is unique per class.
_ASSIGNMENTS = {
    1: (0, 0, 0, 1), 2: (0, 0, 1, 2),
    3: (1, 1, 1, 2), 4: (1, 1, 2, 0),
    5: (2, 2, 2, 0), 6: (2, 2, 0, 1),
    7: (0, 1, 0, 1), 8: (0, 1, 1, 2),
    9: (1, 2, 1, 2), 10: (1, 2, 2, 0),
}
_POOL_SIZE = 3


@dataclass(frozen=True)
class Burst:
    """One Gaussian activation burst of a channel envelope."""

    center_s: float
    width_s: float
    amplitude_mv: float


@dataclass(frozen=True)
class ClassTemplate:
    """Per-channel burst envelopes defining one word class."""

    class_id: int
    word: str
    envelopes: tuple  # 4 tuples of Burst


@dataclass
class EmgSegment:
    """One labeled [4 x 3000] window in millivolts."""

    data: np.ndarray
    label: int
    coupling: tuple
    fs_hz: float = FS_HZ

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.shape != (N_CHANNELS, SEGMENT_LEN):
            raise ValueError(f"segment data must be [{N_CHANNELS} x {SEGMENT_LEN}]")
        if self.label not in WORDS:
            raise ValueError(f"label must be in 1..{len(WORDS)}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("segment contains non-finite samples")
        self.coupling = tuple(float(c) for c in self.coupling)


@dataclass(frozen=True)
class SynthConfig:
    n_per_class: int = 100
    coupling: tuple = (1.0, 1.0, 1.0, 1.0)
    artefact_amplitude_mv: float = 0.5
    sensor_noise_mv: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be at least 1")
        if len(self.coupling) != N_CHANNELS or not all(0.0 <= c <= 1.0 for c in self.coupling):
            raise ValueError("coupling must be 4 values in [0, 1]")
        if self.artefact_amplitude_mv < 0 or self.sensor_noise_mv < 0:
            raise ValueError("amplitudes must be nonnegative")


@dataclass
class Dataset:
    """Segments plus a train/test tag per segment."""

    segments: list
    split_tags: list = field(default_factory=list)

    def __post_init__(self):
        if not self.split_tags:
            self.split_tags = ["train"] * len(self.segments)
        if len(self.split_tags) != len(self.segments):
            raise ValueError("one split tag per segment required")

    def subset(self, tag):
        return [s for s, t in zip(self.segments, self.split_tags) if t == tag]

    @property
    def labels(self):
        return np.array([s.label for s in self.segments], dtype=np.int64)


def _pattern_pools(master_seed):
    """Shared per-channel pools of burst patterns, fixed by the master seed."""
    rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(0,)))
    pools = []
    for _ in range(N_CHANNELS):
        patterns = []
        for _ in range(_POOL_SIZE):
            n_bursts = int(rng.integers(2, 6))
            centers = np.sort(rng.uniform(0.3, 2.7, size=n_bursts))
            widths = rng.uniform(0.08, 0.25, size=n_bursts)
            amps = rng.uniform(0.6, 1.2, size=n_bursts)
            patterns.append(tuple(zip(centers, widths, amps)))
        pools.append(patterns)
    return pools


def make_class_template(class_id, master_seed):
    """Deterministic burst template for one word class.

    The class picks one pooled pattern per channel and perturbs it slightly
    (burst centers within 3 ms, amplitudes within 1%) with a per-class
    generator; the perturbation is far below the +/-100-sample training shift
    so class identity stays in the pattern choice, not the jitter.
    """
    if class_id not in WORDS:
        raise ValueError(f"class_id must be in 1..{len(WORDS)}")
    pools = _pattern_pools(master_seed)
    rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(1, class_id)))
    envelopes = []
    for ch in range(N_CHANNELS):
        pattern = pools[ch][_ASSIGNMENTS[class_id][ch]]
        bursts = []
        for center, width, amp in pattern:
            center = float(np.clip(center + rng.uniform(-0.003, 0.003), 0.0, 2.999))
            bursts.append(Burst(center, float(width), float(amp * rng.uniform(0.99, 1.01))))
        envelopes.append(tuple(bursts))
    return ClassTemplate(class_id, WORDS[class_id], tuple(envelopes))


def _bandlimited_unit_noise(rng, n, fs_hz, low_hz=20.0, high_hz=400.0):
    spectrum = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / fs_hz)
    spectrum[(f < low_hz) | (f > high_hz)] = 0.0
    x = np.fft.irfft(spectrum, n)
    return x / np.sqrt((x**2).mean())


def _envelope(bursts, t):
    env = np.zeros_like(t)
    for b in bursts:
        env += b.amplitude_mv * np.exp(-0.5 * ((t - b.center_s) / b.width_s) ** 2)
    return env


def _artefact(rng, n, fs_hz):
    drift = np.cumsum(rng.standard_normal(n))
    drift /= np.sqrt((drift**2).mean())
    t = np.arange(n) / fs_hz
    n_sin = int(rng.integers(1, 4))
    waves = np.zeros(n)
    for _ in range(n_sin):
        freq = rng.uniform(0.5, 10.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.3, 1.0)
        waves += amp * np.sin(2.0 * np.pi * freq * t + phase)
    return drift + waves


def synth_segment(template, coupling, artefact_amplitude_mv, sensor_noise_mv, rng):
    """Generate one segment: per channel c,
    coupling[c] * (envelope * band-limited carrier)
    + (1 - coupling[c]) * artefact_amplitude_mv * (drift + low sinusoids)
    + sensor_noise_mv * white noise.

    All random components are drawn from rng on every call, in a fixed order
    that does not depend on the mixing weights, so two calls with identically
    seeded generators differ only through the weights.
    """
    if len(coupling) != N_CHANNELS or not all(0.0 <= c <= 1.0 for c in coupling):
        raise ValueError("coupling must be 4 values in [0, 1]")
    t = np.arange(SEGMENT_LEN) / FS_HZ
    data = np.empty((N_CHANNELS, SEGMENT_LEN))
    for ch in range(N_CHANNELS):
        carrier = _bandlimited_unit_noise(rng, SEGMENT_LEN, FS_HZ)
        artefact = _artefact(rng, SEGMENT_LEN, FS_HZ)
        noise = rng.standard_normal(SEGMENT_LEN)
        env = _envelope(template.envelopes[ch], t)
        data[ch] = (
            coupling[ch] * env * carrier
            + (1.0 - coupling[ch]) * artefact_amplitude_mv * artefact
            + sensor_noise_mv * noise
        )
    return EmgSegment(data, template.class_id, tuple(coupling))


def synth_dataset(config):
    """Class-balanced dataset, deterministic in config.

    Every segment draws from its own generator spawned from (seed, class,
    index), so enlarging n_per_class never changes earlier segments.
    """
    templates = {cid: make_class_template(cid, config.seed) for cid in WORDS}
    segments = []
    for cid in sorted(WORDS):
        for idx in range(config.n_per_class):
            rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(2, cid, idx)))
            segments.append(
                synth_segment(
                    templates[cid],
                    config.coupling,
                    config.artefact_amplitude_mv,
                    config.sensor_noise_mv,
                    rng,
                )
            )
    return Dataset(segments)


def split_dataset(dataset, train_fraction=0.8, seed=0):
    """Stratified train/test tagging, shuffled deterministically per class."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    labels = dataset.labels
    tags = [None] * len(dataset.segments)
    for cid in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == cid)
        if idx.size < 2:
            raise ValueError(f"class {cid} has fewer than 2 segments; cannot stratify")
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3, int(cid))))
        idx = rng.permutation(idx)
        n_train = int(round(train_fraction * idx.size))
        n_train = min(max(n_train, 1), idx.size - 1)
        for i in idx[:n_train]:
            tags[i] = "train"
        for i in idx[n_train:]:
            tags[i] = "test"
    return Dataset(dataset.segments, tags)


_MAGIC = b"EMGD"
_VERSION = 1
_HEADER = struct.Struct("<4sHIHII")
_SEG_HEADER = struct.Struct("<BB4f")
_TAG_CODES = {"train": 0, "test": 1}
_TAG_NAMES = {v: k for k, v in _TAG_CODES.items()}


def save_dataset(dataset, path):
    """Write the dataset container: EMGD header, then per segment a label,
    split tag, coupling, and the f32 little-endian samples."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, len(dataset.segments), N_CHANNELS, SEGMENT_LEN, int(FS_HZ)))
        for seg, tag in zip(dataset.segments, dataset.split_tags):
            fh.write(_SEG_HEADER.pack(seg.label, _TAG_CODES[tag], *seg.coupling))
            fh.write(np.ascontiguousarray(seg.data, dtype="<f4").tobytes())


def load_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise ValueError("dataset file truncated in header")
        magic, version, n_segments, n_channels, seg_len, fs = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise ValueError("bad magic: not a dataset container")
        if version != _VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        if n_channels != N_CHANNELS or seg_len != SEGMENT_LEN or fs != int(FS_HZ):
            raise ValueError("dataset geometry does not match 4 x 3000 at 1000 Hz")
        segments, tags = [], []
        frame_bytes = 4 * n_channels * seg_len
        for _ in range(n_segments):
            head = fh.read(_SEG_HEADER.size)
            body = fh.read(frame_bytes)
            if len(head) < _SEG_HEADER.size or len(body) < frame_bytes:
                raise ValueError("dataset file truncated in segment data")
            label, tag_code, c0, c1, c2, c3 = _SEG_HEADER.unpack(head)
            if tag_code not in _TAG_NAMES:
                raise ValueError(f"unknown split tag code {tag_code}")
            data = np.frombuffer(body, dtype="<f4").reshape(n_channels, seg_len)
            segments.append(EmgSegment(data.copy(), label, (c0, c1, c2, c3)))
            tags.append(_TAG_NAMES[tag_code])
    return Dataset(segments, tags)
