"""Simulated wireless readout: a bit-exact frame codec for i16 ADC counts, a
paced TCP replay server, and a live sliding-window decoder.

Wire format per frame: 22-byte header (magic "EMG1", seq u32, timestamp_ms
u64, n_samples u16, scale_uv_per_count f32, all little-endian) followed by
4 x n_samples i16 counts in channel-major order. Frames travel over a
reliable byte stream as u32-length-prefixed records. Loss is simulated at
the application layer by skipping sequence numbers.
"""

import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .dsp import apply_iir
from .synth import WORDS, N_CHANNELS, SEGMENT_LEN, load_dataset

__all__ = [
    "Frame",
    "StreamStats",
    "DecodedWindow",
    "ReplayReport",
    "encode_frame",
    "decode_frame",
    "quantize",
    "to_millivolts",
    "parse_endpoint",
    "serve_replay",
    "ingest_decode",
]

FRAME_MAGIC = b"EMG1"
_HEADER = struct.Struct("<4sIQHf")
_LENGTH_PREFIX = struct.Struct("<I")
MAX_FRAME_SAMPLES = 1000


@dataclass
class Frame:
    """One transport frame of quantized samples.

    Millivolt value of a count is count * scale_uv_per_count / 1000. The
    scale is stored on the wire as f32, so it is coerced to the nearest
    f32-representable value on construction to keep round-trips exact.
    """

    seq: int
    timestamp_ms: int
    samples: np.ndarray
    scale_uv_per_count: float = 1.0

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.int16)
        if self.samples.ndim != 2 or self.samples.shape[0] != N_CHANNELS:
            raise ValueError(f"samples must be [{N_CHANNELS} x n]")
        n = self.samples.shape[1]
        if not 1 <= n <= MAX_FRAME_SAMPLES:
            raise ValueError(f"n_samples must be in [1, {MAX_FRAME_SAMPLES}]")
        if not 0 <= self.seq <= 0xFFFFFFFF:
            raise ValueError("seq must fit in u32")
        if not 0 <= self.timestamp_ms <= 0xFFFFFFFFFFFFFFFF:
            raise ValueError("timestamp_ms must fit in u64")
        self.scale_uv_per_count = float(np.float32(self.scale_uv_per_count))

    @property
    def n_samples(self):
        return self.samples.shape[1]

    def to_millivolts(self):
        return to_millivolts(self.samples, self.scale_uv_per_count)


@dataclass
class StreamStats:
    """Receiver-side counters; all non-decreasing over a session."""

    frames_received: int = 0
    gaps_detected: int = 0
    duplicate_frames: int = 0
    samples_delivered: int = 0


@dataclass(frozen=True)
class ReplayReport:
    frames_sent: int
    frames_dropped: int
    samples_sent: int


@dataclass(frozen=True)
class DecodedWindow:
    """One live prediction: the stream time at the window's last sample,
    the chosen word, the class probabilities, and the filter+forward cost."""

    end_ms: int
    word_id: int
    word: str
    probabilities: np.ndarray
    latency_s: float


def quantize(data_mv, scale_uv_per_count):
    """Millivolts to i16 ADC counts at the given microvolt-per-count scale,
    rounding to nearest and saturating at the i16 limits."""
    scale = float(np.float32(scale_uv_per_count))
    if scale <= 0:
        raise ValueError("scale must be positive")
    counts = np.rint(np.asarray(data_mv, dtype=np.float64) * 1000.0 / scale)
    return np.clip(counts, -32768, 32767).astype(np.int16)


def to_millivolts(counts, scale_uv_per_count):
    """Counts back to float32 millivolts: count * scale / 1000."""
    scale = np.float32(scale_uv_per_count)
    return counts.astype(np.float32) * scale / np.float32(1000.0)


def encode_frame(frame):
    header = _HEADER.pack(FRAME_MAGIC, frame.seq, frame.timestamp_ms,
                          frame.n_samples, frame.scale_uv_per_count)
    return header + frame.samples.astype("<i2").tobytes()


def decode_frame(buf):
    if len(buf) < _HEADER.size:
        raise ValueError(f"short buffer: {len(buf)} bytes, need at least "
                         f"{_HEADER.size}")
    magic, seq, timestamp_ms, n_samples, scale = _HEADER.unpack_from(buf)
    if magic != FRAME_MAGIC:
        raise ValueError("bad magic")
    if not 1 <= n_samples <= MAX_FRAME_SAMPLES:
        raise ValueError(f"n_samples {n_samples} out of [1, {MAX_FRAME_SAMPLES}]")
    expected = _HEADER.size + 2 * N_CHANNELS * n_samples
    if len(buf) < expected:
        raise ValueError(f"short buffer: {len(buf)} bytes, frame needs {expected}")
    if len(buf) > expected:
        raise ValueError(f"trailing bytes: {len(buf) - expected}")
    counts = np.frombuffer(buf, dtype="<i2", offset=_HEADER.size)
    samples = counts.reshape(N_CHANNELS, n_samples).copy()
    return Frame(seq, timestamp_ms, samples, scale)


def parse_endpoint(endpoint):
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


def _replay_samples(source):
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        source = load_dataset(source)
    arrays = [np.asarray(s.data, dtype=np.float64) for s in source.segments]
    if not arrays:
        raise ValueError("replay source holds no segments")
    return np.concatenate(arrays, axis=1)


def serve_replay(source, endpoint, frame_ms=50, realtime=True, drop_seqs=(),
                 scale_uv_per_count=1.0, stop_event=None):
    """Streams a dataset (or .emgd path) to one client as paced frames.

    Each frame carries frame_ms samples at 1 kHz. Sequence numbers always
    increment; seqs listed in drop_seqs are skipped on the wire to simulate
    loss. Returns a ReplayReport; a client disconnect stops the replay
    cleanly. Trailing samples that do not fill a frame are not sent.
    """
    data = _replay_samples(source)
    counts = quantize(data, scale_uv_per_count)
    n_frames = counts.shape[1] // frame_ms
    drop = set(int(s) for s in drop_seqs)
    host, port = parse_endpoint(endpoint)
    frames_sent = 0
    frames_dropped = 0
    samples_sent = 0
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        conn, _ = server.accept()
        with conn:
            try:
                for seq in range(n_frames):
                    if stop_event is not None and stop_event.is_set():
                        break
                    if realtime:
                        time.sleep(frame_ms / 1000.0)
                    if seq in drop:
                        frames_dropped += 1
                        continue
                    frame = Frame(seq, seq * frame_ms,
                                  counts[:, seq * frame_ms:(seq + 1) * frame_ms],
                                  scale_uv_per_count)
                    blob = encode_frame(frame)
                    conn.sendall(_LENGTH_PREFIX.pack(len(blob)) + blob)
                    frames_sent += 1
                    samples_sent += frame.n_samples
            except (BrokenPipeError, ConnectionResetError):
                pass
    return ReplayReport(frames_sent, frames_dropped, samples_sent)


def _recv_exact(sock, n):
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _read_frames(sock, frame_queue):
    try:
        while True:
            prefix = _recv_exact(sock, _LENGTH_PREFIX.size)
            if prefix is None:
                break
            (length,) = _LENGTH_PREFIX.unpack(prefix)
            blob = _recv_exact(sock, length)
            if blob is None:
                break
            frame_queue.put(blob)
    except OSError:
        pass
    finally:
        frame_queue.put(None)


def _connect(endpoint, retries, delay_s):
    host, port = parse_endpoint(endpoint)
    for attempt in range(retries + 1):
        try:
            return socket.create_connection((host, port), timeout=10.0)
        except OSError:
            if attempt == retries:
                raise ConnectionError(
                    f"could not reach {endpoint} after {retries + 1} attempts")
            time.sleep(delay_s)


def _softmax(logits):
    shifted = np.asarray(logits, dtype=np.float64)
    shifted = shifted - shifted.max()
    e = np.exp(shifted)
    return e / e.sum()


def ingest_decode(endpoint, model, cascade, stats=None, window_len=SEGMENT_LEN,
                  frame_samples=50, max_windows=None, connect_retries=10,
                  retry_delay_s=0.2):
    """Connects to a replay server and yields one DecodedWindow per
    window_len new samples.

    Frames are reassembled in sequence order: missing seqs are counted as
    gaps and zero-filled with frame_samples samples each, stale or repeated
    seqs are dropped and counted as duplicates. Each completed window is
    causally filtered from zero state and classified. A trailing partial
    window yields nothing.
    """
    if stats is None:
        stats = StreamStats()
    sock = _connect(endpoint, connect_retries, retry_delay_s)
    frame_queue = queue.Queue(maxsize=64)
    reader = threading.Thread(target=_read_frames, args=(sock, frame_queue),
                              daemon=True)
    reader.start()
    buffer = np.zeros((N_CHANNELS, window_len), dtype=np.float32)
    filled = 0
    stream_pos = 0
    windows = 0
    expected_seq = None
    try:
        while True:
            blob = frame_queue.get()
            if blob is None:
                break
            frame = decode_frame(blob)
            stats.frames_received += 1
            if expected_seq is None:
                expected_seq = frame.seq
            if frame.seq < expected_seq:
                stats.duplicate_frames += 1
                continue
            chunks = []
            if frame.seq > expected_seq:
                missing = frame.seq - expected_seq
                stats.gaps_detected += missing
                chunks.append(np.zeros((N_CHANNELS, missing * frame_samples),
                                       dtype=np.float32))
            chunks.append(frame.to_millivolts())
            stats.samples_delivered += frame.n_samples
            expected_seq = frame.seq + 1
            for chunk in chunks:
                offset = 0
                while offset < chunk.shape[1]:
                    take = min(window_len - filled, chunk.shape[1] - offset)
                    buffer[:, filled:filled + take] = chunk[:, offset:offset + take]
                    filled += take
                    offset += take
                    stream_pos += take
                    if filled == window_len:
                        t0 = time.perf_counter()
                        window = apply_iir(cascade, buffer, mode="causal")
                        logits, _ = model.forward(
                            window.astype(np.float32), mode="eval")
                        latency = time.perf_counter() - t0
                        probs = _softmax(logits)
                        word_id = int(np.argmax(logits)) + 1
                        yield DecodedWindow(stream_pos, word_id,
                                            WORDS[word_id], probs, latency)
                        filled = 0
                        windows += 1
                        if max_windows is not None and windows >= max_windows:
                            return
    finally:
        sock.close()
        reader.join(timeout=5.0)
