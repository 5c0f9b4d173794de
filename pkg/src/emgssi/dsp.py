"""Signal conditioning for 4-channel surface EMG.

Covers Butterworth bandpass design realized as biquad second-order sections,
causal and zero-phase filtering, fixed-length window segmentation, a Morlet
scalogram for time-frequency inspection, and a band-power ratio used to
quantify low-frequency motion-artefact contamination.
"""

import cmath
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

__all__ = [
    "FilterSpec",
    "BiquadCascade",
    "Scalogram",
    "design_bandpass",
    "frequency_response",
    "apply_iir",
    "segment_stream",
    "cwt_scalogram",
    "band_power_ratio",
]


@dataclass(frozen=True)
class FilterSpec:
    """Bandpass design request: lowpass prototype order and corner placement."""

    prototype_order: int = 4
    low_hz: float = 20.0
    high_hz: float = 450.0
    fs_hz: float = 1000.0

    def __post_init__(self):
        if self.prototype_order < 1:
            raise ValueError("prototype_order must be at least 1")
        if not 0.0 < self.low_hz < self.high_hz:
            raise ValueError("need 0 < low_hz < high_hz")
        if self.high_hz >= self.fs_hz / 2.0:
            raise ValueError("high corner must sit below the Nyquist frequency")


@dataclass(frozen=True)
class BiquadCascade:
    """Filter realization: rows of (b0, b1, b2, a1, a2) with a0 = 1, plus a
    single overall gain applied once per pass."""

    sections: np.ndarray
    overall_gain: float

    def __post_init__(self):
        sec = np.asarray(self.sections, dtype=np.float64)
        if sec.ndim != 2 or sec.shape[1] != 5:
            raise ValueError("sections must be an [n, 5] array")
        object.__setattr__(self, "sections", sec)
        # poles strictly inside the unit circle for every section
        for _, _, _, a1, a2 in sec:
            if not (abs(a2) < 1.0 and abs(a1) < 1.0 + a2):
                raise ValueError("unstable biquad section")


@dataclass(frozen=True)
class Scalogram:
    """Wavelet magnitude map: one row per analysis frequency."""

    magnitudes: np.ndarray
    freqs_hz: np.ndarray
    times_s: np.ndarray


def design_bandpass(spec):
    """Design a Butterworth bandpass as a biquad cascade.

    The lowpass prototype of order n is transformed to a 2n-pole bandpass and
    discretized with the bilinear transform, corner frequencies prewarped so
    the digital response is exactly -3.01 dB at low_hz and high_hz. Returns
    prototype_order sections, each carrying one zero at z=+1 and one at z=-1.
    """
    n = spec.prototype_order
    fs = spec.fs_hz
    w1 = 2.0 * fs * math.tan(math.pi * spec.low_hz / fs)
    w2 = 2.0 * fs * math.tan(math.pi * spec.high_hz / fs)
    bw = w2 - w1
    w0sq = w1 * w2
    kb = 2.0 * fs

    # analog prototype poles on the unit circle, left half-plane
    proto = [cmath.exp(1j * math.pi * (2 * k + n - 1) / (2 * n)) for k in range(1, n + 1)]

    # lowpass-to-bandpass: each prototype pole splits into two
    analog = []
    for p in proto:
        term = p * bw / 2.0
        disc = cmath.sqrt(term * term - w0sq)
        analog.append(term + disc)
        analog.append(term - disc)

    # bilinear transform of the poles; the n zeros at s=0 map to z=+1 and the
    # transform itself contributes n zeros at z=-1
    digital = [(kb + q) / (kb - q) for q in analog]
    gain_c = complex(bw * kb) ** n
    for q in analog:
        gain_c /= kb - q
    gain = gain_c.real

    for z in digital:
        if abs(z) >= 1.0:
            raise ValueError("design produced an unstable pole")

    tol = 1e-9
    upper = [z for z in digital if z.imag > tol]
    reals = sorted(z.real for z in digital if abs(z.imag) <= tol)
    sections = []
    for z in upper:
        sections.append((1.0, 0.0, -1.0, -2.0 * z.real, abs(z) ** 2))
    for r1, r2 in zip(reals[0::2], reals[1::2]):
        sections.append((1.0, 0.0, -1.0, -(r1 + r2), r1 * r2))
    if len(sections) != n:
        raise ValueError("pole pairing failed to produce one section per prototype pole")
    sections.sort(key=lambda s: (s[4], s[3]))
    return BiquadCascade(np.array(sections, dtype=np.float64), gain)


def frequency_response(cascade, freqs_hz, fs_hz):
    """Complex response of the cascade at the given frequencies."""
    w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / fs_hz
    z = np.exp(1j * w)
    zi1 = 1.0 / z
    zi2 = zi1 * zi1
    h = np.full(z.shape, cascade.overall_gain, dtype=np.complex128)
    for b0, b1, b2, a1, a2 in cascade.sections:
        h *= (b0 + b1 * zi1 + b2 * zi2) / (1.0 + a1 * zi1 + a2 * zi2)
    return h


def apply_iir(cascade, signal, mode="zero_phase"):
    """Filter a signal (1-D, or 2-D with time on the last axis).

    causal mode runs the cascade left to right in direct form II transposed
    with zero initial state; zero_phase mode filters forward then backward,
    squaring the magnitude response and cancelling phase. Output is float64
    with the input's shape.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim not in (1, 2):
        raise ValueError("signal must be 1-D or 2-D")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains NaN or Inf")
    if mode not in ("causal", "zero_phase"):
        raise ValueError(f"unknown mode {mode!r}")
    flat = np.atleast_2d(x)
    y = _kernels.sosfilt_many(cascade.sections, cascade.overall_gain, flat)
    if mode == "zero_phase":
        y = _kernels.sosfilt_many(cascade.sections, cascade.overall_gain, y[:, ::-1])
        y = y[:, ::-1]
    return np.ascontiguousarray(y).reshape(x.shape)


def segment_stream(samples, fs_hz, window_s=3.0):
    """Cut a [channels x n] sample block into consecutive non-overlapping
    windows of window_s seconds; the trailing remainder is dropped."""
    data = np.asarray(samples)
    if data.ndim != 2:
        raise ValueError("samples must be a [channels x n] matrix")
    wlen = int(round(window_s * fs_hz))
    n = data.shape[1]
    if n < wlen:
        raise ValueError(f"need at least {wlen} samples, got {n}")
    return [data[:, i * wlen:(i + 1) * wlen].copy() for i in range(n // wlen)]


def _fft_conv_same(x, h):
    # centered linear convolution; h has odd length
    n, m = len(x), len(h)
    nfft = 1
    while nfft < n + m - 1:
        nfft *= 2
    y = np.fft.ifft(np.fft.fft(x, nfft) * np.fft.fft(h, nfft))[: n + m - 1]
    half = (m - 1) // 2
    return y[half:half + n]


def cwt_scalogram(signal, fs_hz, freqs_hz, omega0=6.0):
    """Morlet continuous wavelet transform magnitude, one row per frequency.

    Wavelets are L1-normalized so a unit-amplitude sinusoid produces the same
    peak magnitude at every analysis frequency.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("signal must be 1-D")
    freqs = np.asarray(freqs_hz, dtype=np.float64)
    if freqs.size == 0:
        raise ValueError("need at least one analysis frequency")
    if np.any(np.diff(freqs) <= 0):
        raise ValueError("frequencies must be strictly increasing")
    if freqs[0] <= 0 or freqs[-1] >= fs_hz / 2.0:
        raise ValueError("frequencies must lie in (0, fs/2)")
    mags = np.empty((freqs.size, x.size))
    for i, f in enumerate(freqs):
        scale = omega0 * fs_hz / (2.0 * np.pi * f)
        half = int(math.ceil(5.0 * scale))
        t = np.arange(-half, half + 1, dtype=np.float64)
        wavelet = np.exp(1j * omega0 * t / scale) * np.exp(-0.5 * (t / scale) ** 2)
        wavelet /= np.abs(wavelet).sum()
        mags[i] = np.abs(_fft_conv_same(x, np.conj(wavelet[::-1])))
    return Scalogram(mags, freqs, np.arange(x.size) / fs_hz)


def band_power_ratio(signal, fs_hz, split_hz=20.0):
    """Fraction of periodogram power below split_hz; 0 for an all-zero input."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("signal must be 1-D")
    if x.size < 256:
        raise ValueError("signal too short for a stable periodogram (need 256)")
    power = np.abs(np.fft.rfft(x)) ** 2
    total = power.sum()
    if total == 0.0:
        return 0.0
    below = np.fft.rfftfreq(x.size, 1.0 / fs_hz) < split_hz
    return float(power[below].sum() / total)
