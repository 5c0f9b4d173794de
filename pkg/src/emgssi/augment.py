"""Training-time augmentations: common time shift, additive Gaussian noise,
and a global amplitude scale plus offset. Applied after filtering; labels and
shapes are never touched."""

from dataclasses import dataclass, replace

import numpy as np

from .synth import EmgSegment

__all__ = [
    "AugmentConfig",
    "time_shift",
    "inject_noise",
    "scale_offset",
    "augment_batch",
]


@dataclass(frozen=True)
class AugmentConfig:
    max_shift_samples: int = 100
    noise_mode: str = "fixed_sigma"  # or "target_snr"
    sigma_mv: float = 0.02
    target_snr_db: float = 30.0
    scale_range: tuple = (0.9, 1.1)
    offset_range_mv: tuple = (-0.1, 0.1)
    apply_probability: float = 0.5

    def __post_init__(self):
        if self.max_shift_samples < 0 or self.sigma_mv < 0:
            raise ValueError("shift bound and sigma must be nonnegative")
        if self.noise_mode not in ("fixed_sigma", "target_snr"):
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}")
        if not (self.scale_range[0] <= self.scale_range[1] and self.offset_range_mv[0] <= self.offset_range_mv[1]):
            raise ValueError("ranges must be well ordered")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValueError("apply_probability must be in [0, 1]")


def _unwrap(segment):
    if isinstance(segment, EmgSegment):
        return np.asarray(segment.data), segment
    return np.asarray(segment), None


def _rewrap(data, original):
    if original is None:
        return data
    return replace(original, data=data)


def time_shift(segment, shift, max_shift=100):
    """Shift all channels by the same sample count, zero-filling the vacated
    samples. Positive shifts move content later in time."""
    shift = int(shift)
    if abs(shift) > max_shift:
        raise ValueError(f"|shift| must be at most {max_shift}")
    data, original = _unwrap(segment)
    out = np.zeros_like(data)
    if shift == 0:
        out[:] = data
    elif shift > 0:
        out[:, shift:] = data[:, :-shift]
    else:
        out[:, :shift] = data[:, -shift:]
    return _rewrap(out, original)


def inject_noise(segment, config, rng):
    """Add Gaussian noise, either with fixed sigma or scaled per channel to
    hit the configured signal-to-noise ratio. Channels with zero power are
    left untouched in target_snr mode."""
    data, original = _unwrap(segment)
    noise = rng.standard_normal(data.shape)
    if config.noise_mode == "fixed_sigma":
        out = data + config.sigma_mv * noise.astype(data.dtype)
    else:
        power = (data.astype(np.float64) ** 2).mean(axis=1)
        noise_rms = np.sqrt(power) * 10.0 ** (-config.target_snr_db / 20.0)
        out = data + (noise_rms[:, None] * noise).astype(data.dtype)
    return _rewrap(out, original)


def scale_offset(segment, scale, offset_mv, scale_range=(0.9, 1.1), offset_range_mv=(-0.1, 0.1)):
    """Apply y = scale * x + offset uniformly to every channel and sample."""
    if not scale_range[0] <= scale <= scale_range[1]:
        raise ValueError(f"scale must be in {scale_range}")
    if not offset_range_mv[0] <= offset_mv <= offset_range_mv[1]:
        raise ValueError(f"offset must be in {offset_range_mv}")
    data, original = _unwrap(segment)
    out = (scale * data + offset_mv).astype(data.dtype)
    return _rewrap(out, original)


def augment_batch(segments, config, rng):
    """Independently apply each transform with config.apply_probability per
    segment, parameters drawn uniformly from the configured ranges."""
    out = []
    for segment in segments:
        if rng.random() < config.apply_probability:
            shift = int(rng.integers(-config.max_shift_samples, config.max_shift_samples + 1))
            segment = time_shift(segment, shift, config.max_shift_samples)
        if rng.random() < config.apply_probability:
            segment = inject_noise(segment, config, rng)
        if rng.random() < config.apply_probability:
            scale = rng.uniform(*config.scale_range)
            offset = rng.uniform(*config.offset_range_mv)
            segment = scale_offset(segment, scale, offset, config.scale_range, config.offset_range_mv)
        out.append(segment)
    return out
