import numpy as np
import pytest
import scipy.signal

from emgssi.dsp import (
    BiquadCascade,
    FilterSpec,
    apply_iir,
    band_power_ratio,
    cwt_scalogram,
    design_bandpass,
    segment_stream,
)

FS = 1000.0


def cascade_to_ba(cascade):
    """Expand the section product into single numerator/denominator polys."""
    b = np.array([cascade.overall_gain])
    a = np.array([1.0])
    for b0, b1, b2, a1, a2 in cascade.sections:
        b = np.convolve(b, [b0, b1, b2])
        a = np.convolve(a, [1.0, a1, a2])
    return b, a


def response_db(cascade, freq_hz, fs_hz=FS):
    # straight-line unit-circle evaluation, independent of the package helper
    b, a = cascade_to_ba(cascade)
    z = np.exp(-1j * 2.0 * np.pi * freq_hz / fs_hz)
    h = np.polyval(b[::-1], z) / np.polyval(a[::-1], z)
    return 20.0 * np.log10(abs(h))


@pytest.fixture(scope="module")
def cascade():
    return design_bandpass(FilterSpec(4, 20.0, 450.0, 1000.0))


class TestFilterSpec:
    def test_defaults_are_valid(self):
        spec = FilterSpec()
        assert (spec.prototype_order, spec.low_hz, spec.high_hz, spec.fs_hz) == (4, 20.0, 450.0, 1000.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(prototype_order=0),
            dict(low_hz=0.0),
            dict(low_hz=500.0, high_hz=450.0),
            dict(high_hz=500.0),
            dict(high_hz=600.0),
        ],
    )
    def test_invalid_specs_rejected(self, kwargs):
        with pytest.raises(ValueError):
            FilterSpec(**{**dict(prototype_order=4, low_hz=20.0, high_hz=450.0, fs_hz=1000.0), **kwargs})


class TestDesignBandpass:
    def test_section_count_is_prototype_order(self, cascade):
        assert cascade.sections.shape == (4, 5)
        for order in (1, 2, 3, 5):
            assert design_bandpass(FilterSpec(order, 20.0, 450.0, 1000.0)).sections.shape[0] == order

    def test_dc_is_blocked(self, cascade):
        b, _ = cascade_to_ba(cascade)
        assert abs(np.polyval(b[::-1], 1.0)) < 1e-6

    def test_corner_attenuation(self, cascade):
        assert response_db(cascade, 20.0) == pytest.approx(-3.0103, abs=0.1)
        assert response_db(cascade, 450.0) == pytest.approx(-3.0103, abs=0.1)

    def test_center_is_unity(self, cascade):
        center = np.sqrt(20.0 * 450.0)
        assert response_db(cascade, center) == pytest.approx(0.0, abs=0.05)

    def test_stopband_attenuation(self, cascade):
        assert response_db(cascade, 5.0) <= -20.0
        assert response_db(cascade, 495.0) <= -20.0

    def test_coefficients_match_textbook_oracle(self, cascade):
        # scipy follows the same textbook route: analog prototype poles,
        # lowpass-to-bandpass transform, bilinear transform
        b, a = cascade_to_ba(cascade)
        b_ref, a_ref = scipy.signal.butter(4, [20.0, 450.0], btype="bandpass", fs=1000.0)
        np.testing.assert_allclose(b, b_ref, rtol=0, atol=1e-10)
        np.testing.assert_allclose(a, a_ref, rtol=0, atol=1e-10)

    @pytest.mark.parametrize("order,lo,hi", [(1, 5.0, 50.0), (2, 20.0, 450.0), (3, 1.0, 480.0), (5, 30.0, 300.0)])
    def test_other_designs_match_scipy(self, order, lo, hi):
        b, a = cascade_to_ba(design_bandpass(FilterSpec(order, lo, hi, 1000.0)))
        b_ref, a_ref = scipy.signal.butter(order, [lo, hi], btype="bandpass", fs=1000.0)
        np.testing.assert_allclose(b, b_ref, rtol=0, atol=1e-9)
        np.testing.assert_allclose(a, a_ref, rtol=0, atol=1e-9)

    def test_sections_are_stable(self, cascade):
        for _, _, _, a1, a2 in cascade.sections:
            roots = np.roots([1.0, a1, a2])
            assert np.all(np.abs(roots) < 1.0)

    def test_unstable_section_rejected(self):
        with pytest.raises(ValueError):
            BiquadCascade(np.array([[1.0, 0.0, -1.0, -2.5, 1.2]]), 1.0)


class TestApplyIir:
    def test_zero_in_zero_out(self, cascade):
        y = apply_iir(cascade, np.zeros(3000), mode="causal")
        assert y.shape == (3000,)
        assert np.all(y == 0.0)

    def test_constant_input_is_blocked(self, cascade):
        y = apply_iir(cascade, np.ones(3000), mode="causal")
        assert np.abs(y[500:]).max() < 1e-3

    def test_center_sine_passes_unattenuated(self, cascade):
        t = np.arange(6000) / FS
        y = apply_iir(cascade, np.sin(2 * np.pi * np.sqrt(20.0 * 450.0) * t), mode="causal")
        assert np.abs(y[3000:]).max() == pytest.approx(1.0, rel=0.02)

    def test_rejects_non_finite(self, cascade):
        bad = np.zeros(3000)
        bad[7] = np.nan
        with pytest.raises(ValueError):
            apply_iir(cascade, bad)
        bad[7] = np.inf
        with pytest.raises(ValueError):
            apply_iir(cascade, bad, mode="causal")

    def test_causal_matches_scipy_sosfilt(self, cascade):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 2000))
        sos = np.concatenate([cascade.sections[:, :3], np.ones((4, 1)), cascade.sections[:, 3:]], axis=1)
        ref = scipy.signal.sosfilt(sos, x, axis=-1) * cascade.overall_gain
        np.testing.assert_allclose(apply_iir(cascade, x, mode="causal"), ref, rtol=0, atol=1e-12)

    def test_zero_phase_matches_forward_backward(self, cascade):
        rng = np.random.default_rng(4)
        x = rng.normal(size=1500)
        fwd = apply_iir(cascade, x, mode="causal")
        ref = apply_iir(cascade, fwd[::-1], mode="causal")[::-1]
        np.testing.assert_allclose(apply_iir(cascade, x, mode="zero_phase"), ref, rtol=0, atol=1e-12)

    def test_linearity(self, cascade):
        rng = np.random.default_rng(5)
        x, y = rng.normal(size=(2, 3000))
        a, b = 0.7, -1.3
        lhs = apply_iir(cascade, a * x + b * y, mode="causal")
        rhs = a * apply_iir(cascade, x, mode="causal") + b * apply_iir(cascade, y, mode="causal")
        scale = np.abs(rhs).max()
        assert np.abs(lhs - rhs).max() / scale < 1e-9

    def test_zero_phase_preserves_midpoint_symmetry(self, cascade):
        # a symmetric input with quiet edges, so startup transients stay tiny
        n = 3000
        i = np.arange(n)
        mid = (n - 1) / 2.0
        envelope = np.exp(-0.5 * ((i - mid) / 150.0) ** 2)
        x = envelope * np.cos(2 * np.pi * 80.0 * (i - mid) / FS)
        assert np.abs(x - x[::-1]).max() < 1e-12
        y = apply_iir(cascade, x, mode="zero_phase")
        assert np.abs(y - y[::-1]).max() < 1e-6

    def test_suppresses_artefact_band_in_contaminated_signal(self, cascade):
        # sub-10 Hz contamination dominates the raw spectrum and all but
        # vanishes after zero-phase filtering
        rng = np.random.default_rng(6)
        t = np.arange(3000) / FS
        carrier = rng.normal(size=3000)
        spectrum = np.fft.rfft(carrier)
        f = np.fft.rfftfreq(3000, 1.0 / FS)
        spectrum[(f < 20.0) | (f > 400.0)] = 0.0
        carrier = np.fft.irfft(spectrum, 3000)
        carrier /= np.sqrt((carrier**2).mean())
        for freqs in ([0.7, 3.0, 10.0], [1.5, 5.0], [9.0]):
            artefact = sum(np.sin(2 * np.pi * fq * t + k) for k, fq in enumerate(freqs))
            raw = 0.3 * carrier + artefact
            assert band_power_ratio(raw, FS) > 0.5
            assert band_power_ratio(apply_iir(cascade, raw), FS) < 0.05


class TestSegmentStream:
    def test_exact_multiple(self):
        windows = segment_stream(np.arange(4 * 9000).reshape(4, 9000), FS)
        assert len(windows) == 3
        assert all(w.shape == (4, 3000) for w in windows)
        np.testing.assert_array_equal(windows[1], np.arange(4 * 9000).reshape(4, 9000)[:, 3000:6000])

    def test_remainder_dropped(self):
        windows = segment_stream(np.ones((4, 3500)), FS)
        assert len(windows) == 1

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            segment_stream(np.ones((4, 2999)), FS)

    def test_windows_are_copies(self):
        src = np.zeros((4, 3000))
        windows = segment_stream(src, FS)
        windows[0][0, 0] = 5.0
        assert src[0, 0] == 0.0


class TestCwtScalogram:
    def test_zero_signal(self):
        sc = cwt_scalogram(np.zeros(1024), FS, np.geomspace(5.0, 495.0, 16))
        assert sc.magnitudes.shape == (16, 1024)
        assert np.abs(sc.magnitudes).max() < 1e-12

    def test_pure_tone_peaks_at_nearest_bin(self):
        freqs = np.geomspace(5.0, 495.0, 64)
        t = np.arange(3000) / FS
        sc = cwt_scalogram(np.sin(2 * np.pi * 100.0 * t), FS, freqs)
        assert np.all(sc.magnitudes >= 0.0)
        best = sc.magnitudes.mean(axis=1).argmax()
        assert best == np.abs(freqs - 100.0).argmin()

    def test_chirp_ridge_is_monotone(self):
        t = np.arange(3000) / FS
        chirp = np.sin(2 * np.pi * (20.0 * t + (200.0 - 20.0) / 6.0 * t**2))
        sc = cwt_scalogram(chirp, FS, np.geomspace(5.0, 495.0, 64))
        ridge = sc.magnitudes.argmax(axis=0)
        assert np.all(np.diff(ridge) >= 0)

    def test_invalid_frequencies_rejected(self):
        x = np.zeros(512)
        with pytest.raises(ValueError):
            cwt_scalogram(x, FS, np.array([]))
        with pytest.raises(ValueError):
            cwt_scalogram(x, FS, np.array([10.0, 10.0]))
        with pytest.raises(ValueError):
            cwt_scalogram(x, FS, np.array([10.0, 500.0]))


class TestBandPowerRatio:
    def test_low_tone(self):
        t = np.arange(3000) / FS
        assert band_power_ratio(np.sin(2 * np.pi * 5.0 * t), FS) > 0.95

    def test_high_tone(self):
        t = np.arange(3000) / FS
        assert band_power_ratio(np.sin(2 * np.pi * 100.0 * t), FS) < 0.05

    def test_zero_signal_is_zero(self):
        assert band_power_ratio(np.zeros(512), FS) == 0.0

    def test_short_signal_rejected(self):
        with pytest.raises(ValueError):
            band_power_ratio(np.zeros(255), FS)

    def test_matches_direct_periodogram(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=2048)
        power = np.abs(np.fft.rfft(x)) ** 2
        f = np.fft.rfftfreq(2048, 1.0 / FS)
        expected = power[f < 20.0].sum() / power.sum()
        assert band_power_ratio(x, FS) == pytest.approx(expected, rel=1e-12)
