from datetime import datetime, timezone

import numpy as np
import pytest

from eegscribe.edf import EegRecording
from eegscribe.errors import SignalProcessingError
from eegscribe.signal import (
    CANONICAL_CHANNELS, bandpass_notch, epoch, montage_map, resample,
    welch_band_power,
)

UTC0 = datetime(2024, 1, 1, tzinfo=timezone.utc)


def _rec(samples, rate, channels=None):
    channels = channels or [f"ch{i}" for i in range(samples.shape[0])]
    return EegRecording(channels, rate, samples, UTC0)


def _sine(freq, rate, seconds, amp=1.0):
    t = np.arange(int(rate * seconds)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def _steady_amplitude(x, rate, trim_seconds=15.0):
    """Peak amplitude of the steady-state middle segment.

    The 0.1 Hz high-pass corner rings for over ten seconds from each edge
    under forward-backward filtering, so the fixture must be long and the
    measurement taken well inside it.
    """
    trim = int(trim_seconds * rate)
    core = x[trim:-trim]
    return np.abs(core).max()


class TestBandpassNotch:
    def test_zero_signal_stays_zero(self):
        rec = _rec(np.zeros((2, 2560)), 256.0)
        out = bandpass_notch(rec)
        np.testing.assert_allclose(out.samples, 0.0)

    def test_passband_tone_preserved(self):
        rec = _rec(_sine(10.0, 256.0, 40.0)[None, :], 256.0)
        out = bandpass_notch(rec)
        amp = _steady_amplitude(out.samples[0], 256.0)
        assert abs(amp - 1.0) < 0.05

    def test_notch_attenuates_60hz(self):
        rec = _rec(_sine(60.0, 256.0, 40.0)[None, :], 256.0)
        out = bandpass_notch(rec)
        assert _steady_amplitude(out.samples[0], 256.0) < 0.05

    def test_length_and_channel_order_preserved(self):
        rng = np.random.default_rng(0)
        rec = _rec(rng.normal(0, 1, (3, 5000)), 250.0, ["a", "b", "c"])
        out = bandpass_notch(rec)
        assert out.samples.shape == rec.samples.shape
        assert out.channels == rec.channels

    def test_rate_too_low_rejected(self):
        rec = _rec(np.zeros((1, 1000)), 100.0)
        with pytest.raises(SignalProcessingError):
            bandpass_notch(rec, high_hz=75.0)


class TestResample:
    def test_identity_rate_returns_same_samples(self):
        rng = np.random.default_rng(1)
        rec = _rec(rng.normal(0, 1, (2, 4000)), 200.0)
        out = resample(rec, 200.0)
        np.testing.assert_array_equal(out.samples, rec.samples)

    def test_sine_matches_analytic_waveform(self):
        seconds = 10.0
        rec = _rec(_sine(5.0, 512.0, seconds)[None, :], 512.0)
        out = resample(rec, 200.0)
        t = np.arange(out.samples.shape[1]) / 200.0
        expected = np.sin(2 * np.pi * 5.0 * t)
        core = slice(200, -200)  # edges handled by the polyphase filter
        rms = np.sqrt(np.mean((out.samples[0][core] - expected[core]) ** 2))
        assert rms < 1e-2

    def test_above_nyquist_tone_suppressed(self):
        rec = _rec(_sine(90.0, 400.0, 10.0)[None, :], 400.0)
        out = resample(rec, 200.0)
        rms = np.sqrt(np.mean(out.samples[0] ** 2))
        assert rms < 0.05

    def test_duration_preserved_within_one_sample(self):
        rec = _rec(np.zeros((1, 5120)), 512.0)
        out = resample(rec, 200.0)
        assert abs(out.samples.shape[1] / 200.0 - 10.0) <= 1 / 200.0


class TestMontage:
    def test_canonical_input_identity(self):
        rng = np.random.default_rng(2)
        rec = _rec(rng.normal(0, 1, (22, 100)), 200.0, list(CANONICAL_CHANNELS))
        out = montage_map(rec)
        assert out.channels == CANONICAL_CHANNELS
        np.testing.assert_array_equal(out.samples, rec.samples)
        assert not [f for f in out.flags if f.startswith("missing_channel")]

    def test_uppercase_alias(self):
        rec = _rec(np.ones((1, 10)), 200.0, ["FP1"])
        out = montage_map(rec)
        row = CANONICAL_CHANNELS.index("Fp1")
        np.testing.assert_array_equal(out.samples[row], 1.0)

    def test_modern_temporal_names(self):
        rec = _rec(np.ones((2, 10)), 200.0, ["T7", "P8"])
        out = montage_map(rec)
        np.testing.assert_array_equal(out.samples[CANONICAL_CHANNELS.index("T3")], 1.0)
        np.testing.assert_array_equal(out.samples[CANONICAL_CHANNELS.index("T6")], 1.0)

    def test_missing_channels_zero_filled_and_flagged(self):
        labels = [c for c in CANONICAL_CHANNELS if c not in ("A1", "A2")]
        rec = _rec(np.ones((20, 10)), 200.0, labels)
        out = montage_map(rec)
        assert len(out.channels) == 22
        missing = {f for f in out.flags if f.startswith("missing_channel")}
        assert missing == {"missing_channel:A1", "missing_channel:A2"}
        np.testing.assert_array_equal(out.samples[CANONICAL_CHANNELS.index("A1")], 0.0)

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        rec = _rec(rng.normal(0, 1, (3, 50)), 200.0, ["C3", "O1", "T7"])
        once = montage_map(rec)
        twice = montage_map(once)
        assert once.channels == twice.channels
        np.testing.assert_array_equal(once.samples, twice.samples)
        assert sorted(once.flags) == sorted(twice.flags)


class TestEpoch:
    def test_two_hour_recording_shape(self):
        rec = _rec(np.zeros((22, int(7200 * 200))), 200.0,
                   list(CANONICAL_CHANNELS))
        ep = epoch(rec, 10.0)
        assert ep.epochs.shape == (720, 22, 2000)

    def test_trailing_partial_discarded(self):
        rec = _rec(np.zeros((1, int(25 * 200))), 200.0)
        assert epoch(rec, 10.0).epochs.shape[0] == 2

    def test_exact_boundary(self):
        rec = _rec(np.zeros((1, 2000)), 200.0)
        assert epoch(rec, 10.0).epochs.shape[0] == 1

    def test_too_short_errors(self):
        rec = _rec(np.zeros((1, 1999)), 200.0)
        with pytest.raises(SignalProcessingError):
            epoch(rec, 10.0)

    @pytest.mark.parametrize("seconds", [10, 25, 31, 59, 100])
    def test_count_arithmetic(self, seconds):
        rec = _rec(np.zeros((1, seconds * 200)), 200.0)
        assert epoch(rec, 10.0).epochs.shape[0] == seconds // 10


def _periodogram_band_power(x, rate, lo, hi):
    """Independent oracle: plain rectangular-window periodogram integral."""
    n = x.size
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n, d=1 / rate)
    psd = (np.abs(spec) ** 2) / (rate * n)
    psd[1:-1] *= 2
    df = freqs[1] - freqs[0]
    return psd[(freqs >= lo) & (freqs < hi)].sum() * df


class TestWelchBandPower:
    def test_alpha_tone_dominates(self):
        rec = _rec(_sine(10.0, 200.0, 10.0)[None, :], 200.0)
        ep = epoch(rec, 10.0)
        bp = welch_band_power(ep)
        linear = 10 ** (bp.values[0, 0] / 10)
        assert linear[2] / linear.sum() >= 0.95

    def test_zero_epoch_hits_floor(self):
        rec = _rec(np.zeros((1, 2000)), 200.0)
        bp = welch_band_power(epoch(rec, 10.0))
        np.testing.assert_allclose(bp.values, 10 * np.log10(bp.floor))

    def test_balanced_two_tone_mixture(self):
        x = _sine(2.0, 200.0, 10.0) + _sine(20.0, 200.0, 10.0)
        bp = welch_band_power(epoch(_rec(x[None, :], 200.0), 10.0))
        delta_db, beta_db = bp.values[0, 0, 0], bp.values[0, 0, 3]
        assert abs(delta_db - beta_db) < 0.5

    def test_matches_periodogram_oracle_for_tone(self):
        x = _sine(10.0, 200.0, 10.0)
        bp = welch_band_power(epoch(_rec(x[None, :], 200.0), 10.0))
        oracle = _periodogram_band_power(x, 200.0, 8.0, 13.0)
        assert abs(bp.values[0, 0, 2] - 10 * np.log10(oracle)) < 1.0

    def test_parseval_sanity_on_broadband_noise(self):
        rng = np.random.default_rng(4)
        x = rng.normal(0, 1, 4000)
        bp = welch_band_power(epoch(_rec(x[None, :], 200.0), 10.0))
        total_band = (10 ** (bp.values[0, 0] / 10)).sum()
        oracle = _periodogram_band_power(x[:2000], 200.0, 0.5, 80.0)
        assert abs(total_band - oracle) / oracle < 0.10

    def test_band_truncated_at_nyquist_with_flag(self):
        rec = _rec(np.zeros((1, 1280)), 128.0)
        bp = welch_band_power(epoch(rec, 10.0))
        assert "gamma" in bp.truncated_bands
        assert bp.bands[-1][2] == 64.0

    def test_epoch_pooling_concatenates_time(self):
        rng = np.random.default_rng(5)
        x = rng.normal(0, 1, 6000)
        ep = epoch(_rec(x[None, :], 200.0), 10.0)
        pooled = welch_band_power(ep, pool_epochs=3)
        assert pooled.values.shape == (1, 1, 5)
        direct = welch_band_power(epoch(_rec(x[None, :], 200.0), 30.0))
        np.testing.assert_allclose(pooled.values, direct.values, atol=1e-9)

    def test_pool_must_be_positive(self):
        rec = _rec(np.zeros((1, 2000)), 200.0)
        with pytest.raises(SignalProcessingError):
            welch_band_power(epoch(rec, 10.0), pool_epochs=0)
