# tests/test_dsp.py
import numpy as np
import pytest
from hypothesis import given, strategies as st

from converters.mulaw import compand, expand, mulaw_decode, mulaw_encode
from core.dsp import (
    AudioBuffer,
    FeatureConfig,
    NormStats,
    band_centers_hz,
    features_for,
    frame_count,
    logmel,
    mel_filterbank,
    mel_scale,
    mel_to_hz,
    normalize,
    normalize_array,
    utterance_stats,
)
from core.errors import ConfigError


def _sine(freq_hz, seconds=1.0, rate=16000, amplitude=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return AudioBuffer(amplitude * np.sin(2 * np.pi * freq_hz * t), rate)


# ===== Mel scale =====


@pytest.mark.parametrize("f_hz, mel", [(0.0, 0.0), (700.0, 781.17), (8000.0, 2840.03)])
def test_mel_scale_values(f_hz, mel):
    assert float(mel_scale(f_hz)) == pytest.approx(mel, abs=0.01)


def test_mel_scale_rejects_negative_frequency():
    with pytest.raises(ValueError):
        mel_scale(-1.0)


@given(st.floats(min_value=0.0, max_value=20000.0))
def test_mel_round_trip(f_hz):
    assert float(mel_to_hz(mel_scale(f_hz))) == pytest.approx(f_hz, abs=1e-6)


def test_mel_scale_strictly_increasing():
    m = mel_scale(np.linspace(0.0, 8000.0, 1000))
    assert np.all(np.diff(m) > 0)


def test_filterbank_covers_interior_bins():
    cfg = FeatureConfig()
    fb = mel_filterbank(cfg)
    assert fb.shape == (64, 513)
    assert np.all(fb >= 0)
    assert np.all(fb.sum(axis=0)[1:-1] > 0)


# ===== Log-mel =====


def test_one_second_gives_39_frames():
    cfg = FeatureConfig()
    assert frame_count(16000, cfg) == 39
    assert logmel(AudioBuffer(np.zeros(16000)), cfg).shape == (64, 39)


def test_short_audio_gives_no_frames():
    cfg = FeatureConfig()
    assert logmel(AudioBuffer(np.zeros(799)), cfg).shape == (64, 0)


def test_silence_hits_the_floor():
    cfg = FeatureConfig()
    feats = logmel(AudioBuffer(np.zeros(4000)), cfg).to_float()
    np.testing.assert_allclose(feats, np.log(cfg.floor_eps), rtol=1e-6)


def test_sine_peaks_in_its_band():
    cfg = FeatureConfig()
    centers = band_centers_hz(cfg)
    peaks = np.argmax(logmel(_sine(1000.0), cfg).to_float(), axis=0)
    for band in set(peaks.tolist()):
        lower = centers[band - 1] if band > 0 else 0.0
        upper = centers[band + 1] if band + 1 < len(centers) else cfg.fmax_hz
        assert lower <= 1000.0 <= upper


def test_logmel_scales_with_magnitude():
    cfg = FeatureConfig()
    quiet = logmel(_sine(1000.0, amplitude=0.2), cfg).to_float()
    loud = logmel(_sine(1000.0, amplitude=0.4), cfg).to_float()
    peaks = np.argmax(quiet, axis=0)
    cols = np.arange(quiet.shape[1])
    np.testing.assert_allclose(
        loud[peaks, cols] - quiet[peaks, cols], np.log(2.0), atol=1e-5
    )


def test_logmel_is_shift_covariant():
    cfg = FeatureConfig()
    audio = _sine(440.0, seconds=0.5).samples + 0.1 * _sine(2500.0, 0.5).samples
    base = logmel(AudioBuffer(audio), cfg).to_float()
    delayed = logmel(
        AudioBuffer(np.concatenate([np.zeros(cfg.hop_samples), audio])), cfg
    ).to_float()
    np.testing.assert_allclose(delayed[:, 1:], base, atol=1e-5)


def test_sample_rate_mismatch():
    with pytest.raises(ConfigError):
        logmel(AudioBuffer(np.zeros(16000), 8000), FeatureConfig())


def test_feature_config_round_trips_through_dict():
    cfg = FeatureConfig(mel_bands=40, hop_ms=10.0, win_ms=25.0)
    assert FeatureConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.frame_rate_hz == pytest.approx(100.0)


def test_window_shorter_than_hop_is_rejected():
    with pytest.raises(ConfigError):
        FeatureConfig(win_ms=10.0, hop_ms=25.0)


# ===== Normalization =====


def test_self_normalization_is_standard():
    feats = logmel(_sine(300.0), FeatureConfig())
    feats = feats.with_data(
        feats.data + np.random.default_rng(0).normal(size=feats.shape)
    )
    out = normalize_array(feats.to_float(), utterance_stats(feats))
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-6)


def test_unit_stats_are_identity():
    x = np.random.default_rng(1).normal(size=(4, 10))
    stats = NormStats(np.zeros(4), np.ones(4))
    np.testing.assert_allclose(normalize_array(x, stats), x)


def test_constant_band_with_own_mean_is_zero():
    x = np.full((2, 6), 3.5)
    stats = NormStats(np.full(2, 3.5), np.ones(2))
    assert not normalize_array(x, stats).any()


def test_non_positive_std_rejected():
    with pytest.raises(ConfigError):
        NormStats(np.zeros(2), np.array([1.0, 0.0]))


def test_features_for_prefers_configured_stats():
    stats = NormStats(np.zeros(64), np.full(64, 2.0))
    cfg = FeatureConfig(norm=stats)
    audio = _sine(800.0, seconds=0.25)
    feats, used = features_for(audio, cfg)
    assert used is stats
    np.testing.assert_allclose(
        feats.to_float(), normalize(logmel(audio, cfg), stats).to_float()
    )


# ===== mu-law =====


@pytest.mark.parametrize("x, code", [(1.0, 255), (-1.0, 0), (0.0, 128)])
def test_mulaw_codes(x, code):
    assert int(mulaw_encode(x)) == code


def test_mulaw_clamps_out_of_range():
    assert mulaw_encode([2.0, -3.0]).tolist() == [255, 0]


def test_mulaw_monotone_and_accurate():
    x = np.linspace(-1.0, 1.0, 10001)
    codes = mulaw_encode(x)
    assert np.all(np.diff(codes.astype(int)) >= 0)
    assert np.abs(x - mulaw_decode(codes)).max() <= 0.025


@given(st.floats(min_value=-1.0, max_value=1.0))
def test_expand_inverts_compand(x):
    assert float(expand(compand(x))) == pytest.approx(x, abs=1e-12)
