# tests/test_tts.py
import numpy as np
import pytest

from core.analysis import Budget, port_model
from core.dsp import FeatureConfig, logmel
from core.errors import (
    ConfigError,
    EmptyInput,
    EmptyOutput,
    InvalidCharacter,
    ShapeMismatch,
)
from core.graph import GraphExecutor, GraphSpec, InputSpec, LayerKind, LayerSpec
from core.tensor import Tensor
from core.tts import (
    TTSConfig,
    TTSModel,
    build_vocoder,
    encode_text,
    length_regulate,
    predict_durations,
    reference_tts_model,
    spectrogram_infer,
    synthesize,
    text_to_ids,
    vocoder_full,
    vocoder_sliding,
)


def _mel(frames, bands=64, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=(bands, frames)))


# ===== Text =====


def test_text_ids():
    assert text_to_ids("a") == [1]
    assert text_to_ids("Hi'") == [8, 9, 28]


def test_digits_are_not_speakable():
    with pytest.raises(InvalidCharacter):
        text_to_ids("7")


def test_empty_text():
    with pytest.raises(EmptyInput):
        text_to_ids("")


# ===== Length regulation =====


def test_length_regulate_repeats_columns():
    enc = Tensor(np.array([[1.0, 2.0, 3.0]]))
    out = length_regulate(enc, [2, 0, 1])
    np.testing.assert_array_equal(out.to_float(), [[1.0, 1.0, 3.0]])


def test_all_zero_durations():
    with pytest.raises(EmptyOutput):
        length_regulate(Tensor(np.ones((2, 3))), [0, 0, 0])


def test_durations_must_match_characters():
    with pytest.raises(ShapeMismatch):
        length_regulate(Tensor(np.ones((2, 3))), [1, 1])


# ===== Spectrogram =====


def test_override_sets_frame_count(tts_model):
    mel = spectrogram_infer([1, 2, 3, 4, 5], tts_model, durations_override=[4] * 5)
    assert mel.shape == (64, 20)


def test_predicted_durations_respect_limits():
    model = reference_tts_model(seed=0, config=TTSConfig(dur_max=2))
    durations = predict_durations(encode_text(text_to_ids("hello"), model), model)
    assert len(durations) == 5
    assert all(1 <= d <= 2 for d in durations)


def test_config_validation():
    with pytest.raises(ConfigError):
        TTSConfig(chunk_frames=0)
    with pytest.raises(ConfigError):
        TTSConfig(dur_min=2, dur_max=1)


def test_vocoder_must_reach_the_hop(tts_model):
    short = build_vocoder(64, stages=((5, 8, 7),), seed=0)
    with pytest.raises(ConfigError):
        TTSModel(
            tts_model.config,
            tts_model.encoder,
            tts_model.duration_predictor,
            tts_model.decoder,
            short,
        )


# ===== Vocoder =====


def test_vocoder_emits_hop_samples_per_frame(tts_model):
    wave = vocoder_full(_mel(10), tts_model.vocoder)
    assert wave.shape == (1, 4000)


VOCODER_FRAMES = 10


@pytest.fixture(scope="module")
def ported_vocoder(tts_model):
    ported, _ = port_model(
        tts_model.vocoder, Budget(power_budget_mw=1e6), calibration=_mel(32, seed=99)
    )
    return ported


@pytest.mark.parametrize("chunk", range(1, VOCODER_FRAMES + 1))
def test_sliding_matches_full(tts_model, chunk):
    mel = _mel(VOCODER_FRAMES, seed=chunk)
    full = vocoder_full(mel, tts_model.vocoder).to_float()
    sliding = vocoder_sliding(mel, tts_model.vocoder, chunk).to_float()
    assert sliding.shape == full.shape
    np.testing.assert_allclose(sliding, full, rtol=0, atol=1e-6)


@pytest.mark.parametrize("chunk", range(1, VOCODER_FRAMES + 1))
def test_quantized_sliding_is_bit_exact(ported_vocoder, chunk):
    mel = _mel(VOCODER_FRAMES, seed=chunk)
    full = vocoder_full(mel, ported_vocoder)
    sliding = vocoder_sliding(mel, ported_vocoder, chunk)
    assert full.is_quantized
    assert sliding.quant == full.quant
    np.testing.assert_array_equal(sliding.data, full.data)


def test_sliding_needs_less_activation_memory(tts_model):
    mel = _mel(40)
    sliding = GraphExecutor(tts_model.vocoder)
    vocoder_sliding(mel, tts_model.vocoder, 4, executor=sliding)
    full = GraphExecutor(tts_model.vocoder)
    full.forward(mel)
    assert sliding.high_water_mark < full.high_water_mark


def test_identity_vocoder_upsamples_the_mel_row():
    layers = (
        LayerSpec("up", LayerKind.NEAREST_UPSAMPLE, ("input",), {"factor": 4}),
        LayerSpec(
            "wave",
            LayerKind.CONV1D,
            ("up",),
            {"kernel_size": 1, "in_channels": 1, "out_channels": 1},
            {"weight": Tensor(np.ones((1, 1, 1)))},
        ),
    )
    g = GraphSpec(InputSpec((1, None)), layers, ("wave",))
    mel = _mel(7, bands=1)
    out = vocoder_sliding(mel, g, 2).to_float()
    np.testing.assert_array_equal(out, np.repeat(mel.to_float(), 4, axis=1))


def test_sliding_rejects_wrong_band_count(tts_model):
    with pytest.raises(ShapeMismatch):
        vocoder_sliding(_mel(5, bands=8), tts_model.vocoder, 2)


# ===== End to end =====


def test_two_characters_one_frame_each(tts_model):
    audio = synthesize("ab", tts_model, durations_override=[1, 1])
    assert len(audio) == 800
    assert audio.sample_rate_hz == 16000


def test_synthesis_is_deterministic(tts_model):
    first = synthesize("hi", tts_model, chunk_frames=3)
    second = synthesize("hi", tts_model, chunk_frames=5)
    np.testing.assert_allclose(first.samples, second.samples, rtol=0, atol=1e-6)


def test_synthesized_audio_round_trips_through_features(tts_model):
    durations = [4, 3, 5]
    audio = synthesize("hey", tts_model, durations_override=durations)
    frames = logmel(audio, FeatureConfig()).shape[1]
    assert abs(frames - sum(durations)) <= 1
