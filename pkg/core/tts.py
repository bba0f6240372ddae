# core/tts.py
"""
Text-to-speech inference.

A non-autoregressive spectrogram network (character encoder, duration predictor,
length regulation, decoder) followed by a convolutional vocoder that interleaves
residual blocks with nearest-neighbour upsampling. The vocoder runs over
non-overlapping mel chunks, reading just enough context around each chunk to
reproduce full-graph inference exactly.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from core.analysis import context_frames, path_factors
from core.builder import GraphBuilder
from core.dsp import AudioBuffer
from core.errors import (
    ConfigError,
    EmptyInput,
    EmptyOutput,
    InvalidCharacter,
    ShapeMismatch,
)
from core.graph import GraphExecutor, GraphSpec, InputSpec
from core.tensor import Tensor, round_half_away
from utils.logger import logger

PAD = 0


class TextVocab:
    """PAD, 'a'..'z', space, apostrophe."""

    def __init__(self):
        self.symbols = ("<pad>",) + tuple("abcdefghijklmnopqrstuvwxyz") + (" ", "'")
        self._ids = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def id_of(self, ch: str) -> int:
        if ch not in self._ids or ch == self.symbols[PAD]:
            raise InvalidCharacter(f"Character {ch!r} is not in the TTS vocabulary")
        return self._ids[ch]


TEXT_VOCAB = TextVocab()


def text_to_ids(text: str, vocab: TextVocab = TEXT_VOCAB) -> List[int]:
    """One id per character after lowercasing."""
    if not text:
        raise EmptyInput("Cannot synthesize empty text")
    return [vocab.id_of(ch) for ch in text.lower()]


def length_regulate(encodings: Tensor, durations: Sequence[int]) -> Tensor:
    """
    Repeat column i of the encodings durations[i] times.

    Args:
        encodings: [C, N]
        durations: N non-negative frame counts

    Returns:
        Tensor [C, sum(durations)]
    """
    if encodings.data.ndim != 2 or len(durations) != encodings.shape[1]:
        raise ShapeMismatch(
            f"{len(durations)} durations for encodings of shape {encodings.shape}"
        )
    reps = np.asarray(durations, dtype=np.int64)
    if np.any(reps < 0):
        raise ShapeMismatch("Durations must be >= 0")
    if reps.sum() == 0:
        raise EmptyOutput("All durations are zero")
    return encodings.with_data(np.repeat(encodings.data, reps, axis=1))


# ===== Model =====


@dataclass(frozen=True)
class TTSConfig:
    chunk_frames: int = 8
    dur_min: int = 1
    dur_max: Optional[int] = None
    sample_rate_hz: int = 16000
    hop_samples: int = 400
    mel_bands: int = 64

    def __post_init__(self):
        if self.chunk_frames < 1:
            raise ConfigError("chunk_frames must be >= 1")
        if self.dur_min < 0:
            raise ConfigError("dur_min must be >= 0")
        if self.dur_max is not None and self.dur_max < max(self.dur_min, 1):
            raise ConfigError("dur_max must be >= max(dur_min, 1)")

    @property
    def frame_rate_hz(self) -> float:
        return self.sample_rate_hz / self.hop_samples


@dataclass
class TTSModel:
    """Spectrogram network graphs plus the vocoder graph."""

    config: TTSConfig
    encoder: GraphSpec
    duration_predictor: GraphSpec
    decoder: GraphSpec
    vocoder: GraphSpec
    vocab: TextVocab = field(default_factory=lambda: TEXT_VOCAB)

    def __post_init__(self):
        stride, upsample = path_factors(self.vocoder, self.vocoder.outputs[0])
        if stride != 1 or upsample != self.config.hop_samples:
            raise ConfigError(
                f"Vocoder upsamples by {upsample}/{stride}, "
                f"expected {self.config.hop_samples}"
            )
        if self.vocoder.input.channels != self.config.mel_bands:
            raise ConfigError(
                f"Vocoder takes {self.vocoder.input.channels} bands, "
                f"config has {self.config.mel_bands}"
            )


def _one_hot(ids: Sequence[int], size: int) -> Tensor:
    x = np.zeros((size, len(ids)))
    x[list(ids), np.arange(len(ids))] = 1.0
    return Tensor(x)


def encode_text(ids: Sequence[int], model: TTSModel) -> Tensor:
    """Character encodings [C, N]."""
    if not ids:
        raise EmptyInput("No characters to encode")
    x = _one_hot(ids, len(model.vocab))
    return GraphExecutor(model.encoder).forward(x)[model.encoder.outputs[0]]


def predict_durations(encodings: Tensor, model: TTSModel) -> List[int]:
    """Rounded predictor output clamped to [dur_min, dur_max]."""
    cfg = model.config
    pred = GraphExecutor(model.duration_predictor).forward(encodings)
    raw = pred[model.duration_predictor.outputs[0]].to_float().reshape(-1)
    durations = np.maximum(round_half_away(raw), cfg.dur_min)
    if cfg.dur_max is not None:
        durations = np.minimum(durations, cfg.dur_max)
    return [int(d) for d in durations]


def spectrogram_infer(
    ids: Sequence[int],
    model: TTSModel,
    durations_override: Optional[Sequence[int]] = None,
) -> Tensor:
    """
    Log-mel spectrogram [mel_bands, T] for a character id sequence.

    Args:
        ids: Character ids (non-empty)
        model: TTS model
        durations_override: Fixed per-character durations replacing the predictor

    Returns:
        Tensor [mel_bands, sum(durations)]
    """
    encodings = encode_text(ids, model)
    if durations_override is not None:
        durations = [int(d) for d in durations_override]
    else:
        durations = predict_durations(encodings, model)
    regulated = length_regulate(encodings, durations)
    mel = GraphExecutor(model.decoder).forward(regulated)[model.decoder.outputs[0]]
    logger.debug(f"Spectrogram: {len(ids)} characters -> {mel.shape[1]} frames")
    return mel


def vocoder_sliding(
    mel: Tensor,
    vocoder: GraphSpec,
    chunk_frames: int,
    executor: Optional[GraphExecutor] = None,
) -> Tensor:
    """
    Waveform [1, T * hop] from a mel spectrogram, one chunk of frames at a time.

    Each chunk of ``chunk_frames`` mel frames emits exactly its own samples;
    the input window around it is widened by the vocoder's left and right
    context and clipped to the utterance.

    Args:
        mel: [mel_bands, T] with T >= 1
        vocoder: Vocoder graph
        chunk_frames: Mel frames per chunk
        executor: Executor to reuse (its high-water mark accumulates)

    Returns:
        Tensor [1, T * hop]
    """
    if mel.data.ndim != 2 or mel.shape[0] != vocoder.input.channels:
        raise ShapeMismatch(
            f"Expected mel [{vocoder.input.channels}, T], got {mel.shape}"
        )
    total = mel.shape[1]
    if total < 1:
        raise ShapeMismatch("Vocoder needs at least one mel frame")
    if chunk_frames < 1:
        raise ConfigError("chunk_frames must be >= 1")
    output_id = vocoder.outputs[0]
    _, upsample = path_factors(vocoder, output_id)
    left, right = context_frames(vocoder, output_id)
    executor = executor or GraphExecutor(vocoder)

    parts: List[NDArray] = []
    out_quant = None
    for a in range(0, total, chunk_frames):
        b = min(total, a + chunk_frames)
        lo, hi = max(0, a - left), min(total - 1, b - 1 + right)
        window = mel.with_data(mel.data[:, lo : hi + 1])
        out = executor.forward_region(
            window, lo, a * upsample, b * upsample - 1, output_id, total_length=total
        )
        out_quant = out.quant
        parts.append(out.data)
    return Tensor(np.concatenate(parts, axis=1), out_quant)


def vocoder_full(mel: Tensor, vocoder: GraphSpec) -> Tensor:
    """Whole-utterance vocoder inference."""
    return GraphExecutor(vocoder).forward(mel)[vocoder.outputs[0]]


def synthesize(
    text: str,
    model: TTSModel,
    durations_override: Optional[Sequence[int]] = None,
    chunk_frames: Optional[int] = None,
) -> AudioBuffer:
    """Text to mono audio at the model's sample rate."""
    ids = text_to_ids(text, model.vocab)
    mel = spectrogram_infer(ids, model, durations_override)
    wave = vocoder_sliding(
        mel, model.vocoder, chunk_frames or model.config.chunk_frames
    )
    samples = wave.to_float().reshape(-1)
    logger.info(
        f"Synthesized {len(text)} characters: {mel.shape[1]} frames, "
        f"{len(samples)} samples"
    )
    return AudioBuffer(samples, model.config.sample_rate_hz)


# ===== Reference model =====

VOCODER_STAGES = ((5, 16, 7), (5, 8, 7), (4, 8, 5), (4, 4, 5))


def _encoder_graph(vocab_size: int, seed: int) -> GraphSpec:
    b = GraphBuilder(InputSpec((vocab_size, None)), seed=seed)
    x = b.dense("embed", "input", 32)
    for i in range(2):
        x = b.conv1d(f"enc{i}_conv", x, 32, 5)
        x = b.relu(f"enc{i}_relu", x)
    return b.build([x])


def _duration_graph(seed: int, base_frames: float) -> GraphSpec:
    b = GraphBuilder(InputSpec((32, None)), seed=seed, weight_gain=0.1)
    x = b.conv1d("dur_conv", "input", 16, 3)
    x = b.relu("dur_relu", x)
    x = b.conv1d("durations", x, 1, 1)
    g = b.build([x])
    head = g.layer("durations")
    head = head.with_weights(bias=Tensor(np.full(1, base_frames)))
    return g.with_layers(g.layers[:-1] + (head,))


def _decoder_graph(mel_bands: int, seed: int) -> GraphSpec:
    b = GraphBuilder(InputSpec((32, None)), seed=seed)
    x = b.conv1d("dec0_conv", "input", 48, 5)
    x = b.relu("dec0_relu", x)
    x = b.conv1d("mel", x, mel_bands, 5)
    return b.build([x])


def build_vocoder(
    mel_bands: int,
    stages: Sequence[tuple] = VOCODER_STAGES,
    seed: int = 0,
    frame_rate_hz: Optional[float] = None,
) -> GraphSpec:
    """
    Upsampling vocoder: a pre conv, then per (factor, channels, kernel) stage
    an upsample, conv, relu and a residual conv block, then a 1-channel post conv.
    """
    b = GraphBuilder(InputSpec((mel_bands, None), frame_rate_hz=frame_rate_hz), seed)
    x = b.conv1d("pre_conv", "input", 32, 7)
    for i, (factor, channels, kernel) in enumerate(stages):
        x = b.upsample(f"up{i}", x, factor)
        x = b.conv1d(f"up{i}_conv", x, channels, kernel)
        x = b.relu(f"up{i}_relu", x)
        skip = x
        y = b.conv1d(f"res{i}_conv0", x, channels, 3)
        y = b.relu(f"res{i}_relu", y)
        y = b.conv1d(f"res{i}_conv1", y, channels, 3)
        x = b.residual(f"res{i}_add", [skip, y])
    x = b.conv1d("waveform", x, 1, 7)
    return b.build([x])


def reference_tts_model(seed: int = 0, config: Optional[TTSConfig] = None) -> TTSModel:
    """Reference TTS model with seeded random weights."""
    cfg = config or TTSConfig()
    model = TTSModel(
        config=cfg,
        encoder=_encoder_graph(len(TEXT_VOCAB), seed),
        duration_predictor=_duration_graph(seed + 1, base_frames=4.0),
        decoder=_decoder_graph(cfg.mel_bands, seed + 2),
        vocoder=build_vocoder(
            cfg.mel_bands, seed=seed + 3, frame_rate_hz=cfg.frame_rate_hz
        ),
    )
    logger.debug(f"Built reference TTS model (seed {seed})")
    return model
