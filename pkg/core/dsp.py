# core/dsp.py
"""Audio feature front-end: framed log-mel spectrogram and normalization."""

from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import ArrayLike, NDArray
from scipy.fft import rfft
from scipy.signal import get_window

from core.errors import ConfigError
from core.tensor import Tensor

DEFAULT_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio, samples nominally in [-1, 1]."""

    samples: NDArray[np.float64]
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ConfigError(f"Sample rate must be positive: {self.sample_rate_hz}")
        arr = np.array(self.samples, dtype=np.float64).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class NormStats:
    """Per-band mean and standard deviation."""

    mean: NDArray[np.float64]
    std: NDArray[np.float64]

    def __post_init__(self):
        if np.any(np.asarray(self.std) <= 0):
            raise ConfigError("Normalization std must be > 0 for every band")


@dataclass(frozen=True)
class FeatureConfig:
    """Framing and filterbank settings of the log-mel front-end."""

    win_ms: float = 50.0
    hop_ms: float = 25.0
    fft_size: int = 1024
    mel_bands: int = 64
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    floor_eps: float = 1e-10
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE
    norm: Optional[NormStats] = field(default=None, compare=False)

    def __post_init__(self):
        if self.win_ms < self.hop_ms or self.hop_ms <= 0:
            raise ConfigError("FeatureConfig needs win_ms >= hop_ms > 0")
        if self.fft_size < self.win_samples:
            raise ConfigError(
                f"fft_size {self.fft_size} shorter than window {self.win_samples}"
            )
        if not 0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2:
            raise ConfigError("FeatureConfig needs 0 <= fmin < fmax <= sample_rate/2")
        if self.mel_bands < 1 or self.floor_eps <= 0:
            raise ConfigError("mel_bands and floor_eps must be positive")

    @property
    def win_samples(self) -> int:
        return int(round(self.win_ms * self.sample_rate_hz / 1000))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate_hz / 1000))

    @property
    def frame_rate_hz(self) -> float:
        return 1000.0 / self.hop_ms

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("norm")
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        known.pop("norm", None)
        return cls(**known)


# ===== Mel scale =====


def mel_scale(f_hz: ArrayLike) -> NDArray[np.float64]:
    """HTK mel: 2595 * log10(1 + f / 700)."""
    f = np.asarray(f_hz, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("Frequencies must be >= 0")
    return 2595.0 * np.log10(1.0 + f / 700.0)


def mel_to_hz(mel: ArrayLike) -> NDArray[np.float64]:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def _mel_points_hz(cfg: FeatureConfig) -> NDArray[np.float64]:
    m = np.linspace(mel_scale(cfg.fmin_hz), mel_scale(cfg.fmax_hz), cfg.mel_bands + 2)
    return mel_to_hz(m)


def band_centers_hz(cfg: FeatureConfig) -> NDArray[np.float64]:
    """Center frequency of every mel band."""
    return _mel_points_hz(cfg)[1:-1]


def mel_filterbank(cfg: FeatureConfig) -> NDArray[np.float64]:
    """
    Triangular filters on the HTK mel scale, unnormalized.

    Returns:
        Array [mel_bands, fft_size // 2 + 1]
    """
    points = _mel_points_hz(cfg)
    bins = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate_hz / cfg.fft_size
    fb = np.zeros((cfg.mel_bands, len(bins)))
    for b in range(cfg.mel_bands):
        left, center, right = points[b], points[b + 1], points[b + 2]
        rising = (bins - left) / (center - left)
        falling = (right - bins) / (right - center)
        fb[b] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


# ===== Features =====


def frame_count(n_samples: int, cfg: FeatureConfig) -> int:
    """Full windows only: 1 + floor((N - win) / hop), or 0 when N < win."""
    if n_samples < cfg.win_samples:
        return 0
    return 1 + (n_samples - cfg.win_samples) // cfg.hop_samples


def logmel(audio: AudioBuffer, cfg: FeatureConfig) -> Tensor:
    """
    Log-mel spectrogram of an utterance.

    Each full window is Hann-weighted, transformed with an fft_size-point FFT
    and its magnitude spectrum pooled by the mel filterbank; the natural log is
    taken after flooring at floor_eps. No implicit padding.

    Args:
        audio: Mono audio at cfg.sample_rate_hz
        cfg: Feature configuration

    Returns:
        Tensor [mel_bands, T]
    """
    if audio.sample_rate_hz != cfg.sample_rate_hz:
        raise ConfigError(
            f"Audio at {audio.sample_rate_hz} Hz, expected {cfg.sample_rate_hz} Hz"
        )
    t = frame_count(len(audio), cfg)
    if t == 0:
        return Tensor(np.zeros((cfg.mel_bands, 0)))
    frames = sliding_window_view(audio.samples, cfg.win_samples)[:: cfg.hop_samples][:t]
    window = get_window("hann", cfg.win_samples)
    spectrum = rfft(frames * window, n=cfg.fft_size, axis=1)
    energy = mel_filterbank(cfg) @ np.abs(spectrum).T
    return Tensor(np.log(np.maximum(energy, cfg.floor_eps)))


def utterance_stats(features: Tensor, min_std: float = 1e-5) -> NormStats:
    """Per-band statistics of one utterance; flat bands get min_std."""
    x = features.to_float()
    if x.shape[1] == 0:
        return NormStats(np.zeros(x.shape[0]), np.ones(x.shape[0]))
    return NormStats(x.mean(axis=1), np.maximum(x.std(axis=1), min_std))


def normalize_array(features: ArrayLike, stats: NormStats) -> NDArray[np.float64]:
    """Per band (x - mean) / std in float64."""
    std = np.asarray(stats.std, dtype=np.float64)
    if np.any(std <= 0):
        raise ConfigError("Normalization std must be > 0 for every band")
    mean = np.asarray(stats.mean, dtype=np.float64)
    return (np.asarray(features, dtype=np.float64) - mean[:, None]) / std[:, None]


def normalize(features: Tensor, stats: NormStats) -> Tensor:
    """Per band (x - mean) / std."""
    return Tensor(normalize_array(features.to_float(), stats))


def features_for(audio: AudioBuffer, cfg: FeatureConfig) -> Tuple[Tensor, NormStats]:
    """Normalized log-mel features, using cfg.norm or per-utterance statistics."""
    feats = logmel(audio, cfg)
    stats = cfg.norm or utterance_stats(feats)
    return normalize(feats, stats), stats
