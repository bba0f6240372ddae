# tests/conftest.py
"""Shared fixtures: reference models, a firmware catalog and small graphs."""

import numpy as np
import pytest

from app.config import PlatformConfig
from core.builder import GraphBuilder
from core.dataio import write_wav
from core.dsp import AudioBuffer, FeatureConfig
from core.graph import InputSpec
from core.speechnet import (
    ConvStage,
    MSBlockSpec,
    SpeechNetConfig,
    SpeechRecognizer,
    build_speechnet,
)
from core.tts import reference_tts_model
from sim.platform import FirmwareCatalog


@pytest.fixture(scope="session")
def config():
    return PlatformConfig()


@pytest.fixture(scope="session")
def catalog(config):
    """Bundled firmware built once per session; Platform only reads it."""
    return FirmwareCatalog(config)


@pytest.fixture(scope="session")
def speechnet1():
    return SpeechRecognizer.reference("speechnet1", seed=0)


@pytest.fixture(scope="session")
def tts_model():
    return reference_tts_model(seed=0)


@pytest.fixture
def tiny_speechnet_config():
    """Two 8-channel blocks on 8 mel bands with a causal-leaning epilogue."""
    paths = (
        (ConvStage(3, 8), ConvStage(3, 8)),
        (ConvStage(5, 8), ConvStage(5, 8)),
        (ConvStage(7, 8, 4, 2), ConvStage(7, 8, 4, 2)),
    )
    return SpeechNetConfig(
        name="tiny",
        blocks=(MSBlockSpec(paths, 8, residual=False), MSBlockSpec(paths, 8)),
        features=FeatureConfig(mel_bands=8),
        epilogue=(ConvStage(3, 8, 2, 0),),
    )


@pytest.fixture
def tiny_speechnet(tiny_speechnet_config):
    return build_speechnet(tiny_speechnet_config, seed=3)


@pytest.fixture
def conv_stack():
    """Two K=3 convs with 1/1 padding on a 2-channel input."""
    b = GraphBuilder(InputSpec((2, None), frame_rate_hz=40.0), seed=1)
    x = b.conv1d("c0", "input", 4, 3)
    x = b.relu("r0", x)
    x = b.conv1d("c1", x, 3, 3)
    return b.build([x])


@pytest.fixture
def tone_wav(tmp_path):
    """One second of a 440 Hz tone at 16 kHz."""
    t = np.arange(16000) / 16000.0
    path = tmp_path / "tone.wav"
    write_wav(path, AudioBuffer(0.3 * np.sin(2 * np.pi * 440.0 * t)))
    return path
