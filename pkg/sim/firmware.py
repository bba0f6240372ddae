# sim/firmware.py
"""Firmware images for the sensor nodes and the per-node flash store."""

from dataclasses import dataclass, field
from enum import StrEnum
from typing import Dict, List, Optional, Tuple, Union

from core.analysis import AnalysisReport, Budget, analyze
from core.builder import GraphBuilder
from core.dsp import FeatureConfig
from core.errors import ConfigError, FlashCapacityExceeded
from core.graph import GraphSpec, InputSpec, output_shapes
from core.privacy import DEFAULT_MANIFESTS, SchemaRegistry
from core.speechnet import SpeechRecognizer
from core.tts import TTSModel, reference_tts_model
from utils.logger import logger

Model = Union[GraphSpec, SpeechRecognizer, TTSModel]

VISION_RESOLUTION = 320
VISION_FPS = 30.0
EXPRESSION_CLASSES = 7
GESTURE_CLASSES = 5
EMBEDDING_DIM = 128
FACE_LANDMARKS = 5
BODY_KEYPOINTS = 13
HAND_KEYPOINTS = 21
ENCODER_OUTPUT = "encoder"


class FirmwareRole(StrEnum):
    VISION = "vision"
    AUDIO_ASR = "audio_asr"
    TTS_SPEAKER = "tts_speaker"


@dataclass
class Firmware:
    """
    A flashable image: model, message manifest, declared size and the cached
    analysis of its main graph.

    ``stream_outputs`` name graph outputs that only run while secure streaming
    is on; ``base_analysis`` leaves them out.
    """

    name: str
    role: FirmwareRole
    model: Model
    manifest: SchemaRegistry
    size_bytes: int
    budget: Budget = field(default_factory=Budget)
    stream_outputs: Tuple[str, ...] = ()
    analysis: Optional[AnalysisReport] = field(default=None, repr=False)
    base_analysis: Optional[AnalysisReport] = field(default=None, repr=False)

    def __post_init__(self):
        self.role = FirmwareRole(self.role)
        if self.size_bytes <= 0:
            raise ConfigError(f"Firmware {self.name}: size must be > 0")
        graph = self.graph
        for out in self.stream_outputs:
            if out not in graph.outputs:
                raise ConfigError(f"Firmware {self.name}: no output '{out}'")
        if self.analysis is None:
            self.analysis = analyze(graph, budget=self.budget)
        if self.base_analysis is None:
            base = [o for o in graph.outputs if o not in self.stream_outputs]
            self.base_analysis = (
                self.analysis
                if len(base) == len(graph.outputs)
                else analyze(graph, budget=self.budget, outputs=base)
            )

    @property
    def graph(self) -> GraphSpec:
        match self.model:
            case SpeechRecognizer():
                return self.model.graph
            case TTSModel():
                return self.model.vocoder
            case _:
                return self.model

    @property
    def output_channels(self) -> int:
        return int(output_shapes(self.graph)[self.graph.outputs[0]][0])

    def power_mw(self, streaming: bool = False) -> float:
        report = self.analysis if streaming else self.base_analysis
        return report.estimated_power_mw

    def latency_us(self) -> int:
        """Algorithmic latency of the main output in microseconds (0 without time)."""
        out = self.analysis.outputs[self.graph.outputs[0]]
        if out.lookahead_frames is None:
            return 0
        rate = self.analysis.frame_rate_hz
        return int(round(out.lookahead_frames * 1_000_000 / rate))


class FirmwareStore:
    """Images stored in one node's flash; their total size is bounded."""

    def __init__(self, capacity_bytes: int):
        self.capacity_bytes = capacity_bytes
        self._images: Dict[str, Firmware] = {}

    @property
    def used_bytes(self) -> int:
        return sum(fw.size_bytes for fw in self._images.values())

    def add(self, firmware: Firmware):
        existing = self._images.get(firmware.name)
        used = self.used_bytes - (existing.size_bytes if existing else 0)
        if used + firmware.size_bytes > self.capacity_bytes:
            raise FlashCapacityExceeded(
                f"{firmware.name} ({firmware.size_bytes} B) does not fit: "
                f"{used} of {self.capacity_bytes} B in use"
            )
        self._images[firmware.name] = firmware

    def get(self, name: str) -> Firmware:
        try:
            return self._images[name]
        except KeyError:
            raise ConfigError(f"No firmware '{name}' in flash")

    def names(self) -> List[str]:
        return sorted(self._images)

    def __contains__(self, name: str) -> bool:
        return name in self._images


# ===== Reference firmware =====


def build_vision_graph(resolution: int = VISION_RESOLUTION) -> GraphSpec:
    """
    Multi-head vision network (geometry only).

    A stride-2 stem and a 128-channel trunk feed four five-conv heads: face
    (box + expression/landmarks and the identity embedding), hand, body and
    the video encoder used for secure streaming.
    """
    spec = InputSpec(
        (3, resolution, resolution), time_axis=None, frame_rate_hz=VISION_FPS
    )
    b = GraphBuilder(spec, placeholder=True)
    x = b.conv2d("stem", "input", 32, 3, stride=2)
    x = b.relu("stem_relu", x)
    x = b.conv2d("trunk0", x, 128, 3)
    x = b.relu("trunk0_relu", x)
    for i in (1, 2):
        x = b.conv2d(f"trunk{i}", x, 128, 3)
        x = b.relu(f"trunk{i}_relu", x)
    trunk = x

    def _head(name: str) -> str:
        y = trunk
        for i in range(5):
            y = b.conv2d(f"{name}{i}", y, 128, 3)
            y = b.relu(f"{name}{i}_relu", y)
        return y

    face = _head("face")
    face_out = b.conv2d("face", face, 4 + EXPRESSION_CLASSES + 1, 1, padding=0)
    embed_out = b.conv2d("embedding", face, EMBEDDING_DIM, 1, padding=0)
    hand_out = b.conv2d("hand", _head("hand"), 5 + GESTURE_CLASSES, 1, padding=0)
    body_out = b.conv2d("body", _head("body"), 3 * BODY_KEYPOINTS, 1, padding=0)
    enc_out = b.conv2d(ENCODER_OUTPUT, _head("enc"), 16, 1, padding=0)
    return b.build([face_out, embed_out, hand_out, body_out, enc_out])


def reference_vision_firmware(size_bytes: int = 4_000_000, budget=None) -> Firmware:
    return Firmware(
        name="vision",
        role=FirmwareRole.VISION,
        model=build_vision_graph(),
        manifest=SchemaRegistry(DEFAULT_MANIFESTS["vision"]),
        size_bytes=size_bytes,
        budget=budget or Budget(),
        stream_outputs=(ENCODER_OUTPUT,),
    )


def reference_audio_firmware(
    model: str = "speechnet1",
    seed: int = 0,
    size_bytes: int = 2_000_000,
    budget=None,
    features: Optional[FeatureConfig] = None,
) -> Firmware:
    return Firmware(
        name=model,
        role=FirmwareRole.AUDIO_ASR,
        model=SpeechRecognizer.reference(model, seed, features),
        manifest=SchemaRegistry(DEFAULT_MANIFESTS["audio"]),
        size_bytes=size_bytes,
        budget=budget or Budget(),
    )


def reference_tts_firmware(
    seed: int = 0, size_bytes: int = 2_000_000, budget=None
) -> Firmware:
    return Firmware(
        name="tts",
        role=FirmwareRole.TTS_SPEAKER,
        model=reference_tts_model(seed),
        manifest=SchemaRegistry(DEFAULT_MANIFESTS["tts"]),
        size_bytes=size_bytes,
        budget=budget or Budget(),
    )


def reference_firmware(
    name: str,
    seed: int = 0,
    size_bytes: Optional[int] = None,
    budget=None,
    features: Optional[FeatureConfig] = None,
) -> Firmware:
    """Build a bundled image by name: vision, speechnet1, speechnet2 or tts."""
    kwargs = {} if size_bytes is None else {"size_bytes": size_bytes}
    match name:
        case "vision":
            fw = reference_vision_firmware(budget=budget, **kwargs)
        case "speechnet1" | "speechnet2":
            fw = reference_audio_firmware(
                name, seed, budget=budget, features=features, **kwargs
            )
        case "tts":
            fw = reference_tts_firmware(seed, budget=budget, **kwargs)
        case _:
            raise ConfigError(f"Unknown firmware '{name}'")
    logger.debug(f"Built firmware {name}: {fw.power_mw(True):.4g} mW at full load")
    return fw
