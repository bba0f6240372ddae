# core/dataio.py
"""Audio files, tensor/graph serialization and model bundles."""

import base64
import json
from dataclasses import asdict
from math import gcd
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from core.dsp import DEFAULT_SAMPLE_RATE, AudioBuffer, FeatureConfig
from core.errors import ConfigError
from core.graph import GraphSpec, InputSpec, LayerSpec
from core.speechnet import (
    ConvStage,
    FrontEndKind,
    MSBlockSpec,
    SpeechNetConfig,
    SpeechRecognizer,
    StridedStage,
)
from core.tensor import QuantParams, Tensor, round_half_away
from core.tts import TTSConfig, TTSModel
from utils.logger import logger

BUNDLE_FORMAT = "david-model"
BUNDLE_VERSION = 1

ModelBundle = Union[SpeechRecognizer, TTSModel, GraphSpec]


# ===== Audio =====


class AudioImporter:
    """Reads WAV files into mono AudioBuffers at a target rate."""

    @staticmethod
    def read_wav(
        filepath: Path, target_rate_hz: int = DEFAULT_SAMPLE_RATE
    ) -> AudioBuffer:
        """
        Load a WAV file.

        Integer PCM is scaled to [-1, 1], stereo is averaged to mono and the
        signal is resampled to the target rate with a polyphase filter.
        """
        filepath = Path(filepath)
        if not filepath.exists():
            raise ConfigError(f"Audio file not found: {filepath}")
        try:
            rate, raw = wavfile.read(str(filepath))
        except ValueError as e:
            raise ConfigError(f"Cannot read WAV file {filepath}: {e}")

        samples = AudioImporter._to_unit_range(raw)
        if samples.ndim == 2:
            samples = samples.mean(axis=1)
        if rate != target_rate_hz:
            g = gcd(int(rate), int(target_rate_hz))
            samples = resample_poly(samples, target_rate_hz // g, rate // g)
            logger.info(f"Resampled {filepath.name} from {rate} to {target_rate_hz} Hz")
        return AudioBuffer(samples, target_rate_hz)

    @staticmethod
    def _to_unit_range(raw: np.ndarray) -> np.ndarray:
        match raw.dtype:
            case np.int16:
                return raw.astype(np.float64) / 32768.0
            case np.int32:
                return raw.astype(np.float64) / 2147483648.0
            case np.uint8:
                return (raw.astype(np.float64) - 128.0) / 128.0
            case _:
                return raw.astype(np.float64)


def write_wav(filepath: Path, audio: AudioBuffer):
    """16-bit PCM mono; samples are clipped to [-1, 1]."""
    pcm = round_half_away(np.clip(audio.samples, -1.0, 1.0) * 32767.0)
    wavfile.write(str(filepath), audio.sample_rate_hz, pcm.astype(np.int16))
    logger.info(f"Wrote {len(audio)} samples to {filepath}")


# ===== Tensors and graphs =====


def tensor_to_dict(t: Tensor) -> Dict[str, Any]:
    """Shape, dtype, quantization and little-endian data as base64."""
    dtype = "<f4" if t.quant is None else "i1"
    return {
        "shape": list(t.shape),
        "dtype": str(t.dtype),
        "quant": None if t.quant is None else t.quant.to_dict(),
        "data": base64.b64encode(t.data.astype(dtype).tobytes()).decode("ascii"),
    }


def tensor_from_dict(d: Dict[str, Any]) -> Tensor:
    quant = None if d.get("quant") is None else QuantParams(**d["quant"])
    dtype = "<f4" if quant is None else "i1"
    raw = np.frombuffer(base64.b64decode(d["data"]), dtype=dtype)
    try:
        data = raw.reshape(d["shape"])
    except ValueError:
        raise ConfigError(f"Tensor data does not fit shape {d['shape']}")
    return Tensor(data, quant)


def graph_to_dict(g: GraphSpec) -> Dict[str, Any]:
    spec = g.input
    return {
        "input": {
            "shape": list(spec.shape),
            "time_axis": spec.time_axis,
            "frame_rate_hz": spec.frame_rate_hz,
            "quant": None if spec.quant is None else spec.quant.to_dict(),
        },
        "layers": [
            {
                "id": layer.id,
                "kind": str(layer.kind),
                "inputs": list(layer.inputs),
                "params": dict(layer.params),
                "weights": {k: tensor_to_dict(v) for k, v in layer.weights.items()},
                "out_quant": (
                    None if layer.out_quant is None else layer.out_quant.to_dict()
                ),
            }
            for layer in g.layers
        ],
        "outputs": list(g.outputs),
    }


def graph_from_dict(d: Dict[str, Any]) -> GraphSpec:
    try:
        inp = d["input"]
        spec = InputSpec(
            tuple(inp["shape"]),
            inp.get("time_axis", 1),
            inp.get("frame_rate_hz"),
            None if inp.get("quant") is None else QuantParams(**inp["quant"]),
        )
        layers = [
            LayerSpec(
                id=ld["id"],
                kind=ld["kind"],
                inputs=tuple(ld["inputs"]),
                params=dict(ld.get("params", {})),
                weights={
                    k: tensor_from_dict(v) for k, v in ld.get("weights", {}).items()
                },
                out_quant=(
                    None
                    if ld.get("out_quant") is None
                    else QuantParams(**ld["out_quant"])
                ),
            )
            for ld in d["layers"]
        ]
        return GraphSpec(spec, tuple(layers), tuple(d["outputs"]))
    except (KeyError, TypeError) as e:
        raise ConfigError(f"Malformed graph description: {e}")


def save_graph(filepath: Path, g: GraphSpec):
    _dump_json(filepath, graph_to_dict(g))


def load_graph(filepath: Path) -> GraphSpec:
    data = _load_json(filepath)
    if data.get("format") == BUNDLE_FORMAT:
        model = bundle_from_dict(data)
        if not isinstance(model, GraphSpec):
            raise ConfigError(f"{filepath} holds a {data.get('kind')} model bundle")
        return model
    return graph_from_dict(data)


# ===== Configs =====


def speechnet_config_to_dict(cfg: SpeechNetConfig) -> Dict[str, Any]:
    d = asdict(cfg)
    d["front_end"] = str(cfg.front_end)
    d["features"] = cfg.features.to_dict()
    return d


def speechnet_config_from_dict(d: Dict[str, Any]) -> SpeechNetConfig:
    try:
        blocks = tuple(
            MSBlockSpec(
                paths=tuple(
                    tuple(ConvStage(**stage) for stage in path) for path in b["paths"]
                ),
                out_channels=b["out_channels"],
                residual=b.get("residual", True),
            )
            for b in d["blocks"]
        )
        return SpeechNetConfig(
            name=d["name"],
            blocks=blocks,
            front_end=FrontEndKind(d.get("front_end", FrontEndKind.LOGMEL)),
            features=FeatureConfig.from_dict(d.get("features", {})),
            learned_front_end=tuple(
                StridedStage(**s) for s in d.get("learned_front_end", ())
            ),
            epilogue=tuple(ConvStage(**s) for s in d.get("epilogue", ())),
            head_size=d.get("head_size", 29),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Malformed SpeechNet config: {e}")


# ===== Model bundles =====


def bundle_to_dict(model: ModelBundle) -> Dict[str, Any]:
    """Self-describing JSON document for a recognizer, TTS model or bare graph."""
    head = {"format": BUNDLE_FORMAT, "version": BUNDLE_VERSION}
    match model:
        case SpeechRecognizer():
            return head | {
                "kind": "speechnet",
                "config": speechnet_config_to_dict(model.config),
                "graph": graph_to_dict(model.graph),
            }
        case TTSModel():
            return head | {
                "kind": "tts",
                "config": asdict(model.config),
                "graphs": {
                    "encoder": graph_to_dict(model.encoder),
                    "duration_predictor": graph_to_dict(model.duration_predictor),
                    "decoder": graph_to_dict(model.decoder),
                    "vocoder": graph_to_dict(model.vocoder),
                },
            }
        case GraphSpec():
            return head | {"kind": "graph", "graph": graph_to_dict(model)}
        case _:
            raise ConfigError(f"Cannot bundle {type(model).__name__}")


def bundle_from_dict(d: Dict[str, Any]) -> ModelBundle:
    if d.get("format") != BUNDLE_FORMAT:
        raise ConfigError("Not a model bundle")
    if d.get("version") != BUNDLE_VERSION:
        raise ConfigError(f"Unsupported bundle version {d.get('version')}")
    match d.get("kind"):
        case "speechnet":
            cfg = speechnet_config_from_dict(d["config"])
            return SpeechRecognizer(cfg, graph_from_dict(d["graph"]))
        case "tts":
            graphs = {k: graph_from_dict(v) for k, v in d["graphs"].items()}
            return TTSModel(config=TTSConfig(**d["config"]), **graphs)
        case "graph":
            return graph_from_dict(d["graph"])
        case other:
            raise ConfigError(f"Unknown bundle kind '{other}'")


def save_model(filepath: Path, model: ModelBundle):
    _dump_json(filepath, bundle_to_dict(model))
    logger.info(f"Saved {type(model).__name__} bundle to {filepath}")


def load_model(filepath: Path, expect: Optional[type] = None) -> ModelBundle:
    """Load a bundle; a bare graph file loads as a GraphSpec."""
    data = _load_json(filepath)
    model = bundle_from_dict(data) if "format" in data else graph_from_dict(data)
    if expect is not None and not isinstance(model, expect):
        raise ConfigError(
            f"{filepath} holds a {type(model).__name__}, expected {expect.__name__}"
        )
    return model


# ===== JSON helpers =====


def dump_json(data: Any) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _dump_json(filepath: Path, data: Any):
    Path(filepath).write_text(dump_json(data), encoding="utf-8")


def _load_json(filepath: Path) -> Dict[str, Any]:
    filepath = Path(filepath)
    if not filepath.exists():
        raise ConfigError(f"File not found: {filepath}")
    try:
        return json.loads(filepath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{filepath} is not valid JSON: {e}")
