# core/speechnet.py
"""SpeechNet graphs: multi-scale conv blocks, streaming inference, recognition."""

from collections import deque
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Deque, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from converters.mulaw import mulaw_encode, mulaw_midpoint
from core.analysis import dependency_interval, path_factors, steady_state
from core.builder import GraphBuilder
from core.ctc import ctc_greedy_decode
from core.dsp import AudioBuffer, FeatureConfig, features_for
from core.errors import ConfigError, InvalidCharacter, ShapeMismatch
from core.graph import (
    GraphExecutor,
    GraphSpec,
    InputSpec,
    output_lengths,
    output_shapes,
)
from core.tensor import QuantParams, Tensor
from utils.logger import logger

HEAD_SIZE = 29


class AlphabetVocab:
    """CTC output symbols: BLANK, a-z, space, apostrophe."""

    BLANK = "<blank>"

    def __init__(self):
        letters = [chr(c) for c in range(ord("a"), ord("z") + 1)]
        self.symbols: Tuple[str, ...] = (self.BLANK, *letters, " ", "'")
        self._index = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> List[int]:
        ids = []
        for ch in text.lower():
            if ch not in self._index or ch == self.BLANK:
                raise InvalidCharacter(f"'{ch}' is not in the ASR alphabet")
            ids.append(self._index[ch])
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.symbols[i] for i in ids if i != 0)


ALPHABET = AlphabetVocab()


# ===== Configuration =====


class FrontEndKind(StrEnum):
    LOGMEL = "logmel"
    LEARNED_CONV = "learned_conv"


@dataclass(frozen=True)
class ConvStage:
    """One Conv-BN-ReLU stage; pads default to a centered split of K-1."""

    kernel_size: int
    channels: int
    pad_left: Optional[int] = None
    pad_right: Optional[int] = None

    @property
    def pads(self) -> Tuple[int, int]:
        total = self.kernel_size - 1
        left = total // 2 if self.pad_left is None else self.pad_left
        right = total - left if self.pad_right is None else self.pad_right
        return left, right


@dataclass(frozen=True)
class StridedStage:
    """Learned front-end stage over the waveform."""

    kernel_size: int
    stride: int
    channels: int
    pad_left: int = 0
    pad_right: int = 0


@dataclass(frozen=True)
class MSBlockSpec:
    """Parallel conv paths with distinct kernels, merged by concat + 1x1 projection."""

    paths: Tuple[Tuple[ConvStage, ...], ...]
    out_channels: int
    residual: bool = True

    def __post_init__(self):
        if not self.paths:
            raise ConfigError("MSBlock needs at least one path")
        for path in self.paths:
            if len(path) < 2:
                raise ConfigError("Every MSBlock path needs two or more conv stages")
            for stage in path:
                left, right = stage.pads
                if left + right != stage.kernel_size - 1:
                    raise ConfigError(
                        f"Stage K={stage.kernel_size} pads {left}/{right} "
                        "must sum to K-1 so paths keep the frame count"
                    )
        kernels = self.path_kernel_sizes
        if len(set(kernels)) != len(kernels):
            raise ConfigError(f"MSBlock path kernels must differ, got {kernels}")

    @property
    def path_kernel_sizes(self) -> Tuple[int, ...]:
        return tuple(path[0].kernel_size for path in self.paths)


@dataclass(frozen=True)
class SpeechNetConfig:
    """Front-end, MSBlock stack, epilogue convs and a 29-way head."""

    name: str
    blocks: Tuple[MSBlockSpec, ...]
    front_end: FrontEndKind = FrontEndKind.LOGMEL
    features: FeatureConfig = field(default_factory=FeatureConfig)
    learned_front_end: Tuple[StridedStage, ...] = ()
    epilogue: Tuple[ConvStage, ...] = ()
    head_size: int = HEAD_SIZE

    def __post_init__(self):
        if not self.blocks:
            raise ConfigError("SpeechNet needs at least one MSBlock")
        if self.blocks[0].residual:
            raise ConfigError("The first MSBlock must not carry a residual connection")
        if self.head_size != HEAD_SIZE:
            raise ConfigError(f"Head must produce {HEAD_SIZE} posteriors")
        if self.front_end == FrontEndKind.LEARNED_CONV and not self.learned_front_end:
            raise ConfigError("Learned front-end needs at least one strided stage")

    @property
    def input_rate_hz(self) -> float:
        if self.front_end == FrontEndKind.LOGMEL:
            return self.features.frame_rate_hz
        return float(self.features.sample_rate_hz)

    @property
    def input_channels(self) -> int:
        return self.features.mel_bands if self.front_end == FrontEndKind.LOGMEL else 1


def build_speechnet(
    cfg: SpeechNetConfig, seed: Optional[int] = 0, placeholder: bool = False
) -> GraphSpec:
    """
    Expand a SpeechNetConfig into a GraphSpec.

    Each MSBlock becomes parallel Conv-BN-ReLU paths joined by channel concat
    and a 1x1 projection, plus a residual add when enabled. The learned
    front-end, if configured, consumes mu-law code midpoints in [-1, 1].

    Args:
        cfg: Network configuration
        seed: Weight generator seed
        placeholder: Record geometry only (no weights)

    Returns:
        GraphSpec with a single "posteriors" output [29, T]
    """
    if len(cfg.blocks[0].paths) < 3 or any(len(b.paths) < 3 for b in cfg.blocks):
        logger.warning(f"{cfg.name}: MSBlock with fewer than three paths")

    spec = InputSpec((cfg.input_channels, None), 1, cfg.input_rate_hz)
    gb = GraphBuilder(spec, seed=seed, placeholder=placeholder)
    x = "input"
    if cfg.front_end == FrontEndKind.LEARNED_CONV:
        for i, st in enumerate(cfg.learned_front_end):
            x = gb.conv_bn_relu(
                f"fe{i}",
                x,
                st.channels,
                st.kernel_size,
                st.stride,
                st.pad_left,
                st.pad_right,
            )

    for b, block in enumerate(cfg.blocks):
        block_in = x
        branches = []
        for p, path in enumerate(block.paths):
            y = block_in
            for s, stage in enumerate(path):
                left, right = stage.pads
                y = gb.conv_bn_relu(
                    f"b{b}_p{p}_s{s}",
                    y,
                    stage.channels,
                    stage.kernel_size,
                    pad_left=left,
                    pad_right=right,
                )
            branches.append(y)
        merged = branches[0]
        if len(branches) > 1:
            merged = gb.concat(f"b{b}_concat", branches)
        x = gb.conv1d(f"b{b}_proj", merged, block.out_channels, 1)
        if block.residual:
            if gb.channels(block_in) != block.out_channels:
                raise ConfigError(
                    f"Block {b}: residual needs {gb.channels(block_in)} channels, "
                    f"projection gives {block.out_channels}"
                )
            x = gb.residual(f"b{b}_res", [x, block_in])

    for e, stage in enumerate(cfg.epilogue):
        left, right = stage.pads
        x = gb.conv_bn_relu(
            f"ep{e}",
            x,
            stage.channels,
            stage.kernel_size,
            pad_left=left,
            pad_right=right,
        )
    x = gb.dense("head", x, cfg.head_size)
    gb.softmax("posteriors", x)
    graph = gb.build(["posteriors"])
    logger.debug(f"Built {cfg.name}: {len(graph.layers)} layers")
    return graph


def _msblock(kernels_pads, channels: int, out_channels: int, residual: bool):
    paths = tuple(
        (ConvStage(k, channels, pl, pr), ConvStage(k, channels, pl, pr))
        for k, pl, pr in kernels_pads
    )
    return MSBlockSpec(paths, out_channels, residual)


def reference_speechnet1_config() -> SpeechNetConfig:
    """
    Log-mel SpeechNet with 133 frames of context and 52 frames of lookahead.

    Six MSBlocks with kernels 3/7/11 (the 11-wide path padded 6 past / 4 future)
    and a 13-wide epilogue padded 8/4 give 80 past and 52 future frames at a
    25 ms hop.
    """
    kernels = ((3, 1, 1), (7, 3, 3), (11, 6, 4))
    blocks = tuple(_msblock(kernels, 64, 96, residual=i > 0) for i in range(6))
    return SpeechNetConfig(
        name="speechnet1",
        blocks=blocks,
        front_end=FrontEndKind.LOGMEL,
        features=FeatureConfig(),
        epilogue=(ConvStage(13, 128, 8, 4),),
    )


def reference_speechnet2_config() -> SpeechNetConfig:
    """Waveform SpeechNet; the strided front-end advances 400 samples per frame."""
    front = (
        StridedStage(10, 5, 32, 5, 0),
        StridedStage(10, 5, 48, 5, 0),
        StridedStage(8, 4, 64, 4, 0),
        StridedStage(8, 4, 64, 4, 0),
    )
    kernels = ((3, 1, 1), (5, 2, 2), (7, 4, 2))
    blocks = tuple(_msblock(kernels, 48, 64, residual=i > 0) for i in range(3))
    return SpeechNetConfig(
        name="speechnet2",
        blocks=blocks,
        front_end=FrontEndKind.LEARNED_CONV,
        features=FeatureConfig(),
        learned_front_end=front,
        epilogue=(ConvStage(5, 96, 2, 2),),
    )


# ===== Streaming =====


@dataclass
class StreamState:
    """
    Ring buffer of the most recent input frames plus the emitted-frame count.

    The buffer holds at most ``capacity`` (the receptive field) frames.
    """

    capacity: int
    output_id: str
    period: int
    shift: int
    phase_lo: List[int]
    phase_hi: List[int]
    buffer: Deque[NDArray] = field(default_factory=deque)
    quant: Optional[QuantParams] = None
    received: int = 0
    emitted: int = 0
    finished: bool = False

    def __post_init__(self):
        self.buffer = deque(self.buffer, maxlen=self.capacity)

    @classmethod
    def for_graph(cls, graph: GraphSpec, output_id: Optional[str] = None):
        """Fresh state for a graph, caching its per-phase dependency windows."""
        output_id = graph.resolve_output(output_id)
        ss = steady_state(graph, output_id)
        stride, upsample = path_factors(graph, output_id)
        lo, hi = [], []
        for o in range(upsample):
            iv = dependency_interval(graph, o, output_id)
            lo.append(iv.lo)
            hi.append(iv.hi)
        return cls(ss.receptive_field, output_id, upsample, stride, lo, hi)

    def window_of(self, o: int) -> Tuple[int, int]:
        """Unclipped input window of output frame o."""
        k, r = divmod(o, self.period)
        return self.phase_lo[r] + k * self.shift, self.phase_hi[r] + k * self.shift

    @property
    def buffer_start(self) -> int:
        return self.received - len(self.buffer)


def _window_tensor(columns: Sequence[NDArray], quant, channels: int) -> Tensor:
    data = np.stack(columns, axis=1) if columns else np.zeros((channels, 0))
    return Tensor(data, quant)


def stream_step(state: StreamState, graph: GraphSpec, new_frames: Tensor) -> Tensor:
    """
    Push input frames and emit every output frame whose window is now complete.

    Args:
        state: Stream state (mutated)
        graph: Graph the state was built for
        new_frames: Input frames [C, n]

    Returns:
        Newly emitted output frames [C_out, m] (m may be 0)
    """
    if state.finished:
        raise ShapeMismatch("Stream already finished")
    channels = graph.input.channels
    if new_frames.data.ndim != 2 or new_frames.shape[0] != channels:
        raise ShapeMismatch(f"Expected frames [{channels}, n], got {new_frames.shape}")
    if state.received == 0:
        state.quant = new_frames.quant
    elif new_frames.quant != state.quant:
        raise ShapeMismatch("Frame quantization changed mid-stream")

    offset = state.buffer_start
    columns = list(state.buffer) + list(new_frames.data.T)
    state.received += new_frames.shape[1]
    state.buffer.extend(new_frames.data.T)

    ready = state.emitted
    while state.window_of(ready)[1] <= state.received - 1:
        ready += 1
    if ready == state.emitted:
        return Tensor(np.zeros((_out_channels(graph, state), 0)))

    window = _window_tensor(columns, state.quant, channels)
    out = GraphExecutor(graph).forward_region(
        window, offset, state.emitted, ready - 1, state.output_id
    )
    state.emitted = ready
    return out


def stream_finish(state: StreamState, graph: GraphSpec) -> Tensor:
    """Emit the trailing frames that read right padding once the input has ended."""
    if state.finished:
        raise ShapeMismatch("Stream already finished")
    state.finished = True
    if state.received == 0:
        return Tensor(np.zeros((_out_channels(graph, state), 0)))
    total = output_lengths(graph, state.received)[state.output_id]
    if state.emitted >= total:
        return Tensor(np.zeros((_out_channels(graph, state), 0)))
    window = _window_tensor(list(state.buffer), state.quant, graph.input.channels)
    out = GraphExecutor(graph).forward_region(
        window,
        state.buffer_start,
        state.emitted,
        total - 1,
        state.output_id,
        total_length=state.received,
    )
    state.emitted = total
    return out


def _out_channels(graph: GraphSpec, state: StreamState) -> int:
    return int(output_shapes(graph)[state.output_id][0])


def stream_all(graph: GraphSpec, frames: Tensor, chunk_frames: int) -> Tensor:
    """Run a whole input through stream_step in fixed chunks, then finish."""
    if chunk_frames < 1:
        raise ValueError("chunk_frames must be >= 1")
    state = StreamState.for_graph(graph)
    parts = []
    for start in range(0, frames.shape[1], chunk_frames):
        chunk = frames.with_data(frames.data[:, start : start + chunk_frames])
        parts.append(stream_step(state, graph, chunk))
    parts.append(stream_finish(state, graph))
    emitted = [p for p in parts if p.shape[1]]
    quant = emitted[0].quant if emitted else None
    if quant is not None and all(p.quant == quant for p in emitted):
        return Tensor(np.concatenate([p.data for p in emitted], axis=1), quant)
    return Tensor(np.concatenate([p.to_float() for p in parts], axis=1))


# ===== Recognition =====


@dataclass
class SpeechRecognizer:
    """A SpeechNet graph with its front-end, ready to transcribe audio."""

    config: SpeechNetConfig
    graph: GraphSpec
    vocab: AlphabetVocab = field(default_factory=lambda: ALPHABET)

    def front_end(self, audio: AudioBuffer) -> Tensor:
        """Network input for an utterance: normalized log-mel or mu-law midpoints."""
        if self.config.front_end == FrontEndKind.LOGMEL:
            feats, _ = features_for(audio, self.config.features)
            return feats
        codes = mulaw_encode(audio.samples)
        return Tensor(mulaw_midpoint(codes)[None, :])

    def posteriors(self, audio: AudioBuffer) -> NDArray[np.float64]:
        """Offline posteriors [T, 29]."""
        x = self.front_end(audio)
        if x.shape[1] == 0:
            return np.zeros((0, HEAD_SIZE))
        out = GraphExecutor(self.graph).forward(x)["posteriors"]
        return out.to_float().T

    def posteriors_streaming(
        self, audio: AudioBuffer, chunk_frames: int
    ) -> NDArray[np.float64]:
        """Posteriors [T, 29] computed chunk by chunk."""
        x = self.front_end(audio)
        if x.shape[1] == 0:
            return np.zeros((0, HEAD_SIZE))
        return stream_all(self.graph, x, chunk_frames).to_float().T

    def transcribe(self, audio: AudioBuffer, chunk_frames: Optional[int] = None) -> str:
        if chunk_frames:
            post = self.posteriors_streaming(audio, chunk_frames)
        else:
            post = self.posteriors(audio)
        if len(post) == 0:
            return ""
        return ctc_greedy_decode(post, self.vocab)

    @classmethod
    def reference(
        cls,
        name: str = "speechnet1",
        seed: int = 0,
        features: Optional[FeatureConfig] = None,
    ) -> "SpeechRecognizer":
        """A reference network; features replace the default front-end settings."""
        match name:
            case "speechnet1":
                cfg = reference_speechnet1_config()
            case "speechnet2":
                cfg = reference_speechnet2_config()
            case _:
                raise ConfigError(f"Unknown reference model '{name}'")
        if features is not None:
            cfg = replace(cfg, features=features)
        return cls(cfg, build_speechnet(cfg, seed=seed))
