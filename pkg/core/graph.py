# core/graph.py
"""Layer graph description and deterministic execution."""

from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from core.errors import GraphError, ShapeMismatch, UnknownLayerKind, UnknownOutput
from core.ops import (
    BatchNormParams,
    batchnorm,
    concat_channels,
    conv1d_forward,
    conv2d_forward,
    conv_output_length,
    dense,
    nearest_upsample,
    relu,
    residual_add,
    softmax,
)
from core.tensor import QuantParams, Tensor, quantize

INPUT_ID = "input"

Interval = Tuple[int, int]
Shape = Tuple[Optional[int], ...]


class LayerKind(StrEnum):
    """Layer kinds understood by the executor and the analyzer."""

    CONV1D = "conv1d"
    CONV2D = "conv2d"
    BATCHNORM = "batchnorm"
    RELU = "relu"
    RESIDUAL_ADD = "residual_add"
    NEAREST_UPSAMPLE = "nearest_upsample"
    CONCAT_CHANNELS = "concat_channels"
    DENSE = "dense"
    SOFTMAX = "softmax"

    @property
    def is_merge(self) -> bool:
        return self in (LayerKind.RESIDUAL_ADD, LayerKind.CONCAT_CHANNELS)

    @property
    def is_weighted(self) -> bool:
        return self in (LayerKind.CONV1D, LayerKind.CONV2D, LayerKind.DENSE)


WEIGHT_KEYS = {
    LayerKind.CONV1D: ("weight", "bias"),
    LayerKind.CONV2D: ("weight", "bias"),
    LayerKind.DENSE: ("weight", "bias"),
    LayerKind.BATCHNORM: ("gamma", "beta", "mean", "var"),
}


@dataclass(frozen=True)
class LayerSpec:
    """
    One node of a GraphSpec.

    ``params`` carries the kind-specific geometry (kernel_size, stride, dilation,
    pad_left, pad_right, padding, in_channels, out_channels, factor, eps) and
    ``weights`` the named parameter tensors. A weighted layer without weights is
    a placeholder: it can be analyzed but not executed.
    """

    id: str
    kind: LayerKind
    inputs: Tuple[str, ...]
    params: Dict[str, Any] = field(default_factory=dict)
    weights: Dict[str, Tensor] = field(default_factory=dict)
    out_quant: Optional[QuantParams] = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", LayerKind(self.kind))
        except ValueError:
            raise UnknownLayerKind(f"Layer {self.id}: unknown kind '{self.kind}'")
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.kind.is_merge:
            if len(self.inputs) < 2:
                raise GraphError(f"Layer {self.id}: {self.kind} needs 2+ inputs")
        elif len(self.inputs) != 1:
            raise GraphError(f"Layer {self.id}: {self.kind} takes exactly 1 input")
        for key in ("kernel_size", "stride", "dilation", "factor"):
            if self.params.get(key, 1) < 1:
                raise GraphError(f"Layer {self.id}: {key} must be >= 1")
        for key in ("pad_left", "pad_right", "padding"):
            if self.params.get(key, 0) < 0:
                raise GraphError(f"Layer {self.id}: {key} must be >= 0")

    # ===== Geometry =====

    @property
    def kernel_size(self) -> int:
        return int(self.params.get("kernel_size", 1))

    @property
    def stride(self) -> int:
        return int(self.params.get("stride", 1))

    @property
    def dilation(self) -> int:
        return int(self.params.get("dilation", 1))

    @property
    def pad_left(self) -> int:
        return int(self.params.get("pad_left", 0))

    @property
    def pad_right(self) -> int:
        return int(self.params.get("pad_right", 0))

    @property
    def factor(self) -> int:
        return int(self.params.get("factor", 1))

    @property
    def in_channels(self) -> Optional[int]:
        return self.params.get("in_channels")

    @property
    def out_channels(self) -> Optional[int]:
        return self.params.get("out_channels")

    @property
    def is_placeholder(self) -> bool:
        return self.kind in WEIGHT_KEYS and "weight" not in self.weights and (
            self.kind != LayerKind.BATCHNORM or "gamma" not in self.weights
        )

    def with_weights(self, **weights: Tensor) -> "LayerSpec":
        return replace(self, weights={**self.weights, **weights})


@dataclass(frozen=True)
class InputSpec:
    """Graph input: shape (None marks a free time axis), time axis and frame rate."""

    shape: Tuple[Optional[int], ...]
    time_axis: Optional[int] = 1
    frame_rate_hz: Optional[float] = None
    quant: Optional[QuantParams] = None

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(self.shape))
        if self.time_axis is not None and not 0 <= self.time_axis < len(self.shape):
            raise GraphError(f"Time axis {self.time_axis} outside shape {self.shape}")

    @property
    def channels(self) -> int:
        return int(self.shape[0])

    @property
    def has_time(self) -> bool:
        return self.time_axis is not None


@dataclass(frozen=True)
class GraphSpec:
    """Acyclic layer graph in topological order."""

    input: InputSpec
    layers: Tuple[LayerSpec, ...]
    outputs: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        index: Dict[str, LayerSpec] = {}
        for layer in self.layers:
            if layer.id == INPUT_ID or layer.id in index:
                raise GraphError(f"Duplicate or reserved layer id '{layer.id}'")
            for src in layer.inputs:
                if src != INPUT_ID and src not in index:
                    raise GraphError(
                        f"Layer {layer.id} references '{src}' which is not an "
                        "earlier layer (graph must be acyclic and ordered)"
                    )
            index[layer.id] = layer
        if not self.outputs:
            raise GraphError("Graph declares no outputs")
        for out in self.outputs:
            if out not in index:
                raise GraphError(f"Output '{out}' is not a layer")
        object.__setattr__(self, "_index", index)

    # ===== Lookup =====

    def layer(self, layer_id: str) -> LayerSpec:
        try:
            return self._index[layer_id]
        except KeyError:
            raise UnknownOutput(f"No layer '{layer_id}' in graph")

    def has_layer(self, layer_id: str) -> bool:
        return layer_id in self._index

    def consumers(self, layer_id: str) -> List[LayerSpec]:
        return [layer for layer in self.layers if layer_id in layer.inputs]

    def ancestors(self, ids: Iterable[str]) -> Set[str]:
        """Layer ids feeding (and including) the given ids."""
        todo = list(ids)
        seen: Set[str] = set()
        while todo:
            cur = todo.pop()
            if cur == INPUT_ID or cur in seen:
                continue
            seen.add(cur)
            todo.extend(self.layer(cur).inputs)
        return seen

    def resolve_output(self, output_id: Optional[str]) -> str:
        if output_id is None:
            return self.outputs[0]
        if not self.has_layer(output_id):
            raise UnknownOutput(f"No layer '{output_id}' in graph")
        return output_id

    def with_layers(
        self, layers: Sequence[LayerSpec], outputs: Optional[Sequence[str]] = None
    ) -> "GraphSpec":
        return GraphSpec(self.input, tuple(layers), tuple(outputs or self.outputs))


# ===== Shape propagation =====


def output_shapes(
    g: GraphSpec, input_shape: Optional[Shape] = None
) -> Dict[str, Shape]:
    """
    Propagate shapes through the graph.

    Args:
        g: Graph to inspect
        input_shape: Concrete input shape; defaults to the declared one
            (a None time dimension stays None)

    Returns:
        Map from layer id (and "input") to shape
    """
    shapes: Dict[str, Shape] = {INPUT_ID: tuple(input_shape or g.input.shape)}
    for layer in g.layers:
        ins = [shapes[i] for i in layer.inputs]
        x = ins[0]
        match layer.kind:
            case LayerKind.CONV1D:
                _expect_channels(layer, x)
                t = x[1]
                if t is not None:
                    t = conv_output_length(
                        t,
                        layer.kernel_size,
                        layer.stride,
                        layer.dilation,
                        layer.pad_left,
                        layer.pad_right,
                    )
                shapes[layer.id] = (_out_channels(layer), t)
            case LayerKind.CONV2D:
                _expect_channels(layer, x)
                pad = int(layer.params.get("padding", 0))
                hw = tuple(
                    conv_output_length(d, layer.kernel_size, layer.stride, 1, pad, pad)
                    for d in x[1:]
                )
                shapes[layer.id] = (_out_channels(layer),) + hw
            case LayerKind.DENSE:
                _expect_channels(layer, x)
                shapes[layer.id] = (_out_channels(layer),) + tuple(x[1:])
            case LayerKind.NEAREST_UPSAMPLE:
                t = x[-1]
                shapes[layer.id] = tuple(x[:-1]) + (
                    None if t is None else t * layer.factor,
                )
            case LayerKind.CONCAT_CHANNELS:
                if len({s[1:] for s in ins}) != 1:
                    raise ShapeMismatch(f"Layer {layer.id}: concat inputs {ins}")
                shapes[layer.id] = (sum(s[0] for s in ins),) + tuple(x[1:])
            case LayerKind.RESIDUAL_ADD:
                if len(set(ins)) != 1:
                    raise ShapeMismatch(f"Layer {layer.id}: residual inputs {ins}")
                shapes[layer.id] = x
            case LayerKind.BATCHNORM | LayerKind.RELU | LayerKind.SOFTMAX:
                shapes[layer.id] = x
            case _:
                raise UnknownLayerKind(f"Layer {layer.id}: {layer.kind}")
    return shapes


def output_lengths(g: GraphSpec, input_length: int) -> Dict[str, int]:
    """Time-axis length of every layer for a finite input."""
    shape = list(g.input.shape)
    shape[g.input.time_axis] = input_length
    return {k: int(v[-1]) for k, v in output_shapes(g, tuple(shape)).items()}


def _out_channels(layer: LayerSpec) -> int:
    if layer.out_channels is not None:
        return int(layer.out_channels)
    if "weight" in layer.weights:
        return int(layer.weights["weight"].shape[0])
    raise GraphError(f"Layer {layer.id}: out_channels unknown")


def _expect_channels(layer: LayerSpec, shape: Shape):
    expected = layer.in_channels
    if expected is None and "weight" in layer.weights:
        expected = layer.weights["weight"].shape[1]
    if expected is not None and shape[0] != expected:
        raise ShapeMismatch(
            f"Layer {layer.id}: expects {expected} input channels, got {shape[0]}"
        )


# ===== Interval propagation =====


def producer_interval(layer: LayerSpec, lo: int, hi: int) -> Interval:
    """Input-index range of the producer needed for output indices [lo, hi]."""
    match layer.kind:
        case LayerKind.CONV1D:
            start = lo * layer.stride - layer.pad_left
            end = hi * layer.stride - layer.pad_left
            return start, end + layer.dilation * (layer.kernel_size - 1)
        case LayerKind.NEAREST_UPSAMPLE:
            return lo // layer.factor, hi // layer.factor
        case LayerKind.CONV2D:
            raise GraphError(f"Layer {layer.id}: conv2d has no time axis")
        case _:
            return lo, hi


def backward_intervals(
    g: GraphSpec,
    targets: Dict[str, Interval],
    lengths: Optional[Dict[str, int]] = None,
    clip_low: bool = False,
) -> Dict[str, Interval]:
    """
    Needed index range of every layer (and the input) for the given targets.

    Parallel consumers are merged by hull. With ``lengths`` ranges are clipped to
    each layer's valid indices; with ``clip_low`` only negative indices are cut.
    Layers with an empty range are left out.
    """
    needed: Dict[str, Interval] = {}

    def _merge(layer_id: str, lo: int, hi: int):
        if clip_low or lengths is not None:
            lo = max(lo, 0)
        if lengths is not None:
            hi = min(hi, lengths[layer_id] - 1)
        if lo > hi:
            return
        if layer_id in needed:
            a, b = needed[layer_id]
            lo, hi = min(a, lo), max(b, hi)
        needed[layer_id] = (lo, hi)

    for layer_id, (lo, hi) in targets.items():
        _merge(layer_id, lo, hi)
    for layer in reversed(g.layers):
        if layer.id not in needed:
            continue
        lo, hi = needed[layer.id]
        p_lo, p_hi = producer_interval(layer, lo, hi)
        for src in layer.inputs:
            _merge(src, p_lo, p_hi)
    return needed


# ===== Execution =====


def _bn_params(layer: LayerSpec) -> BatchNormParams:
    w = layer.weights
    return BatchNormParams(
        gamma=w["gamma"].to_float(),
        beta=w["beta"].to_float(),
        mean=w["mean"].to_float(),
        var=w["var"].to_float(),
        eps=float(layer.params.get("eps", 1e-5)),
    )


def apply_layer(
    layer: LayerSpec, inputs: Sequence[Tensor], padded: bool = True, workers: int = 1
) -> Tensor:
    """
    Run one layer on already-computed inputs.

    Args:
        layer: Layer to run
        inputs: Producer tensors in declaration order
        padded: Apply the layer's own time padding (region evaluation passes
            pre-padded windows and disables it)
        workers: Output-channel parallelism for weighted layers

    Returns:
        Output tensor
    """
    if layer.is_placeholder:
        raise GraphError(f"Layer {layer.id} has no weights (analysis-only placeholder)")
    x = inputs[0]
    w = layer.weights
    match layer.kind:
        case LayerKind.CONV1D:
            return conv1d_forward(
                x,
                w["weight"],
                w.get("bias"),
                stride=layer.stride,
                dilation=layer.dilation,
                pad_left=layer.pad_left if padded else 0,
                pad_right=layer.pad_right if padded else 0,
                out_quant=layer.out_quant,
                workers=workers,
            )
        case LayerKind.CONV2D:
            return conv2d_forward(
                x,
                w["weight"],
                w.get("bias"),
                stride=layer.stride,
                padding=int(layer.params.get("padding", 0)),
                out_quant=layer.out_quant,
                workers=workers,
            )
        case LayerKind.DENSE:
            return dense(x, w["weight"], w.get("bias"), layer.out_quant, workers)
        case LayerKind.BATCHNORM:
            return batchnorm(x, _bn_params(layer), layer.out_quant)
        case LayerKind.RELU:
            return relu(x)
        case LayerKind.SOFTMAX:
            return softmax(x)
        case LayerKind.NEAREST_UPSAMPLE:
            return nearest_upsample(x, layer.factor)
        case LayerKind.CONCAT_CHANNELS:
            return concat_channels(inputs, layer.out_quant)
        case LayerKind.RESIDUAL_ADD:
            return residual_add(inputs, layer.out_quant)
        case _:
            raise UnknownLayerKind(f"Layer {layer.id}: {layer.kind}")


class GraphExecutor:
    """
    Executes a GraphSpec offline or over a window of input frames.

    Keeps a high-water mark of simultaneously live activation elements across
    calls until reset.
    """

    def __init__(self, graph: GraphSpec, workers: int = 1):
        self.graph = graph
        self.workers = workers
        self.high_water_mark = 0

    def reset_high_water_mark(self):
        self.high_water_mark = 0

    # ===== Offline =====

    def forward(self, x: Tensor, collect: bool = False) -> Dict[str, Tensor]:
        """
        Run the whole graph.

        Args:
            x: Input tensor matching the declared input shape
            collect: Keep and return every intermediate activation

        Returns:
            Map from output id (or every layer id when collecting) to tensor
        """
        g = self.graph
        x = self._prepare_input(x)
        wanted = {layer.id for layer in g.layers} if collect else g.ancestors(g.outputs)
        pinned = set(g.outputs) | (wanted if collect else set())
        remaining = self._consumer_counts(wanted)

        values: Dict[str, Tensor] = {INPUT_ID: x}
        live = peak = x.size
        for layer in g.layers:
            if layer.id not in wanted:
                continue
            ins = [values[i] for i in layer.inputs]
            out = apply_layer(layer, ins, True, self.workers)
            values[layer.id] = out
            live += out.size
            peak = max(peak, live)
            live -= self._release(layer, values, remaining, pinned)
        self.high_water_mark = max(self.high_water_mark, peak)

        if collect:
            return {k: v for k, v in values.items() if k != INPUT_ID}
        return {out_id: values[out_id] for out_id in g.outputs}

    # ===== Windowed =====

    def forward_region(
        self,
        window: Tensor,
        offset: int,
        out_lo: int,
        out_hi: int,
        output_id: Optional[str] = None,
        total_length: Optional[int] = None,
    ) -> Tensor:
        """
        Compute output frames [out_lo, out_hi] from a window of input frames.

        Frame indices are absolute. Indices before 0, and at or past
        ``total_length`` when it is known, read as zero padding.

        Args:
            window: Input frames [C, n] starting at absolute index ``offset``
            offset: Absolute index of the first window frame
            out_lo, out_hi: Inclusive output frame range
            output_id: Output layer; defaults to the first graph output
            total_length: Full input length if known (None while streaming)

        Returns:
            Tensor [C_out, out_hi - out_lo + 1]
        """
        g = self.graph
        if not g.input.has_time or len(g.input.shape) != 2:
            raise GraphError("Windowed evaluation needs a [C, T] input")
        output_id = g.resolve_output(output_id)
        window = self._prepare_input(window)
        lengths = None if total_length is None else output_lengths(g, total_length)
        needed = backward_intervals(
            g, {output_id: (out_lo, out_hi)}, lengths=lengths, clip_low=True
        )
        if output_id not in needed or needed[output_id] != (out_lo, out_hi):
            raise ShapeMismatch(f"Output frames [{out_lo}, {out_hi}] are out of range")
        in_lo, in_hi = needed.get(INPUT_ID, (offset, offset - 1))
        if in_lo < offset or in_hi >= offset + window.shape[1]:
            raise ShapeMismatch(
                f"Window [{offset}, {offset + window.shape[1] - 1}] does not cover "
                f"input frames [{in_lo}, {in_hi}]"
            )

        slabs: Dict[str, Tuple[int, Tensor]] = {INPUT_ID: (offset, window)}
        remaining = self._consumer_counts(set(needed) - {INPUT_ID})
        live = peak = window.size
        for layer in g.layers:
            if layer.id not in needed:
                continue
            lo, hi = needed[layer.id]
            p_lo, p_hi = producer_interval(layer, lo, hi)
            ins = [_gather(slabs[src], p_lo, p_hi) for src in layer.inputs]
            out = apply_layer(layer, ins, padded=False, workers=self.workers)
            if layer.kind == LayerKind.NEAREST_UPSAMPLE:
                start = lo - p_lo * layer.factor
                out = out.with_data(out.data[:, start : start + hi - lo + 1])
            slabs[layer.id] = (lo, out)
            live += out.size
            peak = max(peak, live)
            live -= self._release(layer, slabs, remaining, {output_id})
        self.high_water_mark = max(self.high_water_mark, peak)
        return slabs[output_id][1]

    # ===== Helpers =====

    def _prepare_input(self, x: Tensor) -> Tensor:
        spec = self.graph.input
        if x.data.ndim != len(spec.shape):
            raise ShapeMismatch(f"Input rank {x.data.ndim} != declared {spec.shape}")
        for axis, (got, want) in enumerate(zip(x.shape, spec.shape)):
            if want is not None and axis != spec.time_axis and got != want:
                raise ShapeMismatch(f"Input shape {x.shape} != declared {spec.shape}")
        if spec.quant is not None and not x.is_quantized:
            return quantize(x, spec.quant)
        return x

    def _consumer_counts(self, wanted: Set[str]) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for layer in self.graph.layers:
            if layer.id in wanted:
                for src in set(layer.inputs):
                    counts[src] = counts.get(src, 0) + 1
        return counts

    @staticmethod
    def _release(layer: LayerSpec, values: Dict, remaining: Dict, pinned: Set[str]):
        freed = 0
        for src in set(layer.inputs):
            remaining[src] -= 1
            if remaining[src] == 0 and src not in pinned:
                item = values.pop(src)
                freed += (item[1] if isinstance(item, tuple) else item).size
        return freed


def _gather(slab: Tuple[int, Tensor], lo: int, hi: int) -> Tensor:
    """Frames [lo, hi] of a slab; frames the slab does not hold read as zero."""
    start, t = slab
    fill = t.quant.zero_point if t.is_quantized else 0
    out = np.full((t.shape[0], hi - lo + 1), fill, dtype=t.data.dtype)
    a = max(lo, start)
    b = min(hi, start + t.shape[1] - 1)
    if a <= b:
        out[:, a - lo : b - lo + 1] = t.data[:, a - start : b - start + 1]
    return t.with_data(out)


def graph_forward(g: GraphSpec, x: Tensor, workers: int = 1) -> Dict[str, Tensor]:
    """Offline forward pass of a whole graph."""
    return GraphExecutor(g, workers).forward(x)
