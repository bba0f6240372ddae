# core/analysis.py
"""Static analysis of layer graphs: receptive field, latency, MACs, power, porting."""

from dataclasses import asdict, dataclass, field, replace
from enum import StrEnum
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from core.errors import (
    BudgetExceeded,
    ConfigError,
    DegenerateModel,
    GraphError,
    UnknownOutput,
)
from core.graph import (
    INPUT_ID,
    GraphExecutor,
    GraphSpec,
    InputSpec,
    LayerKind,
    LayerSpec,
    backward_intervals,
    output_lengths,
    output_shapes,
)
from core.ops import BatchNormParams, ConvParams, fold_batchnorm
from core.tensor import INT8_MAX, INT8_MIN, QuantParams, Tensor, quantize_array
from utils.logger import logger


class ProbeMode(StrEnum):
    """How impulse_probe evaluates the graph."""

    STRUCTURAL = "structural"  # positive unit weights, no masking
    NUMERIC = "numeric"  # real weights; dead units can hide dependencies


@dataclass(frozen=True)
class IndexInterval:
    """Inclusive range of input frame indices; lo/hi are None when empty."""

    lo: Optional[int] = None
    hi: Optional[int] = None

    def __post_init__(self):
        if (self.lo is None) != (self.hi is None):
            raise ValueError("IndexInterval bounds must both be set or both be None")
        if self.lo is not None and self.lo > self.hi:
            raise ValueError(f"Interval [{self.lo}, {self.hi}] is inverted")

    @property
    def is_empty(self) -> bool:
        return self.lo is None

    @property
    def width(self) -> int:
        return 0 if self.is_empty else self.hi - self.lo + 1

    @classmethod
    def hull_of(cls, indices: Iterable[int]) -> "IndexInterval":
        idx = list(indices)
        return cls(min(idx), max(idx)) if idx else cls()

    def __str__(self) -> str:
        return "Empty" if self.is_empty else f"[{self.lo}, {self.hi}]"


@dataclass(frozen=True)
class Budget:
    """Accelerator efficiency and power budget."""

    tops_per_watt: float = 55.0
    power_budget_mw: float = 50.0
    ops_per_mac: int = 2
    idle_floor_mw: float = 0.0

    def __post_init__(self):
        if min(self.tops_per_watt, self.power_budget_mw, self.ops_per_mac) <= 0:
            raise ConfigError(f"Budget values must be positive: {self}")
        if self.idle_floor_mw < 0:
            raise ConfigError("idle_floor_mw must be >= 0")


@dataclass
class SteadyState:
    """Interval geometry at an interior output frame."""

    index: int
    receptive_field: int
    lookahead: int
    left_context: int
    right_context: int
    stride: int
    upsample: int


@dataclass
class OutputAnalysis:
    output_id: str
    shape: List[Optional[int]]
    receptive_field_frames: Optional[int]
    lookahead_frames: Optional[int]
    context_seconds: Optional[float]
    latency_seconds: Optional[float]
    macs_per_output_frame: float


@dataclass
class AnalysisReport:
    """Result of analyze(): per-output geometry plus whole-graph cost."""

    frame_rate_hz: float
    outputs: Dict[str, OutputAnalysis]
    layer_macs_per_second: Dict[str, float]
    macs_per_second: float
    estimated_power_mw: float
    power_budget_mw: float
    budget_ok: bool

    def to_dict(self) -> dict:
        return asdict(self)


# ===== Intervals =====


def _require_time(g: GraphSpec):
    if not g.input.has_time:
        raise GraphError("Graph has no time axis")


def dependency_interval(
    g: GraphSpec,
    output_frame_index: int,
    output_id: Optional[str] = None,
    input_length: Optional[int] = None,
) -> IndexInterval:
    """
    Input frames influencing one output frame.

    Intervals propagate backwards through every layer; merges take the hull.
    Without ``input_length`` the result is not clipped, so edge frames may
    report negative indices (padding).

    Args:
        g: Graph with a time axis
        output_frame_index: Output frame o
        output_id: Output layer; defaults to the first declared output
        input_length: Clip to a finite input of this length

    Returns:
        IndexInterval over input frames
    """
    _require_time(g)
    output_id = g.resolve_output(output_id)
    lengths = None if input_length is None else output_lengths(g, input_length)
    needed = backward_intervals(
        g, {output_id: (output_frame_index, output_frame_index)}, lengths=lengths
    )
    if INPUT_ID not in needed:
        return IndexInterval()
    return IndexInterval(*needed[INPUT_ID])


def path_factors(g: GraphSpec, output_id: str) -> Tuple[int, int]:
    """(cumulative stride, cumulative upsampling) from the input to an output."""
    stride, upsample = 1, 1
    cur = output_id
    while cur != INPUT_ID:
        layer = g.layer(cur)
        if layer.kind == LayerKind.CONV1D:
            stride *= layer.stride
        elif layer.kind == LayerKind.NEAREST_UPSAMPLE:
            upsample *= layer.factor
        cur = layer.inputs[0]
    return stride, upsample


def steady_state(g: GraphSpec, output_id: Optional[str] = None) -> SteadyState:
    """
    Receptive field and lookahead at the first output frame free of left padding.

    Shifting an output frame by the cumulative upsampling U shifts its window
    by the cumulative stride S, so extents are maximised over U phases.
    """
    _require_time(g)
    output_id = g.resolve_output(output_id)
    p, q = path_factors(g, output_id)

    def _lo(o: int) -> int:
        return dependency_interval(g, o, output_id).lo

    # lo(o) is non-decreasing: gallop then bisect for the first lo >= 0
    hi_o = 1
    while _lo(hi_o) < 0:
        hi_o *= 2
    lo_o = 0
    while lo_o < hi_o:
        mid = (lo_o + hi_o) // 2
        if _lo(mid) >= 0:
            hi_o = mid
        else:
            lo_o = mid + 1
    o0 = lo_o

    width = ahead = behind = 0
    for o in range(o0, o0 + q):
        iv = dependency_interval(g, o, output_id)
        anchor = (o * p) // q
        width = max(width, iv.width)
        ahead = max(ahead, iv.hi - anchor)
        behind = max(behind, anchor - iv.lo)
    return SteadyState(
        index=o0,
        receptive_field=width,
        lookahead=max(0, ahead),
        left_context=max(0, behind),
        right_context=max(0, ahead),
        stride=p,
        upsample=q,
    )


# ===== MACs and power =====


def _layer_macs(layer: LayerSpec, shapes: Dict[str, tuple], per_frame: bool) -> int:
    """MACs of one layer; per output frame for time graphs, per image otherwise."""
    c_in = shapes[layer.inputs[0]][0]
    out = shapes[layer.id]
    match layer.kind:
        case LayerKind.CONV1D:
            frames = 1 if per_frame else out[1]
            return layer.kernel_size * c_in * out[0] * frames
        case LayerKind.CONV2D:
            return layer.kernel_size**2 * c_in * out[0] * out[1] * out[2]
        case LayerKind.DENSE:
            frames = 1 if per_frame or len(out) == 1 else out[1]
            return c_in * out[0] * frames
        case _:
            return 0


def _layer_rates(g: GraphSpec, frame_rate_hz: float) -> Dict[str, Fraction]:
    rates: Dict[str, Fraction] = {INPUT_ID: Fraction(frame_rate_hz)}
    for layer in g.layers:
        r = rates[layer.inputs[0]]
        if layer.kind == LayerKind.CONV1D:
            r = r / layer.stride
        elif layer.kind == LayerKind.NEAREST_UPSAMPLE:
            r = r * layer.factor
        rates[layer.id] = r
    return rates


def count_macs(g: GraphSpec, input_length: Optional[int] = None) -> int:
    """
    Exact multiply-accumulate count of one forward pass.

    Args:
        g: Graph to count
        input_length: Time length for graphs with a free time axis

    Returns:
        Total MACs over every layer
    """
    shape = list(g.input.shape)
    if g.input.has_time and input_length is not None:
        shape[g.input.time_axis] = input_length
    if any(d is None for d in shape):
        raise ConfigError("count_macs needs a concrete input length")
    shapes = output_shapes(g, tuple(shape))
    return sum(_layer_macs(layer, shapes, per_frame=False) for layer in g.layers)


def estimate_power(macs_per_second: float, budget: Budget) -> float:
    """Milliwatts drawn at the given MAC rate, never below the idle floor."""
    if macs_per_second < 0:
        raise ValueError("macs_per_second must be >= 0")
    ops_mw = macs_per_second * budget.ops_per_mac * 1000
    compute_mw = ops_mw / (budget.tops_per_watt * 1e12)
    return max(budget.idle_floor_mw, compute_mw)


def _macs_per_second(
    g: GraphSpec, frame_rate_hz: float, layer_ids: Iterable[str]
) -> Dict[str, float]:
    shapes = output_shapes(g)
    wanted = set(layer_ids)
    out: Dict[str, float] = {}
    if g.input.has_time:
        rates = _layer_rates(g, frame_rate_hz)
        for layer in g.layers:
            if layer.id in wanted:
                macs = _layer_macs(layer, shapes, True)
                out[layer.id] = float(macs * rates[layer.id])
    else:
        for layer in g.layers:
            if layer.id in wanted:
                out[layer.id] = float(_layer_macs(layer, shapes, False) * frame_rate_hz)
    return out


def analyze(
    g: GraphSpec,
    frame_rate_hz: Optional[float] = None,
    budget: Optional[Budget] = None,
    outputs: Optional[List[str]] = None,
) -> AnalysisReport:
    """
    Static report for a graph.

    Args:
        g: Graph to analyze
        frame_rate_hz: Input frames (or images) per second; defaults to the
            rate declared on the graph input
        budget: Power model; defaults to Budget()
        outputs: Restrict cost to layers feeding these outputs

    Returns:
        AnalysisReport
    """
    budget = budget or Budget()
    frame_rate_hz = frame_rate_hz or g.input.frame_rate_hz
    if not frame_rate_hz or frame_rate_hz <= 0:
        raise ConfigError("analyze needs a positive frame rate")
    selected = list(outputs) if outputs else list(g.outputs)
    for out_id in selected:
        if not g.has_layer(out_id):
            raise UnknownOutput(f"No layer '{out_id}' in graph")

    shapes = output_shapes(g)
    layer_rates = _layer_rates(g, frame_rate_hz) if g.input.has_time else {}
    layer_mps = _macs_per_second(g, frame_rate_hz, g.ancestors(selected))
    total = sum(layer_mps.values())
    power = estimate_power(total, budget)

    per_output: Dict[str, OutputAnalysis] = {}
    hop = 1.0 / frame_rate_hz
    for out_id in selected:
        own = sum(layer_mps[i] for i in g.ancestors([out_id]))
        if g.input.has_time:
            ss = steady_state(g, out_id)
            per_output[out_id] = OutputAnalysis(
                output_id=out_id,
                shape=list(shapes[out_id]),
                receptive_field_frames=ss.receptive_field,
                lookahead_frames=ss.lookahead,
                context_seconds=ss.receptive_field * hop,
                latency_seconds=ss.lookahead * hop,
                macs_per_output_frame=own / float(layer_rates[out_id]),
            )
        else:
            per_output[out_id] = OutputAnalysis(
                output_id=out_id,
                shape=list(shapes[out_id]),
                receptive_field_frames=None,
                lookahead_frames=None,
                context_seconds=None,
                latency_seconds=None,
                macs_per_output_frame=own / frame_rate_hz,
            )

    report = AnalysisReport(
        frame_rate_hz=float(frame_rate_hz),
        outputs=per_output,
        layer_macs_per_second=layer_mps,
        macs_per_second=total,
        estimated_power_mw=power,
        power_budget_mw=budget.power_budget_mw,
        budget_ok=power <= budget.power_budget_mw,
    )
    logger.debug(f"Analyzed graph: {total:.4g} MAC/s, {power:.4g} mW")
    return report


# ===== Porting =====


@dataclass
class LayerPortInfo:
    sparsity: float
    weight_scale: float
    weight_zero_point: int
    out_scale: Optional[float] = None
    out_zero_point: Optional[int] = None


@dataclass
class PortReport:
    """Per-layer porting outcome and the budget verdict of the ported graph."""

    layers: Dict[str, LayerPortInfo]
    folded: List[str]
    analysis: AnalysisReport
    estimated_power_mw: float
    power_budget_mw: float
    budget_ok: bool
    input_scale: Optional[float] = None
    input_zero_point: Optional[int] = None
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _fold_batchnorms(g: GraphSpec) -> Tuple[GraphSpec, List[str]]:
    """Fold conv -> batchnorm pairs where the conv feeds only the batchnorm."""
    layers = list(g.layers)
    renames: Dict[str, str] = {}
    folded: List[str] = []
    by_id = {layer.id: i for i, layer in enumerate(layers)}
    for bn in g.layers:
        if bn.kind != LayerKind.BATCHNORM or "gamma" not in bn.weights:
            continue
        src = g.layer(bn.inputs[0]) if bn.inputs[0] != INPUT_ID else None
        if (
            src is None
            or src.kind not in (LayerKind.CONV1D, LayerKind.CONV2D)
            or src.is_placeholder
            or src.weights["weight"].is_quantized
            or len(g.consumers(src.id)) != 1
            or src.id in g.outputs
        ):
            continue
        w = src.weights["weight"].to_float()
        bias = src.weights.get("bias")
        conv = ConvParams(
            weight=w,
            bias=bias.to_float() if bias is not None else np.zeros(w.shape[0]),
        )
        p = bn.weights
        new = fold_batchnorm(
            conv,
            BatchNormParams(
                gamma=p["gamma"].to_float(),
                beta=p["beta"].to_float(),
                mean=p["mean"].to_float(),
                var=p["var"].to_float(),
                eps=float(bn.params.get("eps", 1e-5)),
            ),
        )
        layers[by_id[src.id]] = src.with_weights(
            weight=Tensor(new.weight), bias=Tensor(new.bias)
        )
        layers[by_id[bn.id]] = None
        renames[bn.id] = src.id
        folded.append(bn.id)

    def _rename(i: str) -> str:
        while i in renames:
            i = renames[i]
        return i

    kept = [
        replace(layer, inputs=tuple(_rename(i) for i in layer.inputs))
        for layer in layers
        if layer is not None
    ]
    return g.with_layers(kept, [_rename(o) for o in g.outputs]), folded


def _quantize_weights(w: np.ndarray) -> Tuple[np.ndarray, QuantParams]:
    """int8 codes where only exact zeros map to the zero point."""
    qp = QuantParams.from_range(float(w.min()), float(w.max()))
    codes = quantize_array(w, qp).astype(np.int16)
    collapsed = (codes == qp.zero_point) & (w != 0)
    codes[collapsed] += np.sign(w[collapsed]).astype(np.int16)
    return np.clip(codes, INT8_MIN, INT8_MAX).astype(np.int8), qp


def port_model(
    g: GraphSpec,
    budget: Budget,
    prune_threshold: float = 0.0,
    frame_rate: Optional[float] = None,
    calibration: Optional[Tensor] = None,
) -> Tuple[GraphSpec, PortReport]:
    """
    Fold, prune and quantize a float graph for deployment.

    Args:
        g: Float graph (already-int8 layers are kept as they are)
        budget: Power budget the ported graph must meet
        prune_threshold: Weights with |w| below this become zero
        frame_rate: Input frame rate; defaults to the graph's
        calibration: Representative input used to choose activation scales;
            without it activations stay float

    Returns:
        (ported graph, PortReport)

    Raises:
        DegenerateModel: A layer has no non-zero weight left
        BudgetExceeded: Estimated power is above the budget (report attached)
    """
    if prune_threshold < 0:
        raise ConfigError("prune_threshold must be >= 0")
    folded_graph, folded = _fold_batchnorms(g)

    infos: Dict[str, LayerPortInfo] = {}
    pruned_layers: List[LayerSpec] = []
    for layer in folded_graph.layers:
        if not layer.kind.is_weighted or layer.is_placeholder:
            pruned_layers.append(layer)
            continue
        weight = layer.weights["weight"]
        if weight.is_quantized:
            codes = weight.data
            qp = weight.quant
        else:
            w = weight.to_float()
            w[np.abs(w) < prune_threshold] = 0.0
            if not w.any():
                raise DegenerateModel(f"Layer {layer.id} pruned to all-zero weights")
            codes, qp = _quantize_weights(w)
        if not np.any(codes != qp.zero_point):
            raise DegenerateModel(f"Layer {layer.id} has all-zero weights")
        infos[layer.id] = LayerPortInfo(
            sparsity=float(np.mean(codes == qp.zero_point)),
            weight_scale=qp.scale,
            weight_zero_point=qp.zero_point,
        )
        pruned_layers.append(layer.with_weights(weight=Tensor(codes, qp)))
    ported = folded_graph.with_layers(pruned_layers)

    notes: List[str] = []
    if calibration is not None:
        ported = _calibrate(ported, calibration)
        notes.append("activation scales calibrated")
    for layer in ported.layers:
        if layer.id in infos and layer.out_quant is not None:
            infos[layer.id].out_scale = layer.out_quant.scale
            infos[layer.id].out_zero_point = layer.out_quant.zero_point

    analysis = analyze(ported, frame_rate, budget)
    report = PortReport(
        layers=infos,
        folded=folded,
        analysis=analysis,
        estimated_power_mw=analysis.estimated_power_mw,
        power_budget_mw=budget.power_budget_mw,
        budget_ok=analysis.budget_ok,
        input_scale=ported.input.quant.scale if ported.input.quant else None,
        input_zero_point=ported.input.quant.zero_point if ported.input.quant else None,
        notes=notes,
    )
    logger.info(
        f"Ported graph: {len(infos)} weighted layers, "
        f"{len(folded)} batch-norms folded, "
        f"{report.estimated_power_mw:.3f} mW (budget {budget.power_budget_mw} mW)"
    )
    if not report.budget_ok:
        raise BudgetExceeded(
            f"Estimated {report.estimated_power_mw:.3f} mW exceeds "
            f"{budget.power_budget_mw} mW budget",
            report,
        )
    return ported, report


_CALIBRATED_KINDS = (
    LayerKind.CONV1D,
    LayerKind.CONV2D,
    LayerKind.DENSE,
    LayerKind.BATCHNORM,
    LayerKind.RESIDUAL_ADD,
    LayerKind.CONCAT_CHANNELS,
)


def _calibrate(g: GraphSpec, x: Tensor) -> GraphSpec:
    """Assign activation quantization from the float ranges seen on x."""
    float_graph = GraphSpec(replace(g.input, quant=None), g.layers, g.outputs)
    acts = GraphExecutor(float_graph).forward(x, collect=True)
    layers = []
    for layer in g.layers:
        if layer.kind in _CALIBRATED_KINDS and layer.out_quant is None:
            a = acts[layer.id].to_float()
            layer = replace(layer, out_quant=QuantParams.from_range(a.min(), a.max()))
        layers.append(layer)
    x_real = x.to_float()
    in_quant = g.input.quant or QuantParams.from_range(x_real.min(), x_real.max())
    return GraphSpec(replace(g.input, quant=in_quant), tuple(layers), g.outputs)


# ===== Impulse probe =====


def _structural_graph(g: GraphSpec) -> GraphSpec:
    """Same topology with positive unit-gain weights and no nonlinearity masking."""
    shapes = output_shapes(g)
    layers = []
    for layer in g.layers:
        c_in = shapes[layer.inputs[0]][0]
        c_out = shapes[layer.id][0]
        weights: Dict[str, Tensor] = {}
        params = dict(layer.params)
        kind = layer.kind
        match layer.kind:
            case LayerKind.CONV1D:
                w = np.full((c_out, c_in, layer.kernel_size), 1.0 / c_in)
                weights = {"weight": Tensor(w), "bias": Tensor(np.zeros(c_out))}
            case LayerKind.DENSE:
                w = np.full((c_out, c_in), 1.0 / c_in)
                weights = {"weight": Tensor(w), "bias": Tensor(np.zeros(c_out))}
            case LayerKind.BATCHNORM:
                ones, zeros = np.ones(c_out), np.zeros(c_out)
                weights = {
                    "gamma": Tensor(ones),
                    "beta": Tensor(zeros),
                    "mean": Tensor(zeros),
                    "var": Tensor(ones),
                }
                params["eps"] = 0.0
            case LayerKind.SOFTMAX:
                # relu is the identity on the non-negative probe signal
                kind = LayerKind.RELU
            case LayerKind.CONV2D:
                raise GraphError("impulse_probe needs a time-axis graph")
        layers.append(
            LayerSpec(layer.id, kind, layer.inputs, params, weights, out_quant=None)
        )
    return GraphSpec(InputSpec(g.input.shape, g.input.time_axis), layers, g.outputs)


def default_probe_length(g: GraphSpec, output_frame_index: int) -> int:
    """Input length large enough that frame o and its whole window exist."""
    stride = 1
    extent = 0
    for layer in g.layers:
        if layer.kind == LayerKind.CONV1D:
            stride *= layer.stride
            extent += layer.dilation * (layer.kernel_size - 1)
            extent += layer.pad_left + layer.pad_right + 1
    return stride * (output_frame_index + 2 + extent)


def impulse_probe(
    g: GraphSpec,
    output_frame_index: int,
    output_id: Optional[str] = None,
    input_length: Optional[int] = None,
    mode: ProbeMode = ProbeMode.STRUCTURAL,
) -> IndexInterval:
    """
    Empirical dependency range of one output frame.

    Each input frame is perturbed on its own; the result is the hull of the
    frames whose perturbation changes the chosen output frame. Structural mode
    swaps in positive unit weights so no dependency is cancelled or masked by
    a dead unit; numeric mode keeps the real weights.

    Args:
        g: Graph with a time axis
        output_frame_index: Output frame o
        output_id: Output layer; defaults to the first declared output
        input_length: Finite input length; defaults to a safe bound
        mode: Structural or numeric evaluation

    Returns:
        IndexInterval of influencing input frames (Empty if none)
    """
    _require_time(g)
    output_id = g.resolve_output(output_id)
    if mode == ProbeMode.STRUCTURAL:
        probe_graph = _structural_graph(g)
    else:
        probe_graph = GraphSpec(replace(g.input, quant=None), g.layers, g.outputs)
    probe_graph = probe_graph.with_layers(probe_graph.layers, [output_id])
    length = input_length or default_probe_length(g, output_frame_index)
    executor = GraphExecutor(probe_graph)

    channels = g.input.channels
    base_input = np.zeros((channels, length))
    base = executor.forward(Tensor(base_input))[output_id].to_float()
    if output_frame_index >= base.shape[-1]:
        raise UnknownOutput(
            f"Output frame {output_frame_index} beyond length {base.shape[-1]}"
        )
    reference = base[:, output_frame_index]
    changed = []
    for j in range(length):
        x = base_input.copy()
        x[:, j] = 1.0
        out = executor.forward(Tensor(x))[output_id].to_float()[:, output_frame_index]
        if np.any(out != reference):
            changed.append(j)
    return IndexInterval.hull_of(changed)


def context_frames(g: GraphSpec, output_id: Optional[str] = None) -> Tuple[int, int]:
    """(left, right) input frames of context around an output frame's anchor."""
    ss = steady_state(g, output_id)
    return ss.left_context, ss.right_context
