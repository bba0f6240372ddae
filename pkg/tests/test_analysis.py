# tests/test_analysis.py
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from core.analysis import (
    Budget,
    IndexInterval,
    ProbeMode,
    analyze,
    count_macs,
    default_probe_length,
    dependency_interval,
    estimate_power,
    impulse_probe,
    port_model,
    steady_state,
)
from core.builder import GraphBuilder
from core.errors import BudgetExceeded, ConfigError, DegenerateModel
from core.graph import GraphSpec, InputSpec, LayerKind, LayerSpec, graph_forward
from core.speechnet import build_speechnet, reference_speechnet1_config
from core.tensor import Tensor
from sim.firmware import build_vision_graph


@pytest.fixture(scope="module")
def speechnet1_geometry():
    return build_speechnet(reference_speechnet1_config(), placeholder=True)


def _single_conv(weight, frame_rate_hz=40.0):
    weight = np.asarray(weight, dtype=np.float64)
    c_out, c_in, k = weight.shape
    layer = LayerSpec(
        "conv",
        LayerKind.CONV1D,
        ("input",),
        {
            "kernel_size": k,
            "pad_left": (k - 1) // 2,
            "pad_right": k // 2,
            "in_channels": c_in,
            "out_channels": c_out,
        },
        {"weight": Tensor(weight), "bias": Tensor(np.zeros(c_out))},
    )
    spec = InputSpec((c_in, None), frame_rate_hz=frame_rate_hz)
    return GraphSpec(spec, (layer,), ("conv",))


# ===== Receptive field and latency =====


def test_single_conv_interval_and_clipping():
    g = _single_conv(np.ones((1, 1, 3)))
    assert dependency_interval(g, 0) == IndexInterval(-1, 1)
    assert dependency_interval(g, 0, input_length=10) == IndexInterval(0, 1)
    assert dependency_interval(g, 5) == IndexInterval(4, 6)


def test_speechnet1_context_and_latency(speechnet1_geometry):
    report = analyze(speechnet1_geometry)
    out = report.outputs["posteriors"]
    assert out.receptive_field_frames == 133
    assert out.lookahead_frames == 52
    assert out.context_seconds == pytest.approx(3.325)
    assert out.latency_seconds == pytest.approx(1.3)


def test_steady_state_index_has_no_left_padding(speechnet1_geometry):
    ss = steady_state(speechnet1_geometry)
    assert dependency_interval(speechnet1_geometry, ss.index).lo >= 0
    assert dependency_interval(speechnet1_geometry, ss.index - 1).lo < 0
    assert ss.left_context + ss.right_context + 1 == ss.receptive_field


def test_receptive_field_stable_past_steady_state(speechnet1_geometry):
    ss = steady_state(speechnet1_geometry)
    widths = {
        dependency_interval(speechnet1_geometry, ss.index + k).width for k in range(5)
    }
    assert widths == {ss.receptive_field}


# ===== MACs and power =====


def test_conv_mac_count():
    g = _single_conv(np.ones((4, 2, 3)))
    assert count_macs(g, input_length=5) == 120


def test_macs_need_a_length():
    with pytest.raises(ConfigError):
        count_macs(_single_conv(np.ones((1, 1, 3))))


@pytest.mark.parametrize(
    "macs_per_second, power_mw",
    [(1.375e12, 50.0), (2.75e12, 100.0), (0.0, 0.0)],
)
def test_power_model(macs_per_second, power_mw):
    assert estimate_power(macs_per_second, Budget()) == pytest.approx(power_mw)


@given(st.floats(min_value=1e6, max_value=1e13, allow_nan=False))
def test_power_is_linear_in_macs(macs_per_second):
    budget = Budget()
    double = estimate_power(2 * macs_per_second, budget)
    assert double == pytest.approx(2 * estimate_power(macs_per_second, budget))


def test_idle_floor_bounds_power_from_below():
    assert estimate_power(0.0, Budget(idle_floor_mw=2.0)) == 2.0


def test_speechnet1_fits_the_node_budget(speechnet1_geometry):
    report = analyze(speechnet1_geometry)
    assert report.macs_per_second > 0
    assert report.budget_ok


def test_vision_graph_lands_near_100_mw():
    report = analyze(build_vision_graph(), budget=Budget(power_budget_mw=120.0))
    assert 80.0 <= report.estimated_power_mw <= 120.0
    assert report.outputs["face"].receptive_field_frames is None


# ===== Porting =====


def test_port_without_pruning_reports_dense_layers(conv_stack):
    ported, report = port_model(conv_stack, Budget())
    assert set(report.layers) == {"c0", "c1"}
    assert all(info.sparsity == 0.0 for info in report.layers.values())
    convs = [layer for layer in ported.layers if layer.kind == LayerKind.CONV1D]
    assert all(layer.weights["weight"].is_quantized for layer in convs)
    assert report.budget_ok


def test_port_sparsity_counts_pruned_weights():
    w = np.ones((1, 4, 3))
    w[0, 1, :] = 0.01
    w[0, 2, 0] = -1.0
    g = _single_conv(w)
    _, report = port_model(g, Budget(), prune_threshold=0.1)
    assert report.layers["conv"].sparsity == pytest.approx(0.25)


def test_port_is_idempotent(conv_stack):
    once, first = port_model(conv_stack, Budget(), prune_threshold=0.05)
    twice, second = port_model(once, Budget(), prune_threshold=0.05)
    for a, b in zip(once.layers, twice.layers):
        if a.kind == LayerKind.CONV1D:
            np.testing.assert_array_equal(
                a.weights["weight"].data, b.weights["weight"].data
            )
            assert first.layers[a.id].sparsity == second.layers[a.id].sparsity


def test_port_folds_batchnorm():
    b = GraphBuilder(InputSpec((2, None), frame_rate_hz=40.0), seed=5)
    g = b.build([b.conv_bn_relu("blk", "input", 3, 3)])
    ported, report = port_model(g, Budget())
    assert report.folded
    assert LayerKind.BATCHNORM not in {layer.kind for layer in ported.layers}


def test_port_calibration_quantizes_activations(conv_stack):
    x = Tensor(np.random.default_rng(0).normal(size=(2, 32)))
    ported, report = port_model(conv_stack, Budget(), calibration=x)
    assert ported.input.quant is not None
    assert report.layers["c1"].out_scale is not None


def _float_path(g):
    """The same ported weights with activations left in float."""
    layers = tuple(replace(layer, out_quant=None) for layer in g.layers)
    return GraphSpec(replace(g.input, quant=None), layers, g.outputs)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=10_000),
    depth=st.integers(min_value=2, max_value=4),
    channels=st.integers(min_value=2, max_value=4),
    kernel=st.sampled_from([3, 5]),
    fold=st.booleans(),
)
def test_quantized_path_tracks_float_path(seed, depth, channels, kernel, fold):
    b = GraphBuilder(InputSpec((2, None), frame_rate_hz=40.0), seed=seed)
    x = "input"
    for i in range(depth - 1):
        x = b.conv1d(f"c{i}", x, channels, kernel)
        if fold:
            x = b.batchnorm(f"bn{i}", x)
    out = b.conv1d("head", x, 2, kernel)
    g = b.build([out])
    calibration = Tensor(np.random.default_rng(seed).normal(size=(2, 24)))

    ported, _ = port_model(g, Budget(), calibration=calibration)
    quantized = graph_forward(ported, calibration)[out]
    reference = graph_forward(_float_path(ported), calibration)[out]

    assert quantized.is_quantized
    scale = ported.layer(out).out_quant.scale
    error = np.abs(quantized.to_float() - reference.to_float()).max()
    assert error <= 2 * scale * depth


def test_port_rejects_all_zero_layer():
    with pytest.raises(DegenerateModel):
        port_model(_single_conv(np.zeros((1, 1, 3))), Budget())


def test_port_rejects_fully_pruned_layer():
    with pytest.raises(DegenerateModel):
        port_model(
            _single_conv(np.full((1, 1, 3), 0.01)), Budget(), prune_threshold=1.0
        )


def test_port_over_budget_carries_report(conv_stack):
    with pytest.raises(BudgetExceeded) as info:
        port_model(conv_stack, Budget(power_budget_mw=1e-12))
    assert info.value.report is not None
    assert not info.value.report.budget_ok


# ===== Impulse probe =====


@st.composite
def time_graphs(draw):
    """Random conv/relu/upsample chains with optional parallel branches."""
    b = GraphBuilder(InputSpec((1, None)), placeholder=True)
    x = "input"
    stride_product = 1
    for i in range(draw(st.integers(min_value=1, max_value=5))):
        match draw(st.sampled_from(["conv", "relu", "upsample", "branch"])):
            case "conv":
                max_stride = 3 if stride_product * 3 <= 27 else 1
                stride = draw(st.integers(min_value=1, max_value=max_stride))
                stride_product *= stride
                x = b.conv1d(
                    f"c{i}",
                    x,
                    draw(st.integers(min_value=1, max_value=2)),
                    draw(st.integers(min_value=1, max_value=9)),
                    stride=stride,
                    dilation=draw(st.integers(min_value=1, max_value=2)),
                    pad_left=draw(st.integers(min_value=0, max_value=7)),
                    pad_right=draw(st.integers(min_value=0, max_value=7)),
                )
            case "relu":
                x = b.relu(f"r{i}", x)
            case "upsample":
                x = b.upsample(f"u{i}", x, draw(st.integers(min_value=2, max_value=3)))
            case "branch":
                paths = []
                for p in range(draw(st.integers(min_value=2, max_value=3))):
                    k = draw(st.integers(min_value=1, max_value=7))
                    left = draw(st.integers(min_value=0, max_value=k - 1))
                    paths.append(
                        b.conv1d(
                            f"p{i}_{p}", x, 1, k, pad_left=left, pad_right=k - 1 - left
                        )
                    )
                x = b.concat(f"cat{i}", paths)
    return b.build([x])


@settings(max_examples=50, deadline=None)
@given(g=time_graphs(), extra=st.integers(min_value=0, max_value=4), data=st.data())
def test_probe_agrees_with_analyzer(g, extra, data):
    o = steady_state(g).index + extra
    iv = dependency_interval(g, o)
    assert iv.lo >= 0
    length = iv.hi + 1 + data.draw(st.integers(min_value=0, max_value=3))
    assert impulse_probe(g, o, input_length=length) == iv
    assert dependency_interval(g, o, input_length=length) == iv


def test_numeric_probe_within_structural(tiny_speechnet):
    o = steady_state(tiny_speechnet).index + 2
    length = default_probe_length(tiny_speechnet, o)
    structural = impulse_probe(tiny_speechnet, o)
    numeric = impulse_probe(tiny_speechnet, o, mode=ProbeMode.NUMERIC)
    assert structural == dependency_interval(tiny_speechnet, o, input_length=length)
    if not numeric.is_empty:
        assert structural.lo <= numeric.lo and numeric.hi <= structural.hi
