# core/builder.py
"""Incremental construction of GraphSpecs with seeded random weights."""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.graph import INPUT_ID, GraphSpec, InputSpec, LayerKind, LayerSpec
from core.tensor import Tensor


class GraphBuilder:
    """
    Appends layers in topological order and tracks channel counts.

    Weights are drawn from a seeded generator (fan-in scaled normal) unless the
    builder is in placeholder mode, which records geometry only.
    """

    def __init__(
        self,
        input_spec: InputSpec,
        seed: Optional[int] = 0,
        placeholder: bool = False,
        weight_gain: float = 1.0,
    ):
        self.input_spec = input_spec
        self.placeholder = placeholder
        self.weight_gain = weight_gain
        self._rng = np.random.default_rng(seed)
        self._layers: List[LayerSpec] = []
        self._channels: Dict[str, int] = {INPUT_ID: input_spec.channels}

    def channels(self, layer_id: str) -> int:
        return self._channels[layer_id]

    def _add(self, layer: LayerSpec, channels: int) -> str:
        self._layers.append(layer)
        self._channels[layer.id] = channels
        return layer.id

    def _weights(self, shape: Tuple[int, ...], fan_in: int) -> Dict[str, Tensor]:
        if self.placeholder:
            return {}
        std = self.weight_gain / np.sqrt(fan_in)
        return {
            "weight": Tensor(self._rng.normal(0.0, std, size=shape)),
            "bias": Tensor(self._rng.normal(0.0, 0.01, size=shape[0])),
        }

    # ===== Layers =====

    def conv1d(
        self,
        layer_id: str,
        src: str,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        dilation: int = 1,
        pad_left: Optional[int] = None,
        pad_right: Optional[int] = None,
    ) -> str:
        """Add a conv1d; pads default to a centered, length-preserving split."""
        c_in = self._channels[src]
        total = dilation * (kernel_size - 1)
        if pad_left is None:
            pad_left = total // 2
        if pad_right is None:
            pad_right = total - pad_left
        params = {
            "kernel_size": kernel_size,
            "stride": stride,
            "dilation": dilation,
            "pad_left": pad_left,
            "pad_right": pad_right,
            "in_channels": c_in,
            "out_channels": out_channels,
        }
        weights = self._weights((out_channels, c_in, kernel_size), c_in * kernel_size)
        layer = LayerSpec(layer_id, LayerKind.CONV1D, (src,), params, weights)
        return self._add(layer, out_channels)

    def conv2d(
        self,
        layer_id: str,
        src: str,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: Optional[int] = None,
    ) -> str:
        c_in = self._channels[src]
        params = {
            "kernel_size": kernel_size,
            "stride": stride,
            "padding": kernel_size // 2 if padding is None else padding,
            "in_channels": c_in,
            "out_channels": out_channels,
        }
        fan_in = c_in * kernel_size * kernel_size
        weights = self._weights((out_channels, c_in, kernel_size, kernel_size), fan_in)
        layer = LayerSpec(layer_id, LayerKind.CONV2D, (src,), params, weights)
        return self._add(layer, out_channels)

    def dense(self, layer_id: str, src: str, out_channels: int) -> str:
        c_in = self._channels[src]
        params = {"in_channels": c_in, "out_channels": out_channels}
        weights = self._weights((out_channels, c_in), c_in)
        return self._add(
            LayerSpec(layer_id, LayerKind.DENSE, (src,), params, weights), out_channels
        )

    def batchnorm(self, layer_id: str, src: str, eps: float = 1e-5) -> str:
        c = self._channels[src]
        weights: Dict[str, Tensor] = {}
        if not self.placeholder:
            weights = {
                "gamma": Tensor(self._rng.uniform(0.8, 1.2, size=c)),
                "beta": Tensor(self._rng.normal(0.0, 0.05, size=c)),
                "mean": Tensor(self._rng.normal(0.0, 0.05, size=c)),
                "var": Tensor(self._rng.uniform(0.8, 1.2, size=c)),
            }
        layer = LayerSpec(layer_id, LayerKind.BATCHNORM, (src,), {"eps": eps}, weights)
        return self._add(layer, c)

    def relu(self, layer_id: str, src: str) -> str:
        return self._add(
            LayerSpec(layer_id, LayerKind.RELU, (src,)), self._channels[src]
        )

    def softmax(self, layer_id: str, src: str) -> str:
        return self._add(
            LayerSpec(layer_id, LayerKind.SOFTMAX, (src,)), self._channels[src]
        )

    def upsample(self, layer_id: str, src: str, factor: int) -> str:
        layer = LayerSpec(
            layer_id, LayerKind.NEAREST_UPSAMPLE, (src,), {"factor": factor}
        )
        return self._add(layer, self._channels[src])

    def concat(self, layer_id: str, srcs: Sequence[str]) -> str:
        layer = LayerSpec(layer_id, LayerKind.CONCAT_CHANNELS, tuple(srcs))
        return self._add(layer, sum(self._channels[s] for s in srcs))

    def residual(self, layer_id: str, srcs: Sequence[str]) -> str:
        layer = LayerSpec(layer_id, LayerKind.RESIDUAL_ADD, tuple(srcs))
        return self._add(layer, self._channels[srcs[0]])

    # ===== Composites =====

    def conv_bn_relu(
        self,
        prefix: str,
        src: str,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        pad_left: Optional[int] = None,
        pad_right: Optional[int] = None,
    ) -> str:
        x = self.conv1d(
            f"{prefix}_conv",
            src,
            out_channels,
            kernel_size,
            stride,
            pad_left=pad_left,
            pad_right=pad_right,
        )
        x = self.batchnorm(f"{prefix}_bn", x)
        return self.relu(f"{prefix}_relu", x)

    def build(self, outputs: Sequence[str]) -> GraphSpec:
        return GraphSpec(self.input_spec, tuple(self._layers), tuple(outputs))
