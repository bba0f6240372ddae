# core/ops.py
"""Layer kernels in float and int8-affine modes."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import NumericalError, ShapeMismatch
from core.tensor import (
    INT8_MAX,
    INT8_MIN,
    QuantParams,
    Tensor,
    quantize_array,
    round_half_away,
)

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1

BiasLike = Optional[Union[Tensor, ArrayLike]]


@dataclass(frozen=True)
class ConvParams:
    """Real-valued convolution parameters (1-D or 2-D weights)."""

    weight: NDArray[np.float64]
    bias: NDArray[np.float64]
    stride: int = 1
    dilation: int = 1
    pad_left: int = 0
    pad_right: int = 0


@dataclass(frozen=True)
class BatchNormParams:
    gamma: NDArray[np.float64]
    beta: NDArray[np.float64]
    mean: NDArray[np.float64]
    var: NDArray[np.float64]
    eps: float = 1e-5


def conv_output_length(
    length: int,
    kernel_size: int,
    stride: int,
    dilation: int,
    pad_left: int,
    pad_right: int,
) -> int:
    """Number of valid window positions over the padded axis (0 if none)."""
    extent = dilation * (kernel_size - 1) + 1
    padded = length + pad_left + pad_right
    if padded < extent:
        return 0
    return (padded - extent) // stride + 1


def _bias_array(bias: BiasLike, channels: int) -> NDArray[np.float64]:
    if bias is None:
        return np.zeros(channels, dtype=np.float64)
    if isinstance(bias, Tensor):
        arr = bias.to_float()
    else:
        arr = np.asarray(bias, np.float64)
    if arr.shape != (channels,):
        raise ShapeMismatch(f"Bias shape {arr.shape} does not match {channels}")
    return arr


def _split_output_channels(
    fn: Callable[[slice], NDArray], channels: int, workers: int
) -> NDArray:
    """Evaluate fn over contiguous output-channel slices, optionally in threads."""
    if workers <= 1 or channels < 2:
        return fn(slice(0, channels))
    bounds = np.linspace(0, channels, min(workers, channels) + 1).astype(int)
    slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=len(slices)) as pool:
        parts = list(pool.map(fn, slices))
    return np.concatenate(parts, axis=0)


def _requantize(acc: NDArray[np.int64], multiplier: float, out_quant: QuantParams):
    codes = round_half_away(acc.astype(np.float64) * multiplier) + out_quant.zero_point
    return np.clip(codes, INT8_MIN, INT8_MAX).astype(np.int8)


def _check_accumulator(acc: NDArray[np.int64], where: str):
    if acc.size and (acc.min() < INT32_MIN or acc.max() > INT32_MAX):
        raise NumericalError(f"{where}: int32 accumulator overflow")


def runs_quantized(x: Tensor, weights: Optional[Tensor], out_quant) -> bool:
    """Integer mode needs int8 input, int8 weights (if any) and an output scale."""
    return (
        x.is_quantized
        and out_quant is not None
        and (weights is None or weights.is_quantized)
    )


# ===== Convolutions =====


def conv1d_forward(
    x: Tensor,
    weights: Tensor,
    bias: BiasLike = None,
    stride: int = 1,
    dilation: int = 1,
    pad_left: int = 0,
    pad_right: int = 0,
    out_quant: Optional[QuantParams] = None,
    workers: int = 1,
) -> Tensor:
    """
    1-D convolution over the last axis with zero padding.

    Args:
        x: Input [C_in, T]
        weights: Kernel [C_out, C_in, K]
        bias: Optional [C_out] real bias
        stride, dilation, pad_left, pad_right: Window geometry
        out_quant: Output quantization; required for integer mode
        workers: Threads to split output channels over; results are identical

    Returns:
        Tensor [C_out, T_out]
    """
    if x.data.ndim != 2 or weights.data.ndim != 3:
        raise ShapeMismatch(
            f"conv1d expects [C,T] and [Co,Ci,K], got {x.shape}, {weights.shape}"
        )
    c_out, c_in, k = weights.shape
    if x.shape[0] != c_in:
        raise ShapeMismatch(f"conv1d input has {x.shape[0]} channels, kernel {c_in}")
    if min(stride, dilation, k) < 1 or min(pad_left, pad_right) < 0:
        raise ShapeMismatch("conv1d geometry out of range")
    t_out = conv_output_length(x.shape[1], k, stride, dilation, pad_left, pad_right)
    if t_out == 0:
        raise ShapeMismatch(
            f"Padded length {x.shape[1] + pad_left + pad_right} shorter than kernel"
        )
    b = _bias_array(bias, c_out)
    span = stride * (t_out - 1) + 1

    if runs_quantized(x, weights, out_quant):
        xq = np.pad(x.codes(), ((0, 0), (pad_left, pad_right)))
        wq = weights.codes()
        acc_scale = x.quant.scale * weights.quant.scale
        bq = round_half_away(b / acc_scale).astype(np.int64)

        def _int_part(sl: slice) -> NDArray[np.int64]:
            acc = np.zeros((sl.stop - sl.start, t_out), dtype=np.int64)
            for c in range(c_in):
                for j in range(k):
                    off = j * dilation
                    tap = xq[c, off : off + span : stride]
                    acc += wq[sl, c, j, None] * tap[None, :]
            return acc + bq[sl, None]

        acc = _split_output_channels(_int_part, c_out, workers)
        _check_accumulator(acc, "conv1d")
        codes = _requantize(acc, acc_scale / out_quant.scale, out_quant)
        return Tensor(codes, out_quant)

    xf = np.pad(x.to_float(), ((0, 0), (pad_left, pad_right)))
    wf = weights.to_float()

    def _float_part(sl: slice) -> NDArray[np.float64]:
        acc = np.zeros((sl.stop - sl.start, t_out), dtype=np.float64)
        # fixed (channel, tap) order per output element
        for c in range(c_in):
            for j in range(k):
                off = j * dilation
                tap = xf[c, off : off + span : stride]
                acc += wf[sl, c, j, None] * tap[None, :]
        return acc + b[sl, None]

    out = _split_output_channels(_float_part, c_out, workers)
    return Tensor(out)


def conv2d_forward(
    x: Tensor,
    weights: Tensor,
    bias: BiasLike = None,
    stride: int = 1,
    padding: int = 0,
    out_quant: Optional[QuantParams] = None,
    workers: int = 1,
) -> Tensor:
    """2-D convolution, square kernel, symmetric zero padding: [C,H,W] -> [Co,Ho,Wo]."""
    if x.data.ndim != 3 or weights.data.ndim != 4:
        raise ShapeMismatch(
            f"conv2d expects [C,H,W] and [Co,Ci,K,K], got {x.shape}, {weights.shape}"
        )
    c_out, c_in, kh, kw = weights.shape
    if x.shape[0] != c_in:
        raise ShapeMismatch(f"conv2d input has {x.shape[0]} channels, kernel {c_in}")
    h_out = conv_output_length(x.shape[1], kh, stride, 1, padding, padding)
    w_out = conv_output_length(x.shape[2], kw, stride, 1, padding, padding)
    if h_out == 0 or w_out == 0:
        raise ShapeMismatch("conv2d input smaller than kernel")
    b = _bias_array(bias, c_out)
    pads = ((0, 0), (padding, padding), (padding, padding))
    quantized = runs_quantized(x, weights, out_quant)
    xv = np.pad(x.codes(), pads) if quantized else np.pad(x.to_float(), pads)
    wv = weights.codes() if quantized else weights.to_float()
    acc_dtype = np.int64 if quantized else np.float64
    h_span = stride * (h_out - 1) + 1
    w_span = stride * (w_out - 1) + 1

    def _part(sl: slice) -> NDArray:
        acc = np.zeros((sl.stop - sl.start, h_out, w_out), dtype=acc_dtype)
        for c in range(c_in):
            for i in range(kh):
                for j in range(kw):
                    tap = xv[c, i : i + h_span : stride, j : j + w_span : stride]
                    acc += wv[sl, c, i, j, None, None] * tap[None, :, :]
        return acc

    acc = _split_output_channels(_part, c_out, workers)
    if quantized:
        acc_scale = x.quant.scale * weights.quant.scale
        acc = acc + round_half_away(b / acc_scale).astype(np.int64)[:, None, None]
        _check_accumulator(acc, "conv2d")
        codes = _requantize(acc, acc_scale / out_quant.scale, out_quant)
        return Tensor(codes, out_quant)
    return Tensor(acc + b[:, None, None])


def fold_batchnorm(conv: ConvParams, bn: BatchNormParams) -> ConvParams:
    """
    Fold a batch-norm layer into the preceding convolution.

    Args:
        conv: Convolution parameters
        bn: Batch-norm statistics applied to the convolution output

    Returns:
        ConvParams whose forward equals conv followed by bn
    """
    denom = np.asarray(bn.var, np.float64) + bn.eps
    if np.any(denom <= 0):
        raise NumericalError("Batch-norm variance + eps must be positive")
    scale = np.asarray(bn.gamma, np.float64) / np.sqrt(denom)
    w = np.asarray(conv.weight, np.float64)
    shape = (-1,) + (1,) * (w.ndim - 1)
    return replace(
        conv,
        weight=w * scale.reshape(shape),
        bias=(np.asarray(conv.bias, np.float64) - bn.mean) * scale + bn.beta,
    )


# ===== Elementwise / structural =====


def batchnorm(
    x: Tensor, bn: BatchNormParams, out_quant: Optional[QuantParams] = None
) -> Tensor:
    """Per-channel (x - mean) / sqrt(var + eps) * gamma + beta over axis 0."""
    denom = np.asarray(bn.var, np.float64) + bn.eps
    if np.any(denom <= 0):
        raise NumericalError("Batch-norm variance + eps must be positive")
    if len(denom) != x.shape[0]:
        raise ShapeMismatch(f"batchnorm has {len(denom)} channels, input {x.shape[0]}")
    shape = (-1,) + (1,) * (x.data.ndim - 1)
    scale = (np.asarray(bn.gamma, np.float64) / np.sqrt(denom)).reshape(shape)
    y = (x.to_float() - np.reshape(bn.mean, shape)) * scale + np.reshape(bn.beta, shape)
    if runs_quantized(x, None, out_quant):
        return Tensor(quantize_array(y, out_quant), out_quant)
    return Tensor(y)


def relu(x: Tensor) -> Tensor:
    if x.is_quantized:
        return x.with_data(np.maximum(x.data, np.int8(x.quant.zero_point)))
    return Tensor(np.maximum(x.data, np.float32(0.0)))


def dense(
    x: Tensor,
    weights: Tensor,
    bias: BiasLike = None,
    out_quant: Optional[QuantParams] = None,
    workers: int = 1,
) -> Tensor:
    """Fully connected projection, applied per frame when x is [C_in, T]."""
    if weights.data.ndim != 2:
        raise ShapeMismatch(f"dense weights must be [Co,Ci], got {weights.shape}")
    vector = x.data.ndim == 1
    x2 = x.with_data(x.data[:, None]) if vector else x
    w3 = weights.with_data(weights.data[:, :, None])
    y = conv1d_forward(x2, w3, bias, out_quant=out_quant, workers=workers)
    return y.with_data(y.data[:, 0]) if vector else y


def softmax(x: Tensor) -> Tensor:
    """Softmax over the channel axis; always returns float32 posteriors."""
    v = x.to_float()
    e = np.exp(v - v.max(axis=0, keepdims=True))
    total = np.zeros_like(e[0])
    for c in range(e.shape[0]):
        total = total + e[c]
    return Tensor(e / total)


def nearest_upsample(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ShapeMismatch(f"Upsample factor must be >= 1, got {factor}")
    return x.with_data(np.repeat(x.data, factor, axis=-1))


def _check_same_tail(xs: Sequence[Tensor], what: str):
    if len(xs) < 2:
        raise ShapeMismatch(f"{what} needs at least two inputs")
    tails = {t.shape[1:] for t in xs}
    if len(tails) != 1:
        raise ShapeMismatch(f"{what} inputs disagree on shape: {sorted(tails)}")


def concat_channels(
    xs: Sequence[Tensor], out_quant: Optional[QuantParams] = None
) -> Tensor:
    _check_same_tail(xs, "concat_channels")
    if out_quant is not None and all(t.is_quantized for t in xs):
        parts: List[NDArray] = [
            t.data if t.quant == out_quant else quantize_array(t.to_float(), out_quant)
            for t in xs
        ]
        return Tensor(np.concatenate(parts, axis=0), out_quant)
    return Tensor(np.concatenate([t.to_float() for t in xs], axis=0))


def residual_add(
    xs: Sequence[Tensor], out_quant: Optional[QuantParams] = None
) -> Tensor:
    _check_same_tail(xs, "residual_add")
    if len({t.shape[0] for t in xs}) != 1:
        raise ShapeMismatch("residual_add inputs disagree on channel count")
    total = xs[0].to_float()
    for t in xs[1:]:
        total = total + t.to_float()
    if out_quant is not None and all(t.is_quantized for t in xs):
        return Tensor(quantize_array(total, out_quant), out_quant)
    return Tensor(total)
