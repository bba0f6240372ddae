# core/tensor.py
"""Tensor container and int8 affine quantization."""

from dataclasses import dataclass, field
from enum import StrEnum
from typing import Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import ConfigError, ShapeMismatch

INT8_MIN = -128
INT8_MAX = 127


class DType(StrEnum):
    """Element types a Tensor may carry."""

    FLOAT32 = "float32"
    INT8 = "int8"


def round_half_away(x: ArrayLike) -> NDArray[np.float64]:
    """Round to nearest integer, ties away from zero."""
    a = np.asarray(x, dtype=np.float64)
    return np.sign(a) * np.floor(np.abs(a) + 0.5)


@dataclass(frozen=True)
class QuantParams:
    """Per-tensor affine quantization parameters: real = (code - zero_point) * scale."""

    scale: float
    zero_point: int = 0

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ConfigError(f"Quantization scale must be positive, got {self.scale}")
        if not INT8_MIN <= int(self.zero_point) <= INT8_MAX:
            raise ConfigError(f"Zero point {self.zero_point} outside int8 range")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "zero_point", int(self.zero_point))

    @classmethod
    def from_range(cls, lo: float, hi: float) -> "QuantParams":
        """
        Choose parameters covering [lo, hi] with real zero exactly representable.

        Args:
            lo: Smallest value to represent
            hi: Largest value to represent

        Returns:
            QuantParams whose code range spans min(lo, 0)..max(hi, 0)
        """
        lo = min(float(lo), 0.0)
        hi = max(float(hi), 0.0)
        if hi - lo <= 0.0:
            return cls(scale=1.0, zero_point=0)
        scale = (hi - lo) / 255.0
        zp = int(round_half_away(INT8_MIN - lo / scale))
        return cls(scale=scale, zero_point=int(np.clip(zp, INT8_MIN, INT8_MAX)))

    def to_dict(self) -> dict:
        return {"scale": self.scale, "zero_point": self.zero_point}


@dataclass(frozen=True)
class Tensor:
    """
    Immutable n-dimensional array, float32 or int8-affine.

    Data is held as a read-only numpy array in row-major order. ``quant`` is set
    if and only if the tensor holds int8 codes.
    """

    data: NDArray
    quant: Optional[QuantParams] = field(default=None)

    def __post_init__(self):
        if self.quant is None:
            arr = np.array(self.data, dtype=np.float32)
        else:
            raw = np.asarray(self.data)
            if raw.dtype != np.int8:
                if raw.size and (raw.min() < INT8_MIN or raw.max() > INT8_MAX):
                    raise ShapeMismatch("int8 codes must lie in [-128, 127]")
            arr = np.array(raw, dtype=np.int8)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    # ===== Properties =====

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def dtype(self) -> DType:
        return DType.FLOAT32 if self.quant is None else DType.INT8

    @property
    def is_quantized(self) -> bool:
        return self.quant is not None

    @property
    def size(self) -> int:
        return int(self.data.size)

    def __len__(self) -> int:
        return self.shape[0]

    # ===== Conversions =====

    def to_float(self) -> NDArray[np.float64]:
        """Real values in float64, dequantizing if needed."""
        if self.quant is None:
            return self.data.astype(np.float64)
        return (self.data.astype(np.float64) - self.quant.zero_point) * self.quant.scale

    def codes(self) -> NDArray[np.int64]:
        """Integer codes shifted by the zero point."""
        if self.quant is None:
            raise ShapeMismatch("Float tensor has no integer codes")
        return self.data.astype(np.int64) - self.quant.zero_point

    def with_data(self, data: ArrayLike) -> "Tensor":
        """New tensor with the same quantization and different data."""
        return Tensor(np.asarray(data), self.quant)

    def __repr__(self) -> str:
        q = "" if self.quant is None else f", scale={self.quant.scale:.4g}"
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{q})"


def quantize(t: Tensor, qp: QuantParams) -> Tensor:
    """
    Quantize a float tensor to int8 codes, saturating at the int8 limits.

    Args:
        t: Float tensor (an int8 tensor is requantized through its real values)
        qp: Target quantization parameters

    Returns:
        int8-affine Tensor
    """
    return Tensor(quantize_array(t.to_float(), qp), qp)


def quantize_array(x: ArrayLike, qp: QuantParams) -> NDArray[np.int8]:
    codes = round_half_away(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(codes, INT8_MIN, INT8_MAX).astype(np.int8)


def dequantize(t: Tensor) -> Tensor:
    """Real-valued float32 tensor for an int8 tensor; float tensors pass through."""
    if t.quant is None:
        return t
    return Tensor(t.to_float())
