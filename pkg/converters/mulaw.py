# converters/mulaw.py
"""Continuous mu-law companding on 8 bits."""

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.tensor import round_half_away

MU = 255


def compand(x: ArrayLike) -> NDArray[np.float64]:
    """F(x) = sign(x) * ln(1 + mu|x|) / ln(1 + mu), input clamped to [-1, 1]."""
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    return np.sign(x) * np.log1p(MU * np.abs(x)) / np.log1p(MU)


def expand(f: ArrayLike) -> NDArray[np.float64]:
    """Inverse of compand."""
    f = np.asarray(f, dtype=np.float64)
    return np.sign(f) * ((1.0 + MU) ** np.abs(f) - 1.0) / MU


def mulaw_encode(x: ArrayLike) -> NDArray[np.uint8]:
    """
    Encode audio in [-1, 1] to codes 0..255.

    Args:
        x: Samples (clamped to [-1, 1])

    Returns:
        uint8 codes, monotone non-decreasing in x
    """
    codes = round_half_away((compand(x) + 1.0) * 127.5)
    return np.clip(codes, 0, 255).astype(np.uint8)


def mulaw_midpoint(codes: ArrayLike) -> NDArray[np.float64]:
    """Companded value at the center of each code, in [-1, 1]."""
    return np.asarray(codes, dtype=np.float64) / 127.5 - 1.0


def mulaw_decode(codes: ArrayLike) -> NDArray[np.float64]:
    """Audio value of each code's midpoint."""
    return expand(mulaw_midpoint(codes))
