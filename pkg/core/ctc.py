# core/ctc.py
"""CTC decoding and sequence scoring."""

from typing import List, Sequence

import numpy as np
from numpy.typing import ArrayLike

BLANK = 0


def best_path(posteriors: ArrayLike) -> List[int]:
    """Per-frame argmax; ties go to the lowest symbol index."""
    p = np.asarray(posteriors, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"Posteriors must be [T, V], got shape {p.shape}")
    return [int(i) for i in np.argmax(p, axis=1)]


def collapse(path: Sequence[int], blank: int = BLANK) -> List[int]:
    """Merge consecutive repeats, then drop blanks."""
    out: List[int] = []
    prev = None
    for sym in path:
        if sym != prev and sym != blank:
            out.append(sym)
        prev = sym
    return out


def ctc_greedy_decode(posteriors: ArrayLike, vocab) -> str:
    """
    Greedy CTC transcript.

    Args:
        posteriors: [T, V] per-frame distributions
        vocab: Vocabulary with a ``decode(ids)`` method and BLANK at index 0

    Returns:
        Decoded text
    """
    return vocab.decode(collapse(best_path(posteriors)))


def ctc_forward_score(
    log_probs: ArrayLike, target: Sequence[int], blank: int = BLANK
) -> float:
    """
    Total probability of all alignments that collapse to target.

    Runs the blank-interleaved forward recursion in log space.

    Args:
        log_probs: [T, V] natural-log per-frame probabilities
        target: Symbol ids without blanks
        blank: Blank symbol id

    Returns:
        Linear probability (0.0 when no alignment fits in T frames)
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    t_len = lp.shape[0]
    if t_len < 1:
        raise ValueError("ctc_forward_score needs T >= 1")
    ext = [blank]
    for sym in target:
        ext.extend([int(sym), blank])
    s_len = len(ext)

    alpha = np.full(s_len, -np.inf)
    alpha[0] = lp[0, ext[0]]
    if s_len > 1:
        alpha[1] = lp[0, ext[1]]
    for t in range(1, t_len):
        prev = alpha
        alpha = np.full(s_len, -np.inf)
        for s in range(s_len):
            acc = prev[s]
            if s >= 1:
                acc = np.logaddexp(acc, prev[s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                acc = np.logaddexp(acc, prev[s - 2])
            alpha[s] = acc + lp[t, ext[s]]

    total = alpha[-1] if s_len == 1 else np.logaddexp(alpha[-1], alpha[-2])
    return float(np.exp(total))
