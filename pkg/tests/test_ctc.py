# tests/test_ctc.py
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from core.ctc import best_path, collapse, ctc_forward_score, ctc_greedy_decode
from core.speechnet import ALPHABET

A, B = ALPHABET.encode("ab")


def _one_hot(path, vocab_size=29):
    p = np.zeros((len(path), vocab_size))
    p[np.arange(len(path)), path] = 1.0
    return p


@pytest.mark.parametrize(
    "path, text",
    [([0, A, A, 0, B], "ab"), ([A, A], "a"), ([A, 0, A], "aa"), ([0, 0], "")],
)
def test_greedy_decode_examples(path, text):
    assert ctc_greedy_decode(_one_hot(path), ALPHABET) == text


def test_ties_go_to_lowest_index():
    assert best_path([[0.5, 0.5, 0.0]]) == [0]


def test_best_path_needs_a_matrix():
    with pytest.raises(ValueError):
        best_path([0.2, 0.8])


def test_greedy_decode_matches_hand_collapse_exhaustively():
    for n in range(1, 7):
        for path in itertools.product(range(3), repeat=n):
            expected = []
            prev = None
            for sym in path:
                if sym != prev and sym != 0:
                    expected.append(sym)
                prev = sym
            assert ctc_greedy_decode(_one_hot(path), ALPHABET) == ALPHABET.decode(
                expected
            )


# ===== Forward score =====


_TWO_FRAMES = np.log([[0.4, 0.6], [0.5, 0.5]])


@pytest.mark.parametrize("target, score", [([1], 0.8), ([1, 1], 0.0), ([], 0.2)])
def test_forward_score_examples(target, score):
    assert ctc_forward_score(_TWO_FRAMES, target) == pytest.approx(score, abs=1e-12)


def _brute_force(probs, target):
    t_len, vocab = probs.shape
    total = 0.0
    for path in itertools.product(range(vocab), repeat=t_len):
        if collapse(path) == list(target):
            total += float(np.prod(probs[np.arange(t_len), path]))
    return total


@st.composite
def posteriors(draw):
    t_len = draw(st.integers(min_value=1, max_value=5))
    vocab = draw(st.integers(min_value=2, max_value=4))
    seed = draw(st.integers(min_value=0, max_value=2**16))
    logits = np.random.default_rng(seed).normal(size=(t_len, vocab))
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    symbol = st.integers(min_value=1, max_value=vocab - 1)
    target = draw(st.lists(symbol, max_size=t_len))
    return probs, target


@settings(max_examples=60, deadline=None)
@given(posteriors())
def test_forward_score_matches_enumeration(case):
    probs, target = case
    assert ctc_forward_score(np.log(probs), target) == pytest.approx(
        _brute_force(probs, target), abs=1e-9
    )


def test_scores_over_all_targets_sum_to_at_most_one():
    probs = np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3], [0.3, 0.3, 0.4]])
    total = 0.0
    for n in range(0, 4):
        for target in itertools.product((1, 2), repeat=n):
            total += ctc_forward_score(np.log(probs), list(target))
    assert total <= 1.0 + 1e-9
    assert total == pytest.approx(1.0)
