import math

import numpy as np
import pytest

from formhwr.ctc import (
    LogitSequence,
    beam_decode,
    ctc_loss,
    greedy_decode,
    oracle_label_prob,
)
from formhwr.errors import InfeasibleLabelError, OracleSizeError
from formhwr.rng import SeedStream
from formhwr.typedgen import Alphabet

from .oracles import collapse_path, count_paths_collapsing_to

AB_ALPHABET = Alphabet(("a", "b"))  # classes: a=0, b=1, blank=2


def random_instance(rng, max_T=8, max_S=5, max_label=3):
    T = rng.randint(1, max_T)
    S = rng.randint(2, max_S)
    logits = np.array(
        [[rng.gauss(0, 2.0) for _ in range(S)] for _ in range(T)], dtype=np.float64
    )
    label_len = rng.randint(0, min(max_label, T))
    label = [rng.randbelow(S - 1) for _ in range(label_len)]
    # drop labels that are infeasible due to adjacent repeats
    need = label_len + sum(1 for i in range(1, label_len) if label[i] == label[i - 1])
    if need > T:
        label = label[: max(0, label_len - (need - T))]
    return logits, label


# ---------------------------------------------------------------------------
# Loss against hand-computed and enumerated values
# ---------------------------------------------------------------------------


def test_two_frame_example():
    # per-frame softmax p(a)=0.6, p(blank)=0.4; P("a") = 0.36+0.24+0.24 = 0.84
    logits = np.log(np.array([[0.6, 0.4], [0.6, 0.4]]))
    loss, grad = ctc_loss(logits, [0])
    assert math.isclose(math.exp(-loss), 0.84, abs_tol=1e-12)
    assert math.isclose(loss, 0.174353, abs_tol=5e-7)
    assert grad.shape == (2, 2)


def test_uniform_logits_count_paths():
    for T, S, label in [(4, 3, (0,)), (5, 3, (0, 1)), (3, 2, (0, 0)), (6, 4, (2, 1))]:
        logits = np.zeros((T, S))
        loss, _ = ctc_loss(logits, list(label))
        n_paths = count_paths_collapsing_to(T, S, label)
        expected = -math.log(n_paths / S**T)
        assert math.isclose(loss, expected, rel_tol=1e-12)


def test_single_column_single_symbol():
    logits = np.array([[1.0, -0.5, 0.3]])
    loss, _ = ctc_loss(logits, [0])
    p = np.exp(logits[0]) / np.exp(logits[0]).sum()
    assert math.isclose(loss, -math.log(p[0]), rel_tol=1e-12)


def test_empty_label_probability_is_all_blanks():
    logits = np.array([[0.3, 1.2], [0.1, -0.4], [0.9, 0.2]])
    loss, _ = ctc_loss(logits, [])
    assert math.isclose(math.exp(-loss), oracle_label_prob(logits, []), abs_tol=1e-12)


def test_infeasible_label_raises():
    logits = np.zeros((2, 3))
    with pytest.raises(InfeasibleLabelError):
        ctc_loss(logits, [0, 0])  # repeat needs a blank: min 3 columns
    with pytest.raises(InfeasibleLabelError):
        ctc_loss(np.zeros((1, 3)), [0, 1])


def test_loss_matches_oracle_on_random_instances():
    rng = SeedStream(2718).rng()
    for _ in range(200):
        logits, label = random_instance(rng)
        loss, _ = ctc_loss(logits, label)
        assert abs(math.exp(-loss) - oracle_label_prob(logits, label)) < 1e-9


def test_path_probabilities_partition():
    # Sum of oracle probabilities over ALL labels of length <= T equals 1.
    from itertools import product

    rng = SeedStream(11).rng()
    for _ in range(5):
        T, S = 4, 3
        logits = np.array(
            [[rng.gauss(0, 1.5) for _ in range(S)] for _ in range(T)]
        )
        total = 0.0
        for length in range(T + 1):
            for label in product(range(S - 1), repeat=length):
                total += oracle_label_prob(logits, label)
        assert abs(total - 1.0) < 1e-9


# ---------------------------------------------------------------------------
# Gradient against central finite differences
# ---------------------------------------------------------------------------


def finite_difference_grad(logits, label, step=1e-5):
    grad = np.zeros_like(logits)
    for t in range(logits.shape[0]):
        for s in range(logits.shape[1]):
            plus = logits.copy()
            plus[t, s] += step
            minus = logits.copy()
            minus[t, s] -= step
            grad[t, s] = (ctc_loss(plus, label)[0] - ctc_loss(minus, label)[0]) / (2 * step)
    return grad


def test_gradient_matches_finite_differences():
    rng = SeedStream(31415).rng()
    worst = 0.0
    for _ in range(100):
        logits, label = random_instance(rng)
        _, grad = ctc_loss(logits, label)
        fd = finite_difference_grad(logits, label)
        scale = np.maximum(np.abs(fd), 1.0)
        worst = max(worst, float(np.abs(grad - fd).__truediv__(scale).max()))
    assert worst < 1e-5


# ---------------------------------------------------------------------------
# Greedy decoding
# ---------------------------------------------------------------------------


def _logits_for_argmax(seq, S):
    out = np.zeros((len(seq), S))
    for t, s in enumerate(seq):
        out[t, s] = 5.0
    return out


def test_greedy_collapse_rules():
    # argmax [a, a, blank, b, b] -> "ab"
    logits = _logits_for_argmax([0, 0, 2, 1, 1], 3)
    assert greedy_decode(logits, 5, AB_ALPHABET) == "ab"
    # all blanks -> ""
    logits = _logits_for_argmax([2, 2, 2], 3)
    assert greedy_decode(logits, 3, AB_ALPHABET) == ""
    # [a, blank, a] -> "aa"
    logits = _logits_for_argmax([0, 2, 0], 3)
    assert greedy_decode(logits, 3, AB_ALPHABET) == "aa"


def test_greedy_masks_padded_columns():
    logits = _logits_for_argmax([0, 2, 1, 1], 3)
    assert greedy_decode(logits, 2, AB_ALPHABET) == "a"


# ---------------------------------------------------------------------------
# Beam decoding
# ---------------------------------------------------------------------------


def exhaustive_best_label(logits):
    """Oracle argmax-probability labeling via full enumeration."""
    from itertools import product

    T, S = logits.shape
    best_label, best_p = None, -1.0
    seen = set()
    for length in range(T + 1):
        for label in product(range(S - 1), repeat=length):
            if label in seen:
                continue
            seen.add(label)
            p = oracle_label_prob(logits, label)
            if p > best_p:
                best_label, best_p = label, p
    return best_label, best_p


def test_beam_agrees_with_oracle_on_small_instances():
    rng = SeedStream(99).rng()
    alphabet = Alphabet(("a", "b"))
    for _ in range(10):
        T = rng.randint(2, 4)
        logits = np.array([[rng.gauss(0, 1.5) for _ in range(3)] for _ in range(T)])
        top = beam_decode(logits, T, beam_width=3**4 + 10, alphabet=alphabet)
        oracle_label, oracle_p = exhaustive_best_label(logits)
        assert top[0][0] == alphabet.decode(oracle_label)
        assert math.isclose(math.exp(top[0][1]), oracle_p, rel_tol=1e-9)


def test_beam_on_near_deterministic_logits():
    logits = _logits_for_argmax([0, 2, 1], 3) * 8.0
    top = beam_decode(logits, 3, beam_width=4, alphabet=AB_ALPHABET)
    assert top[0][0] == "ab"
    assert top[0][1] > -1e-3


def test_beam_merges_prefix_probabilities():
    rng = SeedStream(47).rng()
    logits = np.array([[rng.gauss(0, 1.0) for _ in range(2)] for _ in range(3)])
    alphabet = Alphabet(("a",))
    results = dict(beam_decode(logits, 3, beam_width=64, alphabet=alphabet))
    for text, label in [("a", (0,)), ("aa", (0, 0))]:
        assert math.isclose(
            math.exp(results[text]), oracle_label_prob(logits, label), rel_tol=1e-9
        )


def test_beam_width_monotonicity():
    rng = SeedStream(12).rng()
    for _ in range(10):
        T = rng.randint(3, 6)
        S = rng.randint(2, 5)
        logits = np.array([[rng.gauss(0, 2.0) for _ in range(S)] for _ in range(T)])
        alphabet = Alphabet(tuple(chr(ord("a") + i) for i in range(S - 1)))
        prev = -np.inf
        for width in (1, 2, 4, 8, 32):
            top = beam_decode(logits, T, width, alphabet)
            assert top[0][1] >= prev - 1e-12
            prev = top[0][1]


def test_beam_width_one_matches_its_own_path():
    logits = _logits_for_argmax([0, 0, 2, 1], 3)
    assert beam_decode(logits, 4, 1, AB_ALPHABET)[0][0] == greedy_decode(logits, 4, AB_ALPHABET)


# ---------------------------------------------------------------------------
# Oracle guard rails
# ---------------------------------------------------------------------------


def test_oracle_guards_large_instances():
    with pytest.raises(OracleSizeError):
        oracle_label_prob(np.zeros((9, 3)), [0])
    with pytest.raises(OracleSizeError):
        oracle_label_prob(np.zeros((4, 6)), [0])


def test_oracle_label_longer_than_T_is_zero():
    assert oracle_label_prob(np.zeros((2, 3)), [0, 1, 0]) == 0.0


def test_oracle_empty_label_is_all_blank_probability():
    logits = np.array([[0.0, 2.0], [1.0, 0.0]])
    p_blank = np.exp(_softmax_col(logits, 0, 1)) * np.exp(_softmax_col(logits, 1, 1))
    assert math.isclose(oracle_label_prob(logits, []), float(p_blank), rel_tol=1e-12)


def _softmax_col(logits, t, s):
    row = logits[t] - logits[t].max()
    return row[s] - math.log(np.exp(row).sum())


def test_logit_sequence_validation():
    with pytest.raises(ValueError):
        LogitSequence(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        LogitSequence(np.array([[np.nan, 0.0]]))
    seq = LogitSequence(np.zeros((4, 3)))
    assert (seq.T, seq.S) == (4, 3)


def test_collapse_oracle_helper():
    assert collapse_path((0, 0, 2, 1, 1), 2) == (0, 1)
    assert collapse_path((2, 2), 2) == ()
    assert collapse_path((0, 2, 0), 2) == (0, 0)
