"""Connectionist Temporal Classification: loss, gradients, decoding, oracle.

All probability arithmetic runs in log space with double-precision
accumulation. The blank class occupies the last index of the class
dimension (index S-1) throughout.

Forward/backward convention: alpha[t, u] includes emissions up to and
including column t; beta[t, u] covers emissions strictly after t, with
beta[T-1, u] = 1 on the two terminal states. Then gamma[t] = alpha[t] +
beta[t] (in logs) satisfies logsumexp_u gamma[t, u] = log P(label) for
every t, and the gradient with respect to the raw logits is
softmax(logits) - posterior(symbol occupancy).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InfeasibleLabelError, OracleSizeError
from .typedgen import Alphabet

NEG_INF = -np.inf


@dataclass(frozen=True)
class LogitSequence:
    """T x S matrix of unnormalized per-column class scores (blank last)."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ValueError(f"logits must be 2-D (T, S), got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 2:
            raise ValueError(f"need T >= 1 and S >= 2, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("logits contain non-finite values")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def S(self) -> int:
        return self.values.shape[1]


def _as_values(logits: "LogitSequence | np.ndarray") -> np.ndarray:
    if isinstance(logits, LogitSequence):
        return logits.values
    return LogitSequence(np.asarray(logits, dtype=np.float64)).values


def _log_softmax(values: np.ndarray) -> np.ndarray:
    shifted = values - values.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _count_adjacent_repeats(label: Sequence[int]) -> int:
    return sum(1 for i in range(1, len(label)) if label[i] == label[i - 1])


def ctc_loss(
    logits: "LogitSequence | np.ndarray", label: Sequence[int]
) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of `label` plus its gradient w.r.t. the logits.

    Raises InfeasibleLabelError when the label (with mandatory blanks
    between repeated symbols) cannot fit into T columns.
    """
    values = _as_values(logits)
    T, S = values.shape
    blank = S - 1
    label = list(label)
    for s in label:
        if not (0 <= s < blank):
            raise ValueError(f"label symbol {s} out of range [0, {blank})")
    L = len(label)
    min_T = L + _count_adjacent_repeats(label)
    if T < min_T:
        raise InfeasibleLabelError(
            f"label of length {L} with repeats needs at least {min_T} columns, have {T}"
        )

    # Blank-extended label: blank, l1, blank, l2, ..., blank  (length 2L+1)
    ext = np.full(2 * L + 1, blank, dtype=np.int64)
    ext[1::2] = label
    U = ext.size
    logp = _log_softmax(values)
    emit = logp[:, ext]  # (T, U)

    # Skip transition u-2 -> u is allowed into non-blank states that differ
    # from the symbol two back.
    can_skip = np.zeros(U, dtype=bool)
    if U >= 3:
        can_skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((T, U), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if U > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([NEG_INF], prev))[:U]
        skip = np.concatenate(([NEG_INF, NEG_INF], prev))[:U]
        skip = np.where(can_skip, skip, NEG_INF)
        alpha[t] = np.logaddexp(np.logaddexp(stay, step), skip) + emit[t]

    if U > 1:
        log_p = np.logaddexp(alpha[T - 1, U - 1], alpha[T - 1, U - 2])
    else:
        log_p = alpha[T - 1, U - 1]

    beta = np.full((T, U), NEG_INF)
    beta[T - 1, U - 1] = 0.0
    if U > 1:
        beta[T - 1, U - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [NEG_INF]))[:U]
        skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))[:U]
        skip_ok = np.zeros(U, dtype=bool)
        if U >= 3:
            skip_ok[:-2] = can_skip[2:]
        skip = np.where(skip_ok, skip, NEG_INF)
        beta[t] = np.logaddexp(np.logaddexp(stay, step), skip)

    # Posterior over classes: sum alpha*beta across extended states per class.
    gamma = alpha + beta  # (T, U), logsumexp over u equals log_p for each t
    posterior = np.zeros((T, S))
    with np.errstate(over="ignore"):
        occup = np.exp(gamma - log_p)
    np.add.at(posterior, (slice(None), ext), occup)
    grad = np.exp(logp) - posterior
    return float(-log_p), grad


def greedy_decode(
    logits: "LogitSequence | np.ndarray", valid_columns: int, alphabet: Alphabet
) -> str:
    """Best-path decoding: per-column argmax, collapse repeats, drop blanks."""
    values = _as_values(logits)
    if not (0 <= valid_columns <= values.shape[0]):
        raise ValueError(f"valid_columns {valid_columns} out of range [0, {values.shape[0]}]")
    blank = values.shape[1] - 1
    best = values[:valid_columns].argmax(axis=1)
    out = []
    prev = -1
    for s in best:
        if s != prev and s != blank:
            out.append(int(s))
        prev = s
    return alphabet.decode(out)


def beam_decode(
    logits: "LogitSequence | np.ndarray",
    valid_columns: int,
    beam_width: int,
    alphabet: Alphabet,
) -> list[tuple[str, float]]:
    """Prefix beam search with blank/non-blank bookkeeping and prefix merging.

    Returns up to beam_width (string, log-probability) pairs, best first.
    With an unbounded beam this enumerates the exact prefix posterior.
    """
    if beam_width < 1:
        raise ValueError(f"beam_width must be >= 1, got {beam_width}")
    values = _as_values(logits)
    if not (0 <= valid_columns <= values.shape[0]):
        raise ValueError(f"valid_columns {valid_columns} out of range [0, {values.shape[0]}]")
    S = values.shape[1]
    blank = S - 1
    logp = _log_softmax(values[:valid_columns])

    # prefix -> [log P(ending in blank), log P(ending in its last symbol)]
    beams: dict[tuple[int, ...], list[float]] = {(): [0.0, NEG_INF]}
    for t in range(valid_columns):
        alive: dict[tuple[int, ...], list[float]] = {}

        def bump(prefix, slot, value):
            entry = alive.setdefault(prefix, [NEG_INF, NEG_INF])
            entry[slot] = np.logaddexp(entry[slot], value)

        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            bump(prefix, 0, total + logp[t, blank])
            if prefix:
                bump(prefix, 1, pnb + logp[t, prefix[-1]])
            for s in range(blank):
                if prefix and s == prefix[-1]:
                    # same symbol again requires an intervening blank
                    bump(prefix + (s,), 1, pb + logp[t, s])
                else:
                    bump(prefix + (s,), 1, total + logp[t, s])

        ranked = sorted(
            alive.items(), key=lambda kv: (-np.logaddexp(kv[1][0], kv[1][1]), kv[0])
        )
        beams = dict(ranked[:beam_width])

    results = [
        (alphabet.decode(prefix), float(np.logaddexp(pb, pnb)))
        for prefix, (pb, pnb) in beams.items()
    ]
    results.sort(key=lambda r: (-r[1], r[0]))
    return results[:beam_width]


_ORACLE_MAX_T = 8
_ORACLE_MAX_S = 5


def oracle_label_prob(logits: "LogitSequence | np.ndarray", label: Sequence[int]) -> float:
    """Brute-force P(label): sum softmax path probabilities over all S^T
    frame sequences whose collapse (merge repeats, delete blanks) equals
    the label. Guarded to small instances; this is the test oracle."""
    values = _as_values(logits)
    T, S = values.shape
    if T > _ORACLE_MAX_T or S > _ORACLE_MAX_S:
        raise OracleSizeError(f"oracle limited to T <= {_ORACLE_MAX_T}, S <= {_ORACLE_MAX_S}")
    label = tuple(int(s) for s in label)
    L = len(label)
    if L > T:
        return 0.0

    blank = S - 1
    logp = _log_softmax(values)
    paths = np.indices((S,) * T).reshape(T, -1).T  # (S^T, T)
    path_logp = np.zeros(paths.shape[0])
    for t in range(T):
        path_logp += logp[t, paths[:, t]]

    keep = np.ones_like(paths, dtype=bool)
    keep[:, 1:] = paths[:, 1:] != paths[:, :-1]
    keep &= paths != blank
    lengths = keep.sum(axis=1)
    match = lengths == L
    if L > 0:
        collapsed = np.full((paths.shape[0], T), -1, dtype=paths.dtype)
        rows = np.nonzero(keep)[0]
        cols = (np.cumsum(keep, axis=1) - 1)[keep]
        collapsed[rows, cols] = paths[keep]
        match &= (collapsed[:, :L] == np.array(label)).all(axis=1)
    return float(np.exp(path_logp[match]).sum())
