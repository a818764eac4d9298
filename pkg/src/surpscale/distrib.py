"""Numerically stable probability, surprisal, and entropy kernels.

All information quantities are in bits (log base 2) unless a function takes
an explicit ``base``. Zero probabilities are represented as ``-inf`` logits
and map to exact zero mass at every finite temperature. Every function here
is pure; inputs are never mutated.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInputError

LN2 = math.log(2.0)

# Probabilities below 1e-300 saturate instead of producing inf.
SURPRISAL_CAP = -math.log2(1e-300)


class Bits(float):
    """A surprisal value in bits, carrying a saturation flag.

    ``saturated`` is True when the underlying probability fell below the
    1e-300 floor and the value was clamped to ``SURPRISAL_CAP``.
    """

    __slots__ = ("saturated",)
    saturated: bool

    def __new__(cls, value: float, saturated: bool = False) -> "Bits":
        obj = super().__new__(cls, value)
        obj.saturated = saturated
        return obj


def as_logits(z) -> np.ndarray:
    """Validate and return a logit vector as float64.

    Accepts ``-inf`` entries (zero-probability sentinel) but rejects NaN,
    ``+inf``, all-``-inf`` vectors, and vectors of length < 2.
    """
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise InvalidInputError(f"logit vector must be 1-D with K >= 2, got shape {arr.shape}")
    if np.isnan(arr).any() or np.isposinf(arr).any():
        raise InvalidInputError("logits must be finite or -inf (got NaN or +inf)")
    if not np.isfinite(arr).any():
        raise InvalidInputError("logit vector has no finite entry")
    return arr


def as_probs(p) -> np.ndarray:
    """Validate and return a probability vector as float64."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise InvalidInputError(f"probability vector must be 1-D with K >= 2, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidInputError("probabilities must be finite")
    if (arr < 0).any() or (arr > 1 + 1e-12).any():
        raise InvalidInputError("probabilities must lie in [0, 1]")
    total = arr.sum()
    if abs(total - 1.0) > 1e-9:
        raise InvalidInputError(f"probabilities must sum to 1 within 1e-9 (sum = {total!r})")
    return arr


def _check_temperature(t: float) -> float:
    t = float(t)
    if not math.isfinite(t) or t <= 0.0:
        raise InvalidInputError(f"temperature must be a positive finite real, got {t!r}")
    return t


def _check_gold(gold: int, k: int) -> int:
    gold = int(gold)
    if not 0 <= gold < k:
        raise IndexError(f"gold index {gold} out of range for K = {k}")
    return gold


def softmax_t(z, t: float = 1.0) -> np.ndarray:
    """Temperature-scaled softmax, computed with max subtraction.

    Safe for logits up to |1e4|; ``-inf`` entries yield exactly zero mass.
    The argmax of the output equals the argmax of ``z`` (ties resolve to the
    lowest index in both).
    """
    z = as_logits(z)
    t = _check_temperature(t)
    zt = z / t
    shifted = zt - zt.max()
    e = np.exp(shifted)
    return e / e.sum()


def log_softmax_t(z, t: float = 1.0) -> np.ndarray:
    """Log of ``softmax_t`` in nats; zero-mass entries stay ``-inf``."""
    z = as_logits(z)
    t = _check_temperature(t)
    zt = z / t
    return zt - logsumexp(zt)


def surprisal(z, gold: int) -> Bits:
    """Surprisal of class ``gold`` in bits: (logsumexp(z) - z[gold]) / ln 2.

    Never exponentiates then logs; probabilities below 1e-300 clamp to
    ``SURPRISAL_CAP`` with ``saturated`` set.
    """
    z = as_logits(z)
    gold = _check_gold(gold, z.shape[0])
    nats = logsumexp(z) - z[gold]
    bits = nats / LN2
    if bits >= SURPRISAL_CAP or not math.isfinite(bits):
        return Bits(SURPRISAL_CAP, saturated=True)
    return Bits(bits)


def surprisal_t(z, gold: int, t: float) -> Bits:
    """Temperature-scaled surprisal: surprisal of ``z / t`` at ``gold``.

    Identical to ``surprisal(z, gold)`` at ``t == 1`` bit for bit.
    """
    z = as_logits(z)
    t = _check_temperature(t)
    return surprisal(z / t, gold)


def word_surprisal(tokens: Iterable[tuple], t: float = 1.0) -> Bits:
    """Sum of per-token temperature-scaled surprisals, in bits.

    ``tokens`` is a non-empty iterable of ``(logits, gold)`` pairs; a word
    split into subword tokens scores the sum of its token surprisals.
    """
    t = _check_temperature(t)
    total = 0.0
    saturated = False
    count = 0
    for z, gold in tokens:
        s = surprisal_t(z, gold, t)
        total += float(s)
        saturated = saturated or s.saturated
        count += 1
    if count == 0:
        raise InvalidInputError("word has no tokens")
    return Bits(total, saturated=saturated)


def shannon_entropy(z, t: float = 1.0) -> float:
    """Shannon entropy in bits of the temperature-scaled distribution.

    Computed from log-softmax so near-zero masses contribute 0 (the
    0 * log 0 := 0 convention).
    """
    ls = log_softmax_t(z, t)
    p = np.exp(ls)
    mask = p > 0.0
    return float(-(p[mask] * ls[mask]).sum() / LN2)


def renyi_entropy(p, alpha: float) -> float:
    """Renyi entropy of order ``alpha``, in bits (Renyi, 1961).

    ``alpha = 1`` is the Shannon limit; ``alpha = 0`` counts the support,
    log2 |{p_i > 0}|; otherwise log2(sum p^alpha) / (1 - alpha).
    """
    p = as_probs(p)
    alpha = float(alpha)
    if not math.isfinite(alpha) or alpha < 0.0:
        raise InvalidInputError(f"Renyi order must be a finite real >= 0, got {alpha!r}")
    if alpha == 0.0:
        return float(math.log2(int((p > 0).sum())))
    if alpha == 1.0:
        mask = p > 0
        return float(-(p[mask] * np.log2(p[mask])).sum())
    return float(np.log2((p ** alpha).sum()) / (1.0 - alpha))


def kl_divergence(p, q) -> float:
    """KL divergence D(p || q) in bits; returns ``inf`` if q lacks p's support.

    Non-negative; 0 iff ``p == q`` (within 1e-12).
    """
    p = as_probs(p)
    q = as_probs(q)
    if p.shape != q.shape:
        raise InvalidInputError(f"length mismatch: {p.shape[0]} vs {q.shape[0]}")
    mask = p > 0
    if (q[mask] == 0).any():
        return math.inf
    val = float((p[mask] * np.log2(p[mask] / q[mask])).sum())
    return max(val, 0.0)


def surprisal_spread(p, base: float = 2.0) -> tuple[float, float]:
    """(E|s - H|, sqrt(Var[s])) of surprisal under ``p``, in units of ``base``.

    ``s_i = -log_base(p_i)``, ``H = E[s]``; zero-mass entries contribute 0.
    """
    p = as_probs(p)
    lnb = math.log(base)
    mask = p > 0
    s = -np.log(p[mask]) / lnb
    w = p[mask]
    h = float((w * s).sum())
    var = float((w * (s - h) ** 2).sum())
    mad = float((w * np.abs(s - h)).sum())
    return mad, math.sqrt(max(var, 0.0))


def surprisal_std_bound(k: int, base: float = 2.0) -> float:
    """Upper bound on sqrt(Var[s]) for any distribution over ``k >= 2`` classes.

    The tight natural-log bound sqrt(ln^2(k-1)/4 + 1) (Reeb & Wolf, 2015),
    rescaled to ``base``: the additive constant is 1 only in nats.
    """
    if k < 2:
        raise InvalidInputError(f"bound requires k >= 2, got {k}")
    nats_sq = 0.25 * math.log(k - 1) ** 2 + 1.0
    return math.sqrt(nats_sq) / math.log(base)
