"""Calibration error metrics over token streams.

ECE bins top-label confidence; CECE bins every class probability
(Guo et al., 2017; Kull et al., 2019). Both support an equal-spaced scheme
over confidence in [0, 1] and a log scheme over -log2(confidence) in
(0, log_upper]. Bins are half-open, left-exclusive / right-inclusive.

Accumulators hold per-bin partial sums and merge associatively, so shards
of a stream can be reduced in any order (results agree to float
reassociation error).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .distrib import kl_divergence, softmax_t
from .errors import InvalidInputError

EQUAL_SPACED = "equal_spaced"
LOG_SPACED = "log_spaced"


@dataclass(frozen=True)
class BinningScheme:
    kind: str
    num_bins: int
    log_upper: float | None = None

    def __post_init__(self):
        if self.kind not in (EQUAL_SPACED, LOG_SPACED):
            raise InvalidInputError(f"unknown binning kind {self.kind!r}")
        if self.num_bins < 1:
            raise InvalidInputError("num_bins must be >= 1")
        if self.kind == LOG_SPACED:
            if self.log_upper is None or not self.log_upper > 0:
                raise InvalidInputError("log_spaced scheme requires log_upper > 0")

    @staticmethod
    def equal(num_bins: int = 15) -> "BinningScheme":
        return BinningScheme(EQUAL_SPACED, num_bins)

    @staticmethod
    def log(num_bins: int = 15, log_upper: float = 1.0) -> "BinningScheme":
        return BinningScheme(LOG_SPACED, num_bins, log_upper)

    def bin_of(self, confidences: np.ndarray) -> np.ndarray:
        """Bin index for each confidence; out-of-range values clamp to the
        nearest bin so every sample is counted exactly once."""
        c = np.asarray(confidences, dtype=np.float64)
        m = self.num_bins
        if self.kind == EQUAL_SPACED:
            idx = np.ceil(c * m).astype(np.int64) - 1
        else:
            with np.errstate(divide="ignore"):
                x = -np.log2(c)
            x = np.where(np.isinf(x), self.log_upper * (m + 1), x)  # zero mass -> beyond last bin
            idx = np.ceil(x / self.log_upper * m).astype(np.int64) - 1
        return np.clip(idx, 0, m - 1)

    def bounds(self, index: int) -> tuple[float, float]:
        """(lo, hi] bounds of a bin on the scheme's binning axis."""
        m = self.num_bins
        if self.kind == EQUAL_SPACED:
            return index / m, (index + 1) / m
        w = self.log_upper / m
        return index * w, (index + 1) * w

    @property
    def axis(self) -> str:
        return "confidence" if self.kind == EQUAL_SPACED else "neg_log2_confidence"


@dataclass(frozen=True)
class BinRow:
    lo: float
    hi: float
    mean_confidence: float
    accuracy: float
    count: int


@dataclass(frozen=True)
class CalibrationReport:
    ece: float
    cece: float
    hce_ts: float | None
    scheme: BinningScheme
    n_samples: int
    per_bin: tuple[BinRow, ...]


def _check_confidences(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.size == 0:
        raise InvalidInputError("empty sample list")
    if (c <= 0).any() or (c > 1).any() or not np.isfinite(c).all():
        raise InvalidInputError("confidences must lie in (0, 1]")
    return c


class EceAccumulator:
    """Streaming ECE: per-bin confidence sums, hit counts, and counts."""

    def __init__(self, scheme: BinningScheme):
        self.scheme = scheme
        self.conf_sum = np.zeros(scheme.num_bins)
        self.hit_sum = np.zeros(scheme.num_bins)
        self.count = np.zeros(scheme.num_bins, dtype=np.int64)

    def add(self, confidences, correct) -> None:
        c = _check_confidences(np.atleast_1d(confidences))
        hit = np.atleast_1d(correct).astype(np.float64)
        if hit.shape != c.shape:
            raise InvalidInputError("confidences and correctness flags differ in length")
        bins = self.scheme.bin_of(c)
        np.add.at(self.conf_sum, bins, c)
        np.add.at(self.hit_sum, bins, hit)
        np.add.at(self.count, bins, 1)

    def merge(self, other: "EceAccumulator") -> "EceAccumulator":
        if other.scheme != self.scheme:
            raise InvalidInputError("cannot merge accumulators with different schemes")
        self.conf_sum += other.conf_sum
        self.hit_sum += other.hit_sum
        self.count += other.count
        return self

    @property
    def n(self) -> int:
        return int(self.count.sum())

    def value(self) -> float:
        if self.n == 0:
            raise InvalidInputError("empty sample list")
        return float(np.abs(self.conf_sum - self.hit_sum).sum() / self.n)

    def per_bin(self) -> tuple[BinRow, ...]:
        rows = []
        for m in range(self.scheme.num_bins):
            lo, hi = self.scheme.bounds(m)
            cnt = int(self.count[m])
            rows.append(
                BinRow(
                    lo,
                    hi,
                    self.conf_sum[m] / cnt if cnt else math.nan,
                    self.hit_sum[m] / cnt if cnt else math.nan,
                    cnt,
                )
            )
        return tuple(rows)


class CeceAccumulator:
    """Streaming classwise calibration error.

    Keeps (class, bin) partial sums; one O(K) update per sample, never an
    N x K matrix. `class_subset` restricts (and renormalizes over) the
    classes entering the outer sum.
    """

    def __init__(self, scheme: BinningScheme, vocab_size: int,
                 class_subset: Sequence[int] | None = None):
        if vocab_size < 2:
            raise InvalidInputError("vocab_size must be >= 2")
        self.scheme = scheme
        self.vocab_size = vocab_size
        if class_subset is None:
            self.classes = np.arange(vocab_size)
        else:
            self.classes = np.asarray(sorted(set(int(k) for k in class_subset)), dtype=np.int64)
            if self.classes.size == 0 or self.classes[0] < 0 or self.classes[-1] >= vocab_size:
                raise InvalidInputError("class_subset out of range")
        k_eff = self.classes.size
        self.prob_sum = np.zeros((k_eff, scheme.num_bins))
        self.gold_count = np.zeros((k_eff, scheme.num_bins))
        self._n = 0
        self._pos = {int(k): i for i, k in enumerate(self.classes)}

    def add(self, probs, gold: int) -> None:
        p = np.asarray(probs, dtype=np.float64)
        if p.shape != (self.vocab_size,):
            raise InvalidInputError(
                f"probability vector has length {p.shape}, expected {self.vocab_size}"
            )
        gold = int(gold)
        if not 0 <= gold < self.vocab_size:
            raise InvalidInputError(f"gold class {gold} out of range")
        sub = p[self.classes]
        bins = self.scheme.bin_of(sub)
        rows = np.arange(self.classes.size)
        np.add.at(self.prob_sum, (rows, bins), sub)
        if gold in self._pos:
            i = self._pos[gold]
            self.gold_count[i, bins[i]] += 1.0
        self._n += 1

    def merge(self, other: "CeceAccumulator") -> "CeceAccumulator":
        if other.scheme != self.scheme or not np.array_equal(other.classes, self.classes):
            raise InvalidInputError("cannot merge accumulators with different configs")
        self.prob_sum += other.prob_sum
        self.gold_count += other.gold_count
        self._n += other._n
        return self

    @property
    def n(self) -> int:
        return self._n

    def value(self) -> float:
        if self._n == 0:
            raise InvalidInputError("empty sample list")
        return float(np.abs(self.prob_sum - self.gold_count).sum() / (self._n * self.classes.size))


def ece(predictions: Iterable[tuple[float, int, int]], scheme: BinningScheme) -> float:
    """Expected calibration error of (confidence, predicted, gold) samples."""
    acc = EceAccumulator(scheme)
    conf, correct = [], []
    for c, pred, gold in predictions:
        conf.append(c)
        correct.append(1.0 if pred == gold else 0.0)
    if not conf:
        raise InvalidInputError("empty sample list")
    acc.add(np.asarray(conf), np.asarray(correct))
    return acc.value()


def cece(probs: Iterable[tuple], scheme: BinningScheme,
         class_subset: Sequence[int] | None = None) -> float:
    """Classwise calibration error of (probability vector, gold) samples."""
    acc = None
    for p, gold in probs:
        p = np.asarray(p, dtype=np.float64)
        if acc is None:
            acc = CeceAccumulator(scheme, p.shape[0], class_subset)
        acc.add(p, gold)
    if acc is None:
        raise InvalidInputError("empty sample list")
    return acc.value()


def hce_ts(logit_stream: Iterable, t_star: float) -> float:
    """Mean KL divergence, in bits, from each token's unscaled distribution
    to its distribution at temperature ``t_star``."""
    t_star = float(t_star)
    if not t_star > 0:
        raise InvalidInputError("t_star must be positive")
    total = 0.0
    n = 0
    for z in logit_stream:
        total += kl_divergence(softmax_t(z, 1.0), softmax_t(z, t_star))
        n += 1
    if n == 0:
        raise InvalidInputError("empty archive")
    return total / n


def empirical_log_upper(confidences) -> float:
    """Empirical upper limit of -log2(confidence) over a sample."""
    c = _check_confidences(confidences)
    return float(np.max(-np.log2(c)))


def evaluate_stream(tokens: Iterable[tuple], t: float, scheme: BinningScheme,
                    t_star: float | None = None,
                    class_subset: Sequence[int] | None = None) -> CalibrationReport:
    """One-pass ECE + CECE (and HCE given ``t_star``) over (logits, gold) tokens
    with temperature ``t`` applied before measuring."""
    ece_acc = None
    cece_acc = None
    kl_total = 0.0
    n = 0
    for z, gold in tokens:
        p = softmax_t(z, t)
        if ece_acc is None:
            ece_acc = EceAccumulator(scheme)
            cece_acc = CeceAccumulator(scheme, p.shape[0], class_subset)
        pred = int(np.argmax(p))
        ece_acc.add(float(p[pred]), float(pred == int(gold)))
        cece_acc.add(p, gold)
        if t_star is not None:
            kl_total += kl_divergence(softmax_t(z, 1.0), softmax_t(z, t_star))
        n += 1
    if ece_acc is None:
        raise InvalidInputError("empty sample list")
    return CalibrationReport(
        ece=ece_acc.value(),
        cece=cece_acc.value(),
        hce_ts=(kl_total / n) if t_star is not None else None,
        scheme=scheme,
        n_samples=n,
        per_bin=ece_acc.per_bin(),
    )
