import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surpscale import distrib
from surpscale.distrib import (
    SURPRISAL_CAP,
    kl_divergence,
    renyi_entropy,
    shannon_entropy,
    softmax_t,
    surprisal,
    surprisal_spread,
    surprisal_std_bound,
    surprisal_t,
    word_surprisal,
)
from surpscale.errors import InvalidInputError

P5 = np.array([0.8, 0.05, 0.05, 0.05, 0.05])
Z5 = np.log(P5)


class TestSoftmaxT:
    def test_uniform_logits_any_temperature(self):
        for c in (0.0, -3.5, 12.0):
            for t in (0.5, 1.0, 7.0):
                out = softmax_t(np.full(4, c), t)
                np.testing.assert_allclose(out, 0.25, atol=1e-12)

    def test_hand_derived_power_renormalization(self):
        # p^(1/2) renormalized: 0.8^0.5 / (0.8^0.5 + 4 * 0.05^0.5) = 0.5
        out = softmax_t(Z5, 2.0)
        np.testing.assert_allclose(out, [0.5, 0.125, 0.125, 0.125, 0.125], atol=1e-12)

    def test_infinite_temperature_limit(self):
        out = softmax_t(np.array([10.0, 0.0]), 1e9)
        np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-6)

    def test_large_logits_no_overflow(self):
        out = softmax_t(np.array([1e4, -1e4, 0.0]), 1.0)
        assert np.isfinite(out).all()
        assert abs(out.sum() - 1.0) < 1e-9

    def test_zero_mass_sentinel_exact(self):
        out = softmax_t(np.array([0.0, -np.inf, 1.0]), 3.0)
        assert out[1] == 0.0
        assert abs(out.sum() - 1.0) < 1e-9

    def test_rejects_nan_and_posinf(self):
        with pytest.raises(InvalidInputError):
            softmax_t(np.array([0.0, np.nan]))
        with pytest.raises(InvalidInputError):
            softmax_t(np.array([0.0, np.inf]))
        with pytest.raises(InvalidInputError):
            softmax_t(np.array([-np.inf, -np.inf]))

    def test_rejects_nonpositive_temperature(self):
        with pytest.raises(InvalidInputError):
            softmax_t(np.array([0.0, 1.0]), 0.0)
        with pytest.raises(InvalidInputError):
            softmax_t(np.array([0.0, 1.0]), -2.0)

    @given(st.integers(2, 30), st.floats(1e-3, 1e9), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_sums_to_one_and_argmax_invariant(self, k, t, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(0.0, 5.0, size=k)
        out = softmax_t(z, t)
        assert abs(out.sum() - 1.0) < 1e-9
        assert int(np.argmax(out)) == int(np.argmax(z))


class TestSurprisal:
    def test_hand_derived_value(self):
        assert surprisal(Z5, 0) == pytest.approx(-math.log2(0.8), abs=1e-12)

    def test_uniform_eight_classes(self):
        z = np.zeros(8)
        for gold in range(8):
            assert surprisal(z, gold) == pytest.approx(3.0, abs=1e-12)

    def test_half_half(self):
        assert surprisal(np.log([0.5, 0.5]), 1) == pytest.approx(1.0, abs=1e-12)

    def test_gold_out_of_range(self):
        with pytest.raises(IndexError):
            surprisal(Z5, 5)
        with pytest.raises(IndexError):
            surprisal(Z5, -1)

    def test_zero_probability_gold_saturates(self):
        s = surprisal(np.array([0.0, -np.inf]), 1)
        assert s == SURPRISAL_CAP
        assert s.saturated

    def test_deep_tail_saturates(self):
        s = surprisal(np.array([2100.0, 0.0]), 1)
        assert s == SURPRISAL_CAP and s.saturated
        s2 = surprisal(np.array([500.0, 0.0]), 1)
        assert not s2.saturated


class TestSurprisalT:
    def test_hand_derived_t2(self):
        assert surprisal_t(Z5, 0, 2.0) == pytest.approx(1.0, abs=1e-9)

    def test_infinite_temperature_is_log_k(self):
        rng = np.random.default_rng(3)
        z = rng.normal(0, 4, size=5)
        assert surprisal_t(z, 2, 1e9) == pytest.approx(math.log2(5), abs=1e-3)

    def test_identity_temperature_bit_exact(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            z = rng.normal(0, 6, size=11)
            g = int(rng.integers(0, 11))
            assert float(surprisal_t(z, g, 1.0)) == float(surprisal(z, g))


class TestWordSurprisal:
    def test_single_token(self):
        z = np.log([0.25, 0.25, 0.25, 0.25])
        assert word_surprisal([(z, 0)], 1.0) == pytest.approx(2.0, abs=1e-12)

    def test_additivity_two_tokens(self):
        z = np.log([0.5, 0.5])
        assert word_surprisal([(z, 0), (z, 1)], 1.0) == pytest.approx(2.0, abs=1e-12)

    def test_hand_derived_mixed_pair_t2(self):
        toks = [(Z5, 0), (np.log([0.5, 0.5]), 0)]
        assert word_surprisal(toks, 2.0) == pytest.approx(2.0, abs=1e-9)

    def test_empty_word_rejected(self):
        with pytest.raises(InvalidInputError):
            word_surprisal([], 1.0)

    def test_bit_exact_additivity(self):
        rng = np.random.default_rng(5)
        toks = [(rng.normal(0, 3, size=9), int(rng.integers(0, 9))) for _ in range(4)]
        direct = word_surprisal(toks, 1.7)
        manual = sum(float(surprisal_t(z, g, 1.7)) for z, g in toks)
        assert float(direct) == manual

    def test_saturation_propagates(self):
        got = word_surprisal([(np.array([0.0, -np.inf]), 1), (Z5, 0)], 1.0)
        assert got.saturated


class TestShannonEntropy:
    def test_uniform_four(self):
        assert shannon_entropy(np.zeros(4)) == pytest.approx(2.0, abs=1e-12)

    def test_hand_derived(self):
        assert shannon_entropy(Z5) == pytest.approx(1.1219280948873622, abs=1e-12)

    def test_degenerate_distribution(self):
        z = np.array([0.0, -np.inf, -np.inf])
        assert shannon_entropy(z) == pytest.approx(0.0, abs=1e-12)

    def test_matches_renyi_alpha_one(self):
        rng = np.random.default_rng(6)
        z = rng.normal(0, 2, size=12)
        assert shannon_entropy(z) == pytest.approx(renyi_entropy(softmax_t(z), 1.0), abs=1e-9)


class TestRenyiEntropy:
    def test_hand_derived_half(self):
        assert renyi_entropy(P5, 0.5) == pytest.approx(1.6780719051126376, abs=1e-9)

    def test_support_count(self):
        assert renyi_entropy([0.8, 0.2, 0.0, 0.0, 0.0], 0.0) == pytest.approx(1.0)

    def test_full_support_alpha_zero(self):
        rng = np.random.default_rng(7)
        p = rng.dirichlet(np.ones(5))
        assert renyi_entropy(p, 0.0) == pytest.approx(math.log2(5))

    def test_negative_alpha_rejected(self):
        with pytest.raises(InvalidInputError):
            renyi_entropy(P5, -0.1)

    def test_invalid_distribution_rejected(self):
        with pytest.raises(InvalidInputError):
            renyi_entropy([0.7, 0.7], 0.5)


class TestKlDivergence:
    def test_identity(self):
        rng = np.random.default_rng(8)
        p = rng.dirichlet(np.ones(6))
        assert kl_divergence(p, p) == 0.0

    def test_one_bit(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(1.0, abs=1e-12)

    def test_hand_derived(self):
        assert kl_divergence([0.8, 0.2], [0.5, 0.5]) == pytest.approx(0.27807190511263774, abs=1e-9)

    def test_missing_support_is_infinite(self):
        assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            kl_divergence([0.5, 0.5], [0.5, 0.25, 0.25])

    @given(st.integers(2, 12), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_nonnegative(self, k, seed):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(k))
        q = rng.dirichlet(np.ones(k))
        assert kl_divergence(p, q) >= 0.0


class TestTheoremProperties:
    """Seeded spot checks of the monotonicity / bound properties.

    The full-scale versions (1e4 trials, all K) run in the acceptance suite.
    """

    GRID = [i / 10 for i in range(10, 26)] + [3.0, 5.0, 10.0, 100.0]

    def test_scaled_surprisal_strictly_increasing_when_gold_above_uniform(self):
        rng = np.random.default_rng(9)
        for k in (2, 5, 50):
            for _ in range(200):
                p = rng.dirichlet(np.ones(k))
                gold = int(np.argmax(p))  # argmax guarantees p_gold > 1/K a.s.
                z = np.log(np.maximum(p, 1e-310))
                vals = [float(surprisal_t(z, gold, t)) for t in self.GRID]
                assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_renyi_strictly_decreasing_on_unit_interval(self):
        rng = np.random.default_rng(10)
        alphas = [i / 10 for i in range(11)]
        for k in (2, 5, 50):
            for _ in range(200):
                p = rng.dirichlet(np.ones(k))
                vals = [renyi_entropy(p, a) for a in alphas]
                assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_uniform_distribution_is_not_strict(self):
        p = np.full(4, 0.25)
        assert renyi_entropy(p, 0.0) == renyi_entropy(p, 0.5) == renyi_entropy(p, 1.0)

    def test_infinite_temperature_matches_support_renyi(self):
        # order-0 entropy of a full-support distribution equals the T -> inf
        # surprisal limit, log2 K
        rng = np.random.default_rng(11)
        z = rng.normal(0, 3, size=7)
        lim = surprisal_t(z, 3, 1e9)
        assert lim == pytest.approx(renyi_entropy(softmax_t(z), 0.0), abs=1e-3)

    def test_spread_bound_holds_on_draws(self):
        rng = np.random.default_rng(12)
        for k in (2, 5, 50):
            bound = surprisal_std_bound(k, base=2.0)
            for _ in range(500):
                p = rng.dirichlet(np.ones(k))
                mad, std = surprisal_spread(p, base=2.0)
                assert mad <= std + 1e-12
                assert std < bound

    def test_nats_form_of_bound(self):
        # in nats the squared bound is ln^2(k-1)/4 + 1 exactly
        assert surprisal_std_bound(2, base=math.e) == pytest.approx(1.0)
        assert surprisal_std_bound(50, base=math.e) ** 2 == pytest.approx(
            0.25 * math.log(49) ** 2 + 1.0
        )


class TestGapBetweenFlatAndPeaked:
    """A word with a flatter distribution gains more surprisal under scaling."""

    PEAKED = np.array([math.log(0.8), math.log(0.2), -np.inf, -np.inf, -np.inf])

    def test_gap_positive_above_one_and_growing_to_2_5(self):
        temps = [1.0 + i / 20 for i in range(1, 31)]  # (1.0, 2.5]
        gaps = [
            float(surprisal_t(Z5, 0, t)) - float(surprisal_t(self.PEAKED, 0, t))
            for t in temps
        ]
        assert all(g > 0 for g in gaps)
        assert all(b > a for a, b in zip(gaps, gaps[1:]))

    def test_equal_surprisal_at_t1(self):
        assert float(surprisal(Z5, 0)) == pytest.approx(
            float(surprisal(self.PEAKED, 0)), abs=1e-12
        )


def test_accumulation_is_double_precision():
    z32 = np.array([1.0, 2.0, 3.0], dtype=np.float32)
    out = softmax_t(z32, 1.0)
    assert out.dtype == np.float64


def test_bits_repr_behaves_like_float():
    s = surprisal(np.log([0.5, 0.5]), 0)
    assert isinstance(s, float)
    assert s + 1.0 == 2.0
    assert not s.saturated
