import math

import numpy as np
import pytest

from surpscale.errors import (
    DegenerateDataError,
    InvalidComparisonError,
    InvalidInputError,
    NotConvergedError,
    NumericalError,
    RankError,
)
from surpscale.lme import (
    LmeFit,
    LmeSpec,
    RandomTerm,
    build_design,
    delta_llh,
    fit_ml,
    fixed_corr,
    loglik_per_datapoint,
    lrt,
    profile_at,
)

from oracles import dense_marginal_llh, gls_estimates, make_grouped_data, ols_llh


class TestBuildDesign:
    def test_intercept_only(self):
        dm = build_design({"rt": np.array([1.0, 2.0, 3.0])}, LmeSpec())
        assert dm.X.shape == (3, 1)
        np.testing.assert_array_equal(dm.X, np.ones((3, 1)))
        assert dm.fixed_names == ("(Intercept)",)

    def test_interaction_expansion(self):
        data = {
            "rt": np.array([1.0, 2.0, 3.0, 4.0]),
            "freq": np.array([1.0, 2.0, 3.0, 4.0]),
            "length": np.array([2.0, 2.0, 1.0, 5.0]),
        }
        dm = build_design(data, LmeSpec(fixed=("freq*length",)))
        assert dm.fixed_names == ("(Intercept)", "freq", "length", "freq:length")
        np.testing.assert_allclose(dm.X[:, 3], data["freq"] * data["length"])

    def test_indicator_structure(self):
        data = {"rt": np.array([1.0, 2.0, 3.0]), "subj": np.array(["a", "a", "b"])}
        dm = build_design(data, LmeSpec(random=(RandomTerm("subj"),)))
        np.testing.assert_array_equal(
            np.asarray(dm.Z.todense()), [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
        )

    def test_slope_term_columns(self):
        data = {
            "rt": np.array([1.0, 2.0, 3.0]),
            "s": np.array([0.5, 1.5, 2.5]),
            "subj": np.array(["a", "b", "a"]),
        }
        dm = build_design(data, LmeSpec(random=(RandomTerm("subj", slope="s"),)))
        Z = np.asarray(dm.Z.todense())
        np.testing.assert_allclose(
            Z, [[1.0, 0.5, 0.0, 0.0], [0.0, 0.0, 1.0, 1.5], [1.0, 2.5, 0.0, 0.0]]
        )
        assert dm.n_theta == 3

    def test_missing_column(self):
        with pytest.raises(InvalidInputError, match="missing"):
            build_design({"rt": np.array([1.0])}, LmeSpec(fixed=("nope",)))

    def test_non_numeric_predictor(self):
        data = {"rt": np.array([1.0, 2.0]), "bad": np.array(["x", "y"])}
        with pytest.raises(InvalidInputError, match="not numeric"):
            build_design(data, LmeSpec(fixed=("bad",)))

    def test_empty_data(self):
        with pytest.raises(InvalidInputError, match="empty"):
            build_design({"rt": np.array([])}, LmeSpec())

    def test_rank_deficiency_detected(self):
        data = {
            "rt": np.array([1.0, 2.0, 3.0, 4.0]),
            "a": np.array([1.0, 2.0, 3.0, 4.0]),
            "b": np.array([2.0, 4.0, 6.0, 8.0]),
        }
        with pytest.raises(RankError):
            build_design(data, LmeSpec(fixed=("a", "b")))
        dm = build_design(data, LmeSpec(fixed=("a", "b")), check_rank=False)
        assert dm.p == 3

    def test_duplicate_groups_rejected(self):
        with pytest.raises(InvalidInputError, match="distinct"):
            LmeSpec(random=(RandomTerm("g"), RandomTerm("g", slope="x")))


SPEC_TWO_INTERCEPTS = LmeSpec(
    fixed=("x1", "x2"),
    random=(RandomTerm("article"), RandomTerm("subj_id")),
)


class TestFitMl:
    def test_zero_variance_groups_match_ols(self):
        rng = np.random.default_rng(21)
        data = make_grouped_data(rng, n=80, tau_article=0.0, tau_subject=0.0, sigma=6.0)
        dm = build_design(data, SPEC_TWO_INTERCEPTS)
        fit = fit_ml(dm)
        assert fit.converged
        assert fit.llh == pytest.approx(ols_llh(dm.X, dm.y), abs=1e-6)

    def test_fitted_llh_beats_generating_parameters(self):
        rng = np.random.default_rng(22)
        data = make_grouped_data(rng, n=20, n_articles=3, n_subjects=2,
                                 tau_article=5.0, tau_subject=0.0, sigma=8.0)
        spec = LmeSpec(fixed=("x1",), random=(RandomTerm("article"),))
        dm = build_design(data, spec)
        fit = fit_ml(dm)
        true_theta = np.array([5.0 / 8.0])
        at_truth = dense_marginal_llh(dm, [250.0, 3.0], true_theta, 64.0)
        assert fit.llh >= at_truth - 1e-9

    def test_toy_llh_matches_dense_oracle(self):
        rng = np.random.default_rng(23)
        data = make_grouped_data(rng, n=50, n_articles=4, n_subjects=3)
        dm = build_design(data, SPEC_TWO_INTERCEPTS)
        fit = fit_ml(dm)
        oracle = dense_marginal_llh(dm, fit.beta, fit.theta, fit.sigma2)
        assert fit.llh == pytest.approx(oracle, abs=1e-6)

    def test_random_slope_llh_matches_dense_oracle(self):
        rng = np.random.default_rng(24)
        data = make_grouped_data(rng, n=150, n_subjects=6, slope_tau=2.0)
        spec = LmeSpec(
            fixed=("x1", "x2"),
            random=(RandomTerm("article"), RandomTerm("subj_id", slope="x1")),
        )
        dm = build_design(data, spec)
        fit = fit_ml(dm)
        oracle = dense_marginal_llh(dm, fit.beta, fit.theta, fit.sigma2)
        assert fit.llh == pytest.approx(oracle, abs=1e-6)

    def test_singular_design_raises(self):
        data = {
            "rt": np.array([1.0, 2.0, 3.0, 4.0, 5.0]),
            "a": np.array([1.0, 2.0, 3.0, 4.0, 5.0]),
            "b": np.array([2.0, 4.0, 6.0, 8.0, 10.0]),
        }
        dm = build_design(data, LmeSpec(fixed=("a", "b")), check_rank=False)
        with pytest.raises(RankError):
            fit_ml(dm)

    def test_constant_response_raises(self):
        data = {"rt": np.full(10, 7.0), "g": np.array(list("ababababab"))}
        dm = build_design(data, LmeSpec(random=(RandomTerm("g"),)))
        with pytest.raises(DegenerateDataError):
            fit_ml(dm)

    def test_too_few_observations(self):
        data = {"rt": np.array([1.0, 2.0]), "g": np.array(["a", "b"])}
        dm = build_design(data, LmeSpec(random=(RandomTerm("g"),)))
        with pytest.raises(InvalidInputError, match="n > p"):
            fit_ml(dm)

    def test_no_random_terms_is_plain_ols(self):
        rng = np.random.default_rng(25)
        x = rng.normal(size=40)
        y = 2.0 + 0.5 * x + rng.normal(0, 0.3, size=40)
        dm = build_design({"rt": y, "x": x}, LmeSpec(fixed=("x",)))
        fit = fit_ml(dm)
        assert fit.converged
        assert fit.llh == pytest.approx(ols_llh(dm.X, dm.y), abs=1e-9)


class TestProfileConsistency:
    def test_inner_solve_matches_gls(self):
        rng = np.random.default_rng(26)
        data = make_grouped_data(rng, n=60)
        dm = build_design(data, SPEC_TWO_INTERCEPTS)
        for theta in ([0.5, 1.5], [1.0, 0.1], [2.0, 2.0]):
            sol = profile_at(dm, theta)
            beta_gls, sigma2_gls = gls_estimates(dm, theta)
            np.testing.assert_allclose(sol.beta, beta_gls, atol=1e-8)
            assert sol.sigma2 == pytest.approx(sigma2_gls, abs=1e-8)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(27)
        data = make_grouped_data(rng, n=90)
        dm = build_design(data, SPEC_TWO_INTERCEPTS)
        fit = fit_ml(dm)
        perm = rng.permutation(90)
        shuffled = {k: np.asarray(v)[perm] for k, v in data.items()}
        fit_p = fit_ml(build_design(shuffled, SPEC_TWO_INTERCEPTS))
        assert fit_p.llh == pytest.approx(fit.llh, abs=1e-9)

    def test_response_scaling_shifts_llh(self):
        rng = np.random.default_rng(28)
        data = make_grouped_data(rng, n=100)
        dm = build_design(data, SPEC_TWO_INTERCEPTS)
        fit = fit_ml(dm)
        c = 3.7
        scaled = dict(data)
        scaled["rt"] = np.asarray(data["rt"]) * c
        fit_c = fit_ml(build_design(scaled, SPEC_TWO_INTERCEPTS))
        assert fit_c.llh - fit.llh == pytest.approx(-dm.n * math.log(c), abs=1e-6)

    def test_response_scaling_leaves_delta_llh_unchanged(self):
        rng = np.random.default_rng(37)
        data = make_grouped_data(rng, n=120)
        base_spec = LmeSpec(fixed=("x1",), random=(RandomTerm("subj_id"),))
        tgt_spec = LmeSpec(fixed=("x1", "x2"), random=(RandomTerm("subj_id"),))
        delta = delta_llh(
            fit_ml(build_design(data, tgt_spec)), fit_ml(build_design(data, base_spec))
        )
        scaled = dict(data)
        scaled["rt"] = np.asarray(data["rt"]) * 5.25
        delta_c = delta_llh(
            fit_ml(build_design(scaled, tgt_spec)), fit_ml(build_design(scaled, base_spec))
        )
        assert delta_c == pytest.approx(delta, abs=1e-9)


class TestLoglikPerDatapoint:
    def test_simple_division(self):
        fit = _fabricate_fit(llh=-100.0, n=50)
        assert loglik_per_datapoint(fit) == -2.0

    def test_requires_convergence(self):
        fit = _fabricate_fit(llh=-100.0, n=50, converged=False)
        with pytest.raises(NotConvergedError):
            loglik_per_datapoint(fit)

    def test_matches_oracle_on_toy(self):
        rng = np.random.default_rng(29)
        data = make_grouped_data(rng, n=40, n_articles=3, n_subjects=3)
        dm = build_design(data, SPEC_TWO_INTERCEPTS)
        fit = fit_ml(dm)
        oracle = dense_marginal_llh(dm, fit.beta, fit.theta, fit.sigma2)
        assert loglik_per_datapoint(fit) == pytest.approx(oracle / dm.n, abs=1e-6)


class TestDeltaLlh:
    def test_identical_fits_give_zero(self):
        rng = np.random.default_rng(30)
        data = make_grouped_data(rng, n=60)
        fit = fit_ml(build_design(data, SPEC_TWO_INTERCEPTS))
        assert delta_llh(fit, fit) == 0.0

    def test_informative_predictor_improves_llh(self):
        rng = np.random.default_rng(31)
        n = 200
        surp = rng.uniform(1.0, 12.0, size=n)
        subj = np.array([f"s{i % 5}" for i in range(n)])
        rt = 200.0 + 2.0 * surp + rng.normal(0, 3.0, size=n)
        data = {"rt": rt, "surprisal": surp, "subj_id": subj}
        base = fit_ml(build_design(data, LmeSpec(random=(RandomTerm("subj_id"),))))
        target = fit_ml(
            build_design(data, LmeSpec(fixed=("surprisal",), random=(RandomTerm("subj_id"),)))
        )
        assert delta_llh(target, base) > 0

    def test_nested_fits_never_lose(self):
        rng = np.random.default_rng(32)
        for _ in range(10):
            data = make_grouped_data(rng, n=rng.integers(60, 140))
            base_spec = LmeSpec(fixed=("x1",), random=(RandomTerm("subj_id"),))
            tgt_spec = LmeSpec(fixed=("x1", "x2"), random=(RandomTerm("subj_id"),))
            base = fit_ml(build_design(data, base_spec))
            target = fit_ml(build_design(data, tgt_spec))
            assert delta_llh(target, base) >= -1e-6 / base.n

    def test_mismatched_n_rejected(self):
        rng = np.random.default_rng(33)
        d1 = make_grouped_data(rng, n=60)
        d2 = make_grouped_data(rng, n=61)
        f1 = fit_ml(build_design(d1, SPEC_TWO_INTERCEPTS))
        f2 = fit_ml(build_design(d2, SPEC_TWO_INTERCEPTS))
        with pytest.raises(InvalidComparisonError):
            delta_llh(f1, f2)


def _fabricate_fit(llh, n, converged=True):
    return LmeFit(
        beta=np.zeros(1),
        theta=np.zeros(1),
        sigma2=1.0,
        llh=llh,
        converged=converged,
        fitted=np.zeros(n),
        residuals=np.zeros(n),
        vcov_beta=np.eye(1),
        n=n,
        fixed_names=("(Intercept)",),
    )


class TestLrt:
    def test_zero_statistic(self):
        base = _fabricate_fit(-500.0, 100)
        res = lrt(base, base, df=3)
        assert res.chi2 == 0.0 and res.p_value == 1.0

    def test_chi2_table_value(self):
        base = _fabricate_fit(-500.0, 100)
        target = _fabricate_fit(-500.0 + 16.27 / 2.0, 100)
        res = lrt(target, base, df=3)
        assert 0.0009 <= res.p_value <= 0.0011

    def test_single_df_identity(self):
        base = _fabricate_fit(-500.0, 100)
        res = lrt(base, base, df=1)
        assert res.chi2 == 0.0 and res.p_value == 1.0

    def test_real_nested_pair_significant(self):
        rng = np.random.default_rng(34)
        n = 300
        surp = rng.uniform(1.0, 12.0, size=n)
        subj = np.array([f"s{i % 6}" for i in range(n)])
        rt = 200.0 + 3.0 * surp + rng.normal(0, 5.0, size=n)
        data = {"rt": rt, "surprisal": surp, "subj_id": subj}
        base = fit_ml(build_design(data, LmeSpec(random=(RandomTerm("subj_id"),))))
        target = fit_ml(
            build_design(data, LmeSpec(fixed=("surprisal",), random=(RandomTerm("subj_id"),)))
        )
        assert lrt(target, base, df=1).p_value < 0.001


class TestFixedCorr:
    def test_orthonormal_design_gives_identity(self):
        rng = np.random.default_rng(35)
        raw = rng.normal(size=(60, 3))
        Q, _ = np.linalg.qr(raw)
        y = Q @ np.array([1.0, -2.0, 0.5]) + rng.normal(0, 0.1, size=60)
        data = {"rt": y, "c0": Q[:, 0], "c1": Q[:, 1], "c2": Q[:, 2]}
        spec = LmeSpec(fixed=("c0", "c1", "c2"), include_intercept=False)
        fit = fit_ml(build_design(data, spec))
        np.testing.assert_allclose(fixed_corr(fit), np.eye(3), atol=1e-9)

    def test_matches_oracle_covariance(self):
        rng = np.random.default_rng(36)
        data = make_grouped_data(rng, n=80)
        dm = build_design(data, SPEC_TWO_INTERCEPTS)
        fit = fit_ml(dm)
        # oracle: dense GLS covariance sigma^2 (X' V^-1 X)^-1
        from oracles import relative_covariance

        Z = np.asarray(dm.Z.todense())
        G = relative_covariance(dm, fit.theta)
        V0 = Z @ G @ Z.T + np.eye(dm.n)
        vcov = fit.sigma2 * np.linalg.inv(dm.X.T @ np.linalg.solve(V0, dm.X))
        d = np.sqrt(np.diag(vcov))
        expected = vcov / np.outer(d, d)
        np.testing.assert_allclose(fixed_corr(fit), expected, atol=1e-6)

    def test_non_pd_vcov_raises(self):
        fit = _fabricate_fit(-10.0, 20)
        bad = LmeFit(
            beta=np.zeros(2),
            theta=np.zeros(1),
            sigma2=1.0,
            llh=-10.0,
            converged=True,
            fitted=np.zeros(20),
            residuals=np.zeros(20),
            vcov_beta=np.array([[1.0, 2.0], [2.0, 1.0]]),
            n=20,
            fixed_names=("a", "b"),
        )
        with pytest.raises(NumericalError, match="condition number"):
            fixed_corr(bad)
