"""Linear mixed-effects regression by profiled maximum likelihood.

The marginal model is ``y ~ N(X beta, sigma^2 (Z Lambda Lambda' Z' + I))``
where ``Lambda`` is a block-diagonal relative-covariance factor built from
the variance parameters ``theta``. For a fixed ``theta`` the penalized
least-squares problem is solved exactly by Cholesky block elimination
(Bates et al., 2015); the outer optimization over ``theta`` is a
derivative-free simplex with a zero lower bound on diagonal entries.

ML (not REML) throughout, so log-likelihoods of models that differ in their
fixed effects are directly comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.stats import chi2 as chi2_dist

from .errors import (
    DegenerateDataError,
    InvalidComparisonError,
    InvalidInputError,
    NotConvergedError,
    NumericalError,
    RankError,
)

MAX_OUTER_ITERATIONS = 500
RELATIVE_DEVIANCE_TOL = 1e-10


@dataclass(frozen=True)
class RandomTerm:
    """One random-effects term: ``(1|group)``, ``(0+slope|group)`` or the
    correlated intercept-plus-slope form ``(slope|group)``."""

    group: str
    intercept: bool = True
    slope: str | None = None

    def __post_init__(self):
        if not self.intercept and self.slope is None:
            raise InvalidInputError("random term needs an intercept or a slope")

    @property
    def n_cols(self) -> int:
        return int(self.intercept) + int(self.slope is not None)

    @property
    def n_theta(self) -> int:
        return 3 if self.n_cols == 2 else 1


@dataclass(frozen=True)
class LmeSpec:
    """Model definition: ordered fixed terms (``a*b`` expands to a, b and an
    ``a:b`` product column placed after all main effects), random terms, and
    an intercept flag."""

    fixed: tuple[str, ...] = ()
    random: tuple[RandomTerm, ...] = ()
    include_intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "fixed", tuple(self.fixed))
        object.__setattr__(self, "random", tuple(self.random))
        if not self.fixed and not self.include_intercept:
            raise InvalidInputError("model needs at least one fixed term or an intercept")
        groups = [t.group for t in self.random]
        if len(groups) != len(set(groups)):
            raise InvalidInputError("grouping factors must be distinct")

    def expanded_fixed(self) -> list[str]:
        """Column names after interaction expansion: main effects in first
        appearance order, then interaction products in spec order."""
        mains: list[str] = []
        inters: list[str] = []
        for term in self.fixed:
            if "*" in term:
                a, b = (s.strip() for s in term.split("*", 1))
                for name in (a, b):
                    if name not in mains:
                        mains.append(name)
                inters.append(f"{a}:{b}")
            else:
                name = term.strip()
                if name not in mains:
                    mains.append(name)
        return mains + inters


@dataclass(frozen=True)
class TermLayout:
    group: str
    levels: tuple
    n_cols: int
    col_start: int


@dataclass
class DesignMatrix:
    n: int
    X: np.ndarray
    Z: sp.csr_matrix
    y: np.ndarray
    fixed_names: tuple[str, ...]
    terms: tuple[TermLayout, ...]
    _cross: tuple | None = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    @property
    def n_theta(self) -> int:
        return sum(3 if t.n_cols == 2 else 1 for t in self.terms)

    def cross_products(self):
        """Cached (ZtZ, ZtX, Zty, XtX, Xty, yty); everything downstream of
        the raw data runs on these."""
        if self._cross is None:
            ZtZ = np.asarray((self.Z.T @ self.Z).todense())
            ZtX = np.asarray(self.Z.T @ self.X)
            Zty = np.asarray(self.Z.T @ self.y)
            XtX = self.X.T @ self.X
            Xty = self.X.T @ self.y
            yty = float(self.y @ self.y)
            self._cross = (ZtZ, ZtX, Zty, XtX, Xty, yty)
        return self._cross


def _column(data: Mapping, name: str, n: int | None) -> np.ndarray:
    if name not in data:
        raise InvalidInputError(f"column {name!r} missing from data")
    col = np.asarray(data[name])
    if n is not None and col.shape != (n,):
        raise InvalidInputError(f"column {name!r} has shape {col.shape}, expected ({n},)")
    return col


def _numeric_column(data: Mapping, name: str, n: int) -> np.ndarray:
    col = _column(data, name, n)
    if not np.issubdtype(col.dtype, np.number):
        raise InvalidInputError(f"predictor {name!r} is not numeric")
    col = col.astype(np.float64)
    if not np.isfinite(col).all():
        raise InvalidInputError(f"predictor {name!r} contains missing or non-finite values")
    return col


def build_design(data: Mapping, spec: LmeSpec, response: str = "rt",
                 check_rank: bool = True) -> DesignMatrix:
    """Realize a model spec against a column table.

    Column order is deterministic: intercept, main effects in spec order,
    interaction products last. ``Z`` holds one block per random term with
    per-level columns (intercept column first, then the slope column).
    """
    y = _column(data, response, None)
    n = y.shape[0]
    if n == 0:
        raise InvalidInputError("empty data")
    y = _numeric_column(data, response, n)

    names: list[str] = []
    cols: list[np.ndarray] = []
    if spec.include_intercept:
        names.append("(Intercept)")
        cols.append(np.ones(n))
    for name in spec.expanded_fixed():
        if ":" in name:
            a, b = name.split(":", 1)
            cols.append(_numeric_column(data, a, n) * _numeric_column(data, b, n))
        else:
            cols.append(_numeric_column(data, name, n))
        names.append(name)
    if not cols:
        raise InvalidInputError("design has no fixed-effect columns")
    X = np.column_stack(cols)

    if check_rank and np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankError(
            f"fixed-effects design is rank deficient ({X.shape[1]} columns, "
            f"rank {np.linalg.matrix_rank(X)})"
        )

    layouts: list[TermLayout] = []
    rows: list[np.ndarray] = []
    cols_idx: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    col_start = 0
    for term in spec.random:
        labels = _column(data, term.group, n)
        levels, inverse = np.unique(labels, return_inverse=True)
        n_cols = term.n_cols
        base = col_start + inverse * n_cols
        offset = 0
        if term.intercept:
            rows.append(np.arange(n))
            cols_idx.append(base + offset)
            vals.append(np.ones(n))
            offset += 1
        if term.slope is not None:
            rows.append(np.arange(n))
            cols_idx.append(base + offset)
            vals.append(_numeric_column(data, term.slope, n))
        layouts.append(TermLayout(term.group, tuple(levels.tolist()), n_cols, col_start))
        col_start += n_cols * levels.shape[0]

    if rows:
        Z = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols_idx))),
            shape=(n, col_start),
        )
    else:
        Z = sp.csr_matrix((n, 0))

    return DesignMatrix(n=n, X=X, Z=Z, y=y, fixed_names=tuple(names), terms=tuple(layouts))


def _lambda_matrix(dm: DesignMatrix, theta: np.ndarray) -> np.ndarray:
    """Block-diagonal relative Cholesky factor: scalar terms contribute
    ``lambda I``; intercept+slope terms a lower-triangular 2x2 per level."""
    q = dm.q
    lam = np.zeros((q, q))
    t = 0
    for term in dm.terms:
        n_lev = len(term.levels)
        start = term.col_start
        if term.n_cols == 1:
            idx = np.arange(start, start + n_lev)
            lam[idx, idx] = theta[t]
            t += 1
        else:
            l00, l10, l11 = theta[t : t + 3]
            ii = start + 2 * np.arange(n_lev)
            lam[ii, ii] = l00
            lam[ii + 1, ii] = l10
            lam[ii + 1, ii + 1] = l11
            t += 3
    return lam


@dataclass(frozen=True)
class ProfiledSolution:
    """Exact inner solution at a fixed ``theta``."""

    theta: np.ndarray
    beta: np.ndarray
    u: np.ndarray
    sigma2: float
    deviance: float
    llh: float
    fitted: np.ndarray
    vcov_beta: np.ndarray


def _deviance_parts(dm: DesignMatrix, theta: np.ndarray):
    ZtZ, ZtX, Zty, XtX, Xty, yty = dm.cross_products()
    n, q = dm.n, dm.q
    if q:
        lam = _lambda_matrix(dm, theta)
        A = lam.T @ ZtZ @ lam + np.eye(q)
        Lz = cholesky(A, lower=True)
        RZX = solve_triangular(Lz, lam.T @ ZtX, lower=True)
        cz = solve_triangular(Lz, lam.T @ Zty, lower=True)
        logdet = 2.0 * float(np.log(np.diag(Lz)).sum())
        S = XtX - RZX.T @ RZX
        rhs_x = Xty - RZX.T @ cz
    else:
        lam = np.zeros((0, 0))
        Lz = np.zeros((0, 0))
        RZX = np.zeros((0, dm.p))
        cz = np.zeros(0)
        logdet = 0.0
        S = XtX
        rhs_x = Xty
    try:
        Lx = cholesky(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise RankError("fixed-effects normal equations are singular") from exc
    cx = solve_triangular(Lx, rhs_x, lower=True)
    r2 = yty - float(cz @ cz) - float(cx @ cx)
    return lam, Lz, RZX, cz, Lx, cx, r2, logdet


def profile_at(dm: DesignMatrix, theta: Sequence[float]) -> ProfiledSolution:
    """Solve the penalized least-squares problem exactly at ``theta`` and
    return the profiled ML estimates."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (dm.n_theta,):
        raise InvalidInputError(f"theta has shape {theta.shape}, expected ({dm.n_theta},)")
    lam, Lz, RZX, cz, Lx, cx, r2, logdet = _deviance_parts(dm, theta)
    n = dm.n
    if r2 <= 0:
        raise DegenerateDataError("residual sum of squares is not positive")
    beta = solve_triangular(Lx.T, cx, lower=False)
    if dm.q:
        u = solve_triangular(Lz.T, cz - RZX @ beta, lower=False)
        fitted = dm.X @ beta + dm.Z @ (lam @ u)
    else:
        u = np.zeros(0)
        fitted = dm.X @ beta
    sigma2 = r2 / n
    deviance = logdet + n * (1.0 + math.log(2.0 * math.pi * r2 / n))
    vcov = sigma2 * cho_solve((Lx, True), np.eye(dm.p))
    return ProfiledSolution(
        theta=theta,
        beta=beta,
        u=u,
        sigma2=sigma2,
        deviance=deviance,
        llh=-0.5 * deviance,
        fitted=fitted,
        vcov_beta=vcov,
    )


@dataclass(frozen=True)
class LmeFit:
    beta: np.ndarray
    theta: np.ndarray
    sigma2: float
    llh: float
    converged: bool
    fitted: np.ndarray
    residuals: np.ndarray
    vcov_beta: np.ndarray
    n: int
    fixed_names: tuple[str, ...]

    @property
    def response(self) -> np.ndarray:
        return self.fitted + self.residuals


def _theta_start_and_bounds(dm: DesignMatrix):
    start: list[float] = []
    bounds: list[tuple] = []
    for term in dm.terms:
        if term.n_cols == 1:
            start.append(1.0)
            bounds.append((0.0, None))
        else:
            start.extend([1.0, 0.0, 1.0])
            bounds.extend([(0.0, None), (None, None), (0.0, None)])
    return np.asarray(start), bounds


def fit_ml(dm: DesignMatrix) -> LmeFit:
    """Maximize the marginal ML likelihood over (beta, theta, sigma^2).

    The inner (beta, sigma^2) profile is exact for every ``theta``; the
    outer simplex stops when the relative deviance change falls below
    1e-10 or after 500 iterations, whichever is first. A fit that exhausts
    the iteration budget is returned with ``converged=False``.
    """
    if np.ptp(dm.y) == 0.0:
        raise DegenerateDataError("response has zero variance")
    if dm.n <= dm.p + dm.n_theta:
        raise InvalidInputError(
            f"need n > p + n_theta ({dm.n} observations, {dm.p} fixed effects, "
            f"{dm.n_theta} variance parameters)"
        )

    if dm.n_theta == 0:
        sol = profile_at(dm, np.zeros(0))
        converged = True
    else:
        theta0, bounds = _theta_start_and_bounds(dm)

        def objective(theta):
            try:
                *_, r2, logdet = _deviance_parts(dm, theta)
            except (RankError, DegenerateDataError):
                return math.inf
            if r2 <= 0:
                return math.inf
            return logdet + dm.n * (1.0 + math.log(2.0 * math.pi * r2 / dm.n))

        dev0 = objective(theta0)
        fatol = min(max(RELATIVE_DEVIANCE_TOL * max(1.0, abs(dev0)), 1e-12), 1e-8)
        res = minimize(
            objective,
            theta0,
            method="Nelder-Mead",
            bounds=bounds,
            options={
                "maxiter": MAX_OUTER_ITERATIONS,
                "maxfev": 50 * MAX_OUTER_ITERATIONS,
                "fatol": fatol,
                "xatol": 1e-8,
            },
        )
        sol = profile_at(dm, res.x)
        converged = bool(res.success) and math.isfinite(sol.llh)

    return LmeFit(
        beta=sol.beta,
        theta=sol.theta,
        sigma2=sol.sigma2,
        llh=sol.llh,
        converged=converged,
        fitted=sol.fitted,
        residuals=dm.y - sol.fitted,
        vcov_beta=sol.vcov_beta,
        n=dm.n,
        fixed_names=dm.fixed_names,
    )


def loglik_per_datapoint(fit: LmeFit) -> float:
    if not fit.converged:
        raise NotConvergedError("log-likelihood unavailable: fit did not converge")
    return fit.llh / fit.n


def _check_comparable(target: LmeFit, base: LmeFit) -> None:
    if not (target.converged and base.converged):
        raise NotConvergedError("both fits must have converged")
    if target.n != base.n:
        raise InvalidComparisonError(f"fits disagree on n: {target.n} vs {base.n}")
    if not np.array_equal(target.response, base.response):
        raise InvalidComparisonError("fits were estimated on different responses")


def delta_llh(target: LmeFit, base: LmeFit) -> float:
    """Per-datapoint log-likelihood difference (target minus base).

    Reporting layers conventionally multiply this by 1000.
    """
    _check_comparable(target, base)
    return (target.llh - base.llh) / target.n


@dataclass(frozen=True)
class LrtResult:
    chi2: float
    df: int
    p_value: float


def lrt(target: LmeFit, base: LmeFit, df: int) -> LrtResult:
    """Likelihood-ratio test of nested ML fits; ``df`` is the number of
    fixed effects added by the target."""
    _check_comparable(target, base)
    if df < 1:
        raise InvalidInputError("df must be >= 1")
    stat = 2.0 * (target.llh - base.llh)
    if stat < -1e-6:
        raise InvalidComparisonError(
            f"negative LRT statistic {stat:.3g}: models are not nested or not converged"
        )
    stat = max(stat, 0.0)
    return LrtResult(chi2=stat, df=df, p_value=float(chi2_dist.sf(stat, df)))


def fixed_corr(fit: LmeFit) -> np.ndarray:
    """Correlation matrix of the fixed-effect estimates."""
    if not fit.converged:
        raise NotConvergedError("correlation matrix unavailable: fit did not converge")
    vcov = fit.vcov_beta
    try:
        cholesky(vcov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "vcov(beta) is not positive definite "
            f"(condition number {np.linalg.cond(vcov):.3g})"
        ) from exc
    d = np.sqrt(np.diag(vcov))
    corr = vcov / np.outer(d, d)
    np.fill_diagonal(corr, 1.0)
    return corr
