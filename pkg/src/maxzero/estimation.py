"""Least-squares fitting of marginal, restricted, and full models.

Marginal fits regress y on the nuisance block plus one test column at a
time. The linear path solves the normal equations exactly; nonlinear
responses go through damped Gauss-Newton. Standard errors come from the
sandwich H^{-1} S H^{-1} (robust) or sigma^2 H^{-1} (homoskedastic).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .model import Dataset, LinearResponse, ParsimoniousParam, ResponseModel
from .numerics import NonPositiveDefinite, SpdMatrix, cholesky_guarded, solve_spd

__all__ = [
    "NoConvergence",
    "InsufficientSample",
    "ParsimoniousFit",
    "RestrictedFit",
    "FullFit",
    "fit_parsimonious",
    "fit_all_parsimonious",
    "fit_restricted",
    "fit_full",
    "sandwich_se",
    "expansion_diagnostic",
    "population_parsimonious",
]

SE_FLAVORS = ("robust", "homoskedastic")

GN_STEP_TOL = 1e-10
GN_MAX_ITER = 200
GN_MAX_HALVINGS = 30
GN_DIVERGENCE_BOUND = 1e8


class NoConvergence(Exception):
    """Iterative fit failed to converge (nonlinear path only)."""


class InsufficientSample(Exception):
    """Not enough observations for the requested fit."""


@dataclass
class ParsimoniousFit:
    """One marginal fit: coefficients, residuals, and the test-scalar se."""

    index: int
    beta: ParsimoniousParam
    residuals: np.ndarray
    se_theta: float
    hessian: SpdMatrix  # (1/n) sum of gradient outer products
    gradient_at_fit_norm: float
    data: Dataset = field(repr=False)
    gradients: np.ndarray | None = field(default=None, repr=False)  # stored for nonlinear fits

    @property
    def theta_hat(self) -> float:
        return self.beta.theta_i


@dataclass
class RestrictedFit:
    """Least squares with the whole test block pinned at zero."""

    delta0_hat: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray


class FullFit:
    """Unrestricted least squares on the nuisance block plus k_used test columns.

    ``covariance`` is the covariance of sqrt(n)(beta_hat - beta) under the
    chosen flavor; it is computed on first access since bootstrap loops
    never need it.
    """

    def __init__(
        self,
        beta: np.ndarray,
        residuals: np.ndarray,
        k_delta: int,
        k_used: int,
        flavor: str,
        gram: SpdMatrix,
        design: np.ndarray,
    ) -> None:
        self.beta = beta
        self.residuals = residuals
        self.k_delta = k_delta
        self.k_used = k_used
        self.flavor = flavor
        self.gram = gram
        self.design = design
        self._covariance: SpdMatrix | None = None

    @property
    def covariance(self) -> SpdMatrix:
        if self._covariance is None:
            n = self.design.shape[0]
            p = self.design.shape[1]
            gram_inv = self.gram.inverse()
            if self.flavor == "homoskedastic":
                sigma2 = float(self.residuals @ self.residuals) / (n - p)
                cov = sigma2 * n * gram_inv
            else:
                meat = (self.design * self.residuals[:, None] ** 2).T @ self.design / n
                bread = n * gram_inv
                cov = bread @ (meat @ bread)
            self._covariance = SpdMatrix(0.5 * (cov + cov.T))
        return self._covariance


class _LinearWorkspace:
    """Shared precomputation for marginal linear fits on a fixed design.

    Holds the nuisance Gram factor, the residualized test columns
    (x_tilde = x_i minus its projection on the nuisance block), and the
    cross-moment blocks from which every per-index normal system is
    assembled. The bootstrap reuses this across multiplier draws.
    """

    def __init__(self, data: Dataset, k_used: int) -> None:
        if not 1 <= k_used <= data.k_theta:
            raise ValueError(f"k_used must be in 1..{data.k_theta}")
        self.data = data
        self.k_used = k_used
        xd = data.x_delta
        xt = data.x_theta[:, :k_used]
        self.xd = xd
        self.xt = xt
        self.n = data.n
        self.kd = data.k_delta
        self.g_dd = xd.T @ xd
        self.g_dt = xd.T @ xt
        if self.kd > 0:
            self._chol_dd = cholesky_guarded(self.g_dd)
            from scipy.linalg import cho_solve

            coef = cho_solve((self._chol_dd, True), self.g_dt)
            self.x_tilde = xt - xd @ coef
        else:
            self._chol_dd = np.zeros((0, 0))
            self.x_tilde = xt
        self.ssq_tilde = np.einsum("ti,ti->i", self.x_tilde, self.x_tilde)
        if np.any(self.ssq_tilde <= 0):
            raise NonPositiveDefinite("a test column is collinear with the nuisance block")
        self.diag_tt = np.einsum("ti,ti->i", xt, xt)

    def normal_matrix(self, i: int) -> np.ndarray:
        """Assembled (k_delta+1) normal-equation matrix for 1-based index i."""
        kd = self.kd
        h = np.empty((kd + 1, kd + 1))
        h[:kd, :kd] = self.g_dd
        h[:kd, kd] = self.g_dt[:, i - 1]
        h[kd, :kd] = self.g_dt[:, i - 1]
        h[kd, kd] = self.diag_tt[i - 1]
        return h

    def solve_index(self, i: int, rhs: np.ndarray) -> np.ndarray:
        return solve_spd(SpdMatrix(self.normal_matrix(i)), rhs)

    def project_out_nuisance(self, y: np.ndarray) -> np.ndarray:
        """Residual of y (vector or n x m matrix) on the nuisance block."""
        if self.kd == 0:
            return np.asarray(y, dtype=float)
        from scipy.linalg import cho_solve

        return y - self.xd @ cho_solve((self._chol_dd, True), self.xd.T @ y)

    def theta_for_responses(self, y_mat: np.ndarray) -> np.ndarray:
        """Marginal test coefficients for every column of ``y_mat``.

        Returns a ``k_used x m`` array; equals the normal-equation solution
        for theta by the partitioned-regression identity.
        """
        return (self.x_tilde.T @ y_mat) / self.ssq_tilde[:, None]

    def se_for_columns(self, resid: np.ndarray, flavor: str) -> np.ndarray:
        """Test-scalar standard errors given per-index residual columns.

        ``resid`` is ``n x k_used`` with column i the residuals of marginal
        fit i. Partitioned-regression form of the sandwich: the robust
        variance is sum(e^2 xt~^2) / (sum xt~^2)^2, the homoskedastic one
        is (SSE / (n - k_delta - 1)) / sum xt~^2.
        """
        if flavor not in SE_FLAVORS:
            raise ValueError(f"unknown se flavor {flavor!r}")
        ssq = self.ssq_tilde
        if flavor == "robust":
            var = np.einsum("ti,ti->i", resid**2, self.x_tilde**2) / ssq**2
        else:
            dof = self.n - self.kd - 1
            if dof < 1:
                raise InsufficientSample("no residual degrees of freedom for homoskedastic se")
            sse = np.einsum("ti,ti->i", resid, resid)
            var = (sse / dof) / ssq
        return np.sqrt(var)


def _fit_linear_batch(
    data: Dataset, k_used: int, flavor: str, ws: _LinearWorkspace | None = None
) -> list[ParsimoniousFit]:
    if ws is None:
        ws = _LinearWorkspace(data, k_used)
    y = data.y
    rhs_d = ws.xd.T @ y
    rhs_t = ws.xt.T @ y
    n = data.n
    betas = np.empty((k_used, ws.kd + 1))
    for i in range(1, k_used + 1):
        rhs = np.concatenate([rhs_d, [rhs_t[i - 1]]])
        betas[i - 1] = ws.solve_index(i, rhs)
    resid = y[:, None] - ws.xd @ betas[:, : ws.kd].T - ws.xt * betas[:, ws.kd]
    # First-order condition: normal-equation residual of each fit.
    foc_t = np.abs(np.einsum("ti,ti->i", ws.xt, resid))
    foc = foc_t
    if ws.kd:
        foc = np.maximum(foc_t, np.max(np.abs(ws.xd.T @ resid), axis=0))
    ses = ws.se_for_columns(resid, flavor)
    fits: list[ParsimoniousFit] = []
    for i in range(1, k_used + 1):
        fits.append(
            ParsimoniousFit(
                index=i,
                beta=ParsimoniousParam(
                    delta=betas[i - 1, : ws.kd], theta_i=float(betas[i - 1, ws.kd]), index=i
                ),
                residuals=resid[:, i - 1],
                se_theta=float(ses[i - 1]),
                hessian=SpdMatrix(ws.normal_matrix(i) / n),
                gradient_at_fit_norm=float(foc[i - 1]),
                data=data,
            )
        )
    return fits


def _gauss_newton(
    y: np.ndarray,
    predict: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    beta0: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Damped Gauss-Newton; returns (beta, residuals, Jacobian at optimum)."""
    beta = np.asarray(beta0, dtype=float).copy()
    resid = y - predict(beta)
    sse = float(resid @ resid)
    for _ in range(GN_MAX_ITER):
        jac = jacobian(beta)
        step = solve_spd(SpdMatrix(jac.T @ jac), jac.T @ resid)
        lam = 1.0
        for _ in range(GN_MAX_HALVINGS):
            cand = beta + lam * step
            cand_resid = y - predict(cand)
            cand_sse = float(cand_resid @ cand_resid)
            if cand_sse <= sse:
                break
            lam *= 0.5
        else:
            raise NoConvergence("step halving failed to decrease the loss")
        beta, resid, sse = cand, cand_resid, cand_sse
        if beta.size and np.max(np.abs(beta)) > GN_DIVERGENCE_BOUND:
            raise NoConvergence("iterates diverged")
        if np.max(np.abs(lam * step)) < GN_STEP_TOL:
            return beta, resid, jacobian(beta)
    raise NoConvergence(f"no convergence in {GN_MAX_ITER} iterations")


def fit_parsimonious(
    data: Dataset, model: ResponseModel, index: int, flavor: str = "robust"
) -> ParsimoniousFit:
    """Fit the marginal model with test column ``index`` (1-based).

    Linear responses use the closed-form normal-equation solution;
    nonlinear responses run Gauss-Newton from the restricted fit with the
    test scalar started at zero.
    """
    if not 1 <= index <= data.k_theta:
        raise ValueError(f"index {index} out of range 1..{data.k_theta}")
    if isinstance(model, LinearResponse):
        ws = _LinearWorkspace(data, index)
        return _fit_linear_batch(data, index, flavor, ws)[index - 1]
    restricted = fit_restricted(data, model)
    beta0 = np.concatenate([restricted.delta0_hat, [0.0]])
    xt_col = data.x_theta[:, index - 1]
    beta, resid, jac = _gauss_newton(
        data.y,
        lambda b: model.predict(data.x_delta, xt_col, b),
        lambda b: model.grad_matrix(data.x_delta, xt_col, b),
        beta0,
    )
    n = data.n
    fit = ParsimoniousFit(
        index=index,
        beta=ParsimoniousParam(delta=beta[:-1], theta_i=float(beta[-1]), index=index),
        residuals=resid,
        se_theta=np.nan,
        hessian=SpdMatrix(jac.T @ jac / n),
        gradient_at_fit_norm=float(np.max(np.abs(jac.T @ resid))),
        data=data,
        gradients=jac,
    )
    fit.se_theta = sandwich_se(fit, flavor)
    return fit


def fit_all_parsimonious(
    data: Dataset, model: ResponseModel, k_used: int, flavor: str = "robust"
) -> list[ParsimoniousFit]:
    """Fit marginal models for indices 1..k_used."""
    if not 1 <= k_used <= data.k_theta:
        raise ValueError(f"k_used must be in 1..{data.k_theta}")
    if isinstance(model, LinearResponse):
        return _fit_linear_batch(data, k_used, flavor)
    return [fit_parsimonious(data, model, i, flavor) for i in range(1, k_used + 1)]


def fit_restricted(data: Dataset, model: ResponseModel) -> RestrictedFit:
    """Fit with the whole test block pinned at zero (nuisance only)."""
    y = data.y
    if data.k_delta == 0:
        return RestrictedFit(delta0_hat=np.zeros(0), residuals=y.copy(), fitted=np.zeros(data.n))
    if isinstance(model, LinearResponse):
        xd = data.x_delta
        delta = solve_spd(SpdMatrix(xd.T @ xd), xd.T @ y)
        fitted = xd @ delta
        return RestrictedFit(delta0_hat=delta, residuals=y - fitted, fitted=fitted)
    zeros = np.zeros(data.n)

    def predict(delta: np.ndarray) -> np.ndarray:
        return model.predict(data.x_delta, zeros, np.concatenate([delta, [0.0]]))

    def jacobian(delta: np.ndarray) -> np.ndarray:
        full = model.grad_matrix(data.x_delta, zeros, np.concatenate([delta, [0.0]]))
        return np.asarray(full, dtype=float)[:, : data.k_delta]

    delta, resid, _ = _gauss_newton(y, predict, jacobian, np.zeros(data.k_delta))
    return RestrictedFit(delta0_hat=delta, residuals=resid, fitted=y - resid)


def fit_full(
    data: Dataset, model: ResponseModel, k_used: int, flavor: str = "homoskedastic"
) -> FullFit:
    """Unrestricted least squares on the nuisance block plus k_used test columns.

    Only the linear response admits a joint fit over all test coefficients;
    other responses raise ``NotImplementedError``.
    """
    if not isinstance(model, LinearResponse):
        raise NotImplementedError("the joint fit is defined for the linear response only")
    if not 1 <= k_used <= data.k_theta:
        raise ValueError(f"k_used must be in 1..{data.k_theta}")
    if flavor not in SE_FLAVORS:
        raise ValueError(f"unknown se flavor {flavor!r}")
    n, kd = data.n, data.k_delta
    p = kd + k_used
    if n <= p:
        raise InsufficientSample(f"need n > k_delta + k_used (n={n}, parameters={p})")
    x = np.hstack([data.x_delta, data.x_theta[:, :k_used]])
    gram = SpdMatrix(x.T @ x)
    beta = gram.solve(x.T @ data.y)
    resid = data.y - x @ beta
    return FullFit(
        beta=beta,
        residuals=resid,
        k_delta=kd,
        k_used=k_used,
        flavor=flavor,
        gram=gram,
        design=x,
    )


def sandwich_se(fit: ParsimoniousFit | FullFit, flavor: str = "robust"):
    """Sandwich dispersion of a fit.

    For a marginal fit, returns the standard error of the test scalar.
    For a full fit, returns the covariance of sqrt(n)(beta_hat - beta)
    as an :class:`SpdMatrix`.
    """
    if flavor not in SE_FLAVORS:
        raise ValueError(f"unknown se flavor {flavor!r}")
    if isinstance(fit, FullFit):
        if fit.flavor == flavor:
            return fit.covariance
        raise ValueError("refit with the requested flavor to change a full fit's covariance")
    n = fit.residuals.shape[0]
    if fit.gradients is not None:
        g = fit.gradients
    else:
        g = np.column_stack([fit.data.x_delta, fit.data.x_theta[:, fit.index - 1]])
    h_inv = fit.hessian.inverse()
    if flavor == "robust":
        meat = (g * fit.residuals[:, None] ** 2).T @ g / n
        v = h_inv @ meat @ h_inv
    else:
        dof = n - g.shape[1]
        if dof < 1:
            raise InsufficientSample("no residual degrees of freedom for homoskedastic se")
        sigma2 = float(fit.residuals @ fit.residuals) / dof
        v = sigma2 * h_inv
    return float(np.sqrt(v[-1, -1] / n))


def expansion_diagnostic(
    data: Dataset,
    fits: Sequence[ParsimoniousFit],
    restricted: RestrictedFit | None = None,
    hessian: np.ndarray | None = None,
) -> float:
    """Gap between the scaled test estimates and their first-order term.

    Computes ``max_i | sqrt(n) theta_hat_i - [0',1] Z_i |`` with
    ``Z_i = H_i^{-1} (sum_t e0_t x_{(i),t}) / sqrt(n)``, where ``e0`` are
    residuals from the restricted fit. ``H_i`` defaults to each fit's
    sample second-moment matrix; for the exactly linear model that choice
    makes the gap vanish identically (the score solve reproduces the
    normal-equation estimate), so callers tracking the first-order term
    against the asymptotic normalizer should pass the population
    ``hessian``: one ``(k_delta+1)^2`` matrix applied to every index, or a
    ``(k, k_delta+1, k_delta+1)`` array of per-index matrices.
    """
    if restricted is None:
        restricted = fit_restricted(data, LinearResponse(data.k_delta))
    e0 = restricted.residuals
    n = data.n
    sqrt_n = np.sqrt(n)
    kd = data.k_delta
    score_d = data.x_delta.T @ e0
    score_t = data.x_theta.T @ e0
    shared_h: SpdMatrix | None = None
    if hessian is not None and np.asarray(hessian).ndim == 2:
        shared_h = SpdMatrix(np.asarray(hessian, dtype=float))
    gap = 0.0
    for fit in fits:
        i = fit.index
        score = np.concatenate([score_d, [score_t[i - 1]]])
        if hessian is None:
            h = fit.hessian
        elif shared_h is not None:
            h = shared_h
        else:
            h = SpdMatrix(np.asarray(hessian)[i - 1])
        z_theta = float(h.solve(score)[kd]) / sqrt_n
        gap = max(gap, abs(sqrt_n * fit.theta_hat - z_theta))
    return gap


def _exact_solve(a: list[list[Fraction]], b: list[Fraction]) -> list[Fraction]:
    """Gaussian elimination over exact rationals (small systems)."""
    d = len(b)
    m = [row[:] + [b[r]] for r, row in enumerate(a)]
    for col in range(d):
        piv = next((r for r in range(col, d) if m[r][col] != 0), None)
        if piv is None:
            raise NonPositiveDefinite("exactly singular moment matrix")
        m[col], m[piv] = m[piv], m[col]
        pivot = m[col][col]
        for r in range(d):
            if r == col:
                continue
            factor = m[r][col] / pivot
            if factor == 0:
                continue
            m[r] = [mr - factor * mc for mr, mc in zip(m[r], m[col])]
    return [m[r][d] / m[r][r] for r in range(d)]


def population_parsimonious(
    sigma_x: np.ndarray, beta0: Sequence, k_delta: int
) -> tuple[np.ndarray, np.ndarray]:
    """Population marginal coefficients for a mean-zero Gaussian design.

    For covariance ``sigma_x`` of the stacked covariates and full
    coefficient vector ``beta0``, solves for each test index the moment
    system restricted to the nuisance block plus that index. Returns
    ``(delta_stars, theta_stars)`` with shapes ``(k_theta, k_delta)`` and
    ``(k_theta,)``.

    Object arrays of :class:`fractions.Fraction` are solved exactly; under
    a zero test block the result is then exactly ``delta_star = delta0``
    and ``theta_star = 0`` for every index.
    """
    sigma = np.asarray(sigma_x)
    k_total = sigma.shape[0]
    k_theta = k_total - k_delta
    if k_theta < 1:
        raise ValueError("sigma_x must cover at least one test covariate")
    exact = sigma.dtype == object
    if exact:
        cov_y = [sum(sigma[r][c] * beta0[c] for c in range(k_total)) for r in range(k_total)]
    else:
        sigma = sigma.astype(float)
        cov_y = sigma @ np.asarray(beta0, dtype=float)
    delta_stars = np.empty((k_theta, k_delta), dtype=object if exact else float)
    theta_stars = np.empty(k_theta, dtype=object if exact else float)
    for i in range(k_theta):
        sel = list(range(k_delta)) + [k_delta + i]
        if exact:
            a = [[sigma[r][c] for c in sel] for r in sel]
            b = [cov_y[r] for r in sel]
            sol = _exact_solve(a, b)
        else:
            sol = solve_spd(SpdMatrix(sigma[np.ix_(sel, sel)]), np.asarray(cov_y)[sel])
        delta_stars[i] = sol[:k_delta]
        theta_stars[i] = sol[k_delta]
    return delta_stars, theta_stars
