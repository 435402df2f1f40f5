"""Max and max-t statistics, Wald statistics, and asymptotic p-values."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .estimation import FullFit, ParsimoniousFit
from .numerics import SpdMatrix, chisq_sf, normal_sf, solve_spd

__all__ = [
    "EmptyFits",
    "NonpositiveSe",
    "WeightScheme",
    "FLAT",
    "INV_SE",
    "TestResult",
    "max_statistic",
    "wald_statistic",
    "normalized_wald",
]

METHODS = (
    "max",
    "max_t",
    "wald_asymptotic",
    "wald_normalized",
    "wald_bootstrap",
    "max_bootstrap",
)


class EmptyFits(Exception):
    """No marginal fits were supplied."""


class NonpositiveSe(Exception):
    """A standard error was zero or negative; t-ratio weights are undefined."""


@dataclass(frozen=True)
class WeightScheme:
    """Per-index weights for the max statistic.

    "flat" uses weight 1 for every index, so contributions are
    sqrt(n) |theta_hat_i|. "inv_se" uses 1 / (sqrt(n) se_i), so each
    contribution is the absolute t-ratio |theta_hat_i| / se_i.
    """

    kind: str = "flat"

    def __post_init__(self) -> None:
        if self.kind not in ("flat", "inv_se"):
            raise ValueError(f"unknown weight scheme {self.kind!r}")

    def weights(self, ses: np.ndarray, n: int) -> np.ndarray:
        if self.kind == "flat":
            return np.ones(len(ses))
        if np.any(ses <= 0) or not np.all(np.isfinite(ses)):
            raise NonpositiveSe("inv_se weights need strictly positive standard errors")
        return 1.0 / (np.sqrt(n) * ses)

    @property
    def method(self) -> str:
        return "max" if self.kind == "flat" else "max_t"


FLAT = WeightScheme("flat")
INV_SE = WeightScheme("inv_se")


@dataclass
class TestResult:
    """Outcome of one test: statistic, optional p-value, and diagnostics.

    ``per_index`` holds (theta_hat, weight, contribution) triples for the
    max family. JSON serialization is fixed to exactly the fields
    method, statistic, p_value, argmax_index, k_used, n.
    """

    __test__ = False  # not a pytest class despite the name

    method: str
    statistic: float
    p_value: float | None
    k_used: int
    n: int
    argmax_index: int | None = None
    per_index: list[tuple[float, float, float]] | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.p_value is not None and not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p_value must lie in [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "argmax_index": self.argmax_index,
            "k_used": self.k_used,
            "n": self.n,
        }

    def with_p_value(self, p: float, method: str | None = None) -> "TestResult":
        return TestResult(
            method=method or self.method,
            statistic=self.statistic,
            p_value=p,
            k_used=self.k_used,
            n=self.n,
            argmax_index=self.argmax_index,
            per_index=self.per_index,
        )


def max_statistic(
    fits: Sequence[ParsimoniousFit], scheme: WeightScheme, n: int
) -> TestResult:
    """Largest weighted scaled test estimate across marginal fits.

    T = max_i | sqrt(n) W_i theta_hat_i |, with the argmax recorded
    (smallest index on ties). No p-value is attached; that is the
    bootstrap's job.
    """
    if not fits:
        raise EmptyFits("at least one marginal fit is required")
    thetas = np.array([f.theta_hat for f in fits])
    ses = np.array([f.se_theta for f in fits])
    weights = scheme.weights(ses, n)
    contributions = np.sqrt(n) * weights * np.abs(thetas)
    arg = int(np.argmax(contributions))
    return TestResult(
        method=scheme.method,
        statistic=float(contributions[arg]),
        p_value=None,
        k_used=len(fits),
        n=n,
        argmax_index=fits[arg].index,
        per_index=[
            (float(t), float(w), float(c)) for t, w, c in zip(thetas, weights, contributions)
        ],
    )


def wald_statistic(fit: FullFit, n: int) -> TestResult:
    """Wald statistic for a zero test block: n theta' V_tt^{-1} theta.

    ``V`` is the fit's covariance of sqrt(n)(beta_hat - beta); the p-value
    uses the chi-squared tail with k_used degrees of freedom.
    """
    k = fit.k_used
    theta = fit.beta[fit.k_delta :]
    v_tt = fit.covariance.entries[fit.k_delta :, fit.k_delta :]
    w = float(n * theta @ solve_spd(SpdMatrix(v_tt), theta))
    return TestResult(
        method="wald_asymptotic",
        statistic=w,
        p_value=chisq_sf(max(w, 0.0), k),
        k_used=k,
        n=n,
    )


def normalized_wald(result: TestResult, k: int) -> TestResult:
    """Wald statistic recentered and rescaled: (W - k) / sqrt(2k).

    One-sided p-value from the standard normal upper tail; the decision
    coincides with rejecting for large W.
    """
    if result.method not in ("wald_asymptotic", "wald_bootstrap"):
        raise ValueError("normalized_wald expects a Wald result")
    ws = (result.statistic - k) / np.sqrt(2.0 * k)
    return TestResult(
        method="wald_normalized",
        statistic=float(ws),
        p_value=normal_sf(float(ws)),
        k_used=k,
        n=result.n,
    )
