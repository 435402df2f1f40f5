"""Response models, the one-test-parameter embedding, and datasets.

A marginal (parsimonious) model keeps every nuisance coefficient and exactly
one test coefficient; all remaining test coefficients are pinned at zero.
The library ships the linear response; nonlinear responses plug in through
:class:`ResponseModel`.
"""

from __future__ import annotations

import abc
import csv
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ResponseModel",
    "LinearResponse",
    "linear_response",
    "ParsimoniousParam",
    "embed_full",
    "Dataset",
    "CsvFormatError",
    "rate_rule_k",
    "resolve_k",
]


class ResponseModel(abc.ABC):
    """Evaluation, gradient, and Hessian of a marginal response.

    ``beta`` always packs ``[delta, theta_i]`` into a length ``k_delta + 1``
    vector. Implementations must be stateless: evaluation is called
    concurrently from multiple workers on shared inputs. At ``theta_i = 0``
    the response must not depend on the test covariate, so every marginal
    model agrees with the restricted model there.
    """

    @property
    @abc.abstractmethod
    def k_delta(self) -> int:
        """Nuisance dimension."""

    @abc.abstractmethod
    def eval(self, x_delta: np.ndarray, x_theta_i: float, beta: np.ndarray) -> float:
        """Response value at one observation."""

    @abc.abstractmethod
    def grad(self, x_delta: np.ndarray, x_theta_i: float, beta: np.ndarray) -> np.ndarray:
        """Gradient of :meth:`eval` in ``beta``; length ``k_delta + 1``."""

    @abc.abstractmethod
    def hess(self, x_delta: np.ndarray, x_theta_i: float, beta: np.ndarray) -> np.ndarray:
        """Hessian of :meth:`eval` in ``beta``; ``(k_delta+1) x (k_delta+1)``."""

    # Batch helpers; the generic versions loop and solvers override for speed.

    def predict(self, x_delta: np.ndarray, x_theta_col: np.ndarray, beta: np.ndarray) -> np.ndarray:
        return np.array(
            [self.eval(x_delta[t], float(x_theta_col[t]), beta) for t in range(len(x_theta_col))]
        )

    def grad_matrix(self, x_delta: np.ndarray, x_theta_col: np.ndarray, beta: np.ndarray) -> np.ndarray:
        return np.array(
            [self.grad(x_delta[t], float(x_theta_col[t]), beta) for t in range(len(x_theta_col))]
        )


class LinearResponse(ResponseModel):
    """delta'x_delta + theta_i * x_theta_i; the fully verified built-in case."""

    def __init__(self, k_delta: int) -> None:
        if k_delta < 0:
            raise ValueError("k_delta must be nonnegative")
        self._k_delta = int(k_delta)

    @property
    def k_delta(self) -> int:
        return self._k_delta

    def eval(self, x_delta, x_theta_i, beta):
        beta = np.asarray(beta, dtype=float)
        return float(beta[: self._k_delta] @ np.asarray(x_delta, dtype=float) + beta[self._k_delta] * x_theta_i)

    def grad(self, x_delta, x_theta_i, beta):
        return np.concatenate([np.asarray(x_delta, dtype=float), [float(x_theta_i)]])

    def hess(self, x_delta, x_theta_i, beta):
        return np.zeros((self._k_delta + 1, self._k_delta + 1))

    def predict(self, x_delta, x_theta_col, beta):
        beta = np.asarray(beta, dtype=float)
        return x_delta @ beta[: self._k_delta] + beta[self._k_delta] * x_theta_col

    def grad_matrix(self, x_delta, x_theta_col, beta):
        return np.column_stack([x_delta, x_theta_col])


def linear_response(k_delta: int) -> LinearResponse:
    """Build the linear response with ``k_delta`` nuisance covariates."""
    return LinearResponse(k_delta)


@dataclass(frozen=True)
class ParsimoniousParam:
    """Coefficients of one marginal model: nuisance block plus one test scalar."""

    delta: np.ndarray
    theta_i: float
    index: int

    def __post_init__(self) -> None:
        d = np.array(self.delta, dtype=float)
        d.setflags(write=False)
        object.__setattr__(self, "delta", d)
        if self.index < 1:
            raise ValueError("index is 1-based and must be positive")

    @property
    def k_delta(self) -> int:
        return self.delta.shape[0]


def embed_full(p: ParsimoniousParam, k_theta: int) -> np.ndarray:
    """Embed a marginal parameter into the full ``k_delta + k_theta`` vector.

    The test block is zero except for ``theta_i`` at the parameter's index.
    """
    if not 1 <= p.index <= k_theta:
        raise ValueError(f"index {p.index} out of range 1..{k_theta}")
    full = np.zeros(p.k_delta + k_theta)
    full[: p.k_delta] = p.delta
    full[p.k_delta + p.index - 1] = p.theta_i
    return full


class CsvFormatError(ValueError):
    """Malformed dataset CSV; carries 1-based line and column positions."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None) -> None:
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Dataset:
    """Response plus nuisance and test covariate blocks; immutable after load."""

    y: np.ndarray
    x_delta: np.ndarray
    x_theta: np.ndarray

    def __post_init__(self) -> None:
        y = np.array(self.y, dtype=float)
        xd = np.array(self.x_delta, dtype=float)
        xt = np.array(self.x_theta, dtype=float)
        if y.ndim != 1:
            raise ValueError("y must be a vector")
        n = y.shape[0]
        if xd.ndim != 2 or xd.shape[0] != n:
            raise ValueError("x_delta must be n x k_delta")
        if xt.ndim != 2 or xt.shape[0] != n:
            raise ValueError("x_theta must be n x k_theta")
        if xt.shape[1] < 1:
            raise ValueError("at least one test covariate is required")
        for name, arr in (("y", y), ("x_delta", xd), ("x_theta", xt)):
            if arr.size and not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains NaN or Inf")
        for arr in (y, xd, xt):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x_delta", xd)
        object.__setattr__(self, "x_theta", xt)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k_delta(self) -> int:
        return self.x_delta.shape[1]

    @property
    def k_theta(self) -> int:
        return self.x_theta.shape[1]

    @classmethod
    def from_csv(cls, path: str) -> "Dataset":
        """Load from a CSV with header ``y``, ``d1..dK``, ``t1..tJ`` (RFC 4180)."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise CsvFormatError("empty file", line=1) from None
            header = [h.strip() for h in header]
            col_map = _parse_header(header)
            k_delta = sum(1 for kind, _ in col_map if kind == "d")
            k_theta = sum(1 for kind, _ in col_map if kind == "t")
            rows_y: list[float] = []
            rows_d: list[list[float]] = []
            rows_t: list[list[float]] = []
            for line_no, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise CsvFormatError(
                        f"expected {len(header)} fields, found {len(row)}", line=line_no
                    )
                yv = 0.0
                dv = [0.0] * k_delta
                tv = [0.0] * k_theta
                for col_no, (cell, (kind, pos)) in enumerate(zip(row, col_map), start=1):
                    try:
                        val = float(cell)
                    except ValueError:
                        raise CsvFormatError(
                            f"could not parse {cell!r} as a number", line=line_no, column=col_no
                        ) from None
                    if not np.isfinite(val):
                        raise CsvFormatError("non-finite value", line=line_no, column=col_no)
                    if kind == "y":
                        yv = val
                    elif kind == "d":
                        dv[pos] = val
                    else:
                        tv[pos] = val
                rows_y.append(yv)
                rows_d.append(dv)
                rows_t.append(tv)
        if not rows_y:
            raise CsvFormatError("no data rows", line=2)
        n = len(rows_y)
        return cls(
            y=np.array(rows_y),
            x_delta=np.array(rows_d).reshape(n, k_delta),
            x_theta=np.array(rows_t).reshape(n, k_theta),
        )

    def to_csv(self, path: str) -> None:
        header = (
            ["y"]
            + [f"d{j}" for j in range(1, self.k_delta + 1)]
            + [f"t{j}" for j in range(1, self.k_theta + 1)]
        )
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t in range(self.n):
                writer.writerow(
                    [repr(float(self.y[t]))]
                    + [repr(float(v)) for v in self.x_delta[t]]
                    + [repr(float(v)) for v in self.x_theta[t]]
                )


_D_COL = re.compile(r"^d([1-9][0-9]*)$")
_T_COL = re.compile(r"^t([1-9][0-9]*)$")


def _parse_header(header: list[str]) -> list[tuple[str, int]]:
    col_map: list[tuple[str, int]] = []
    d_ids: list[int] = []
    t_ids: list[int] = []
    saw_y = False
    for col_no, name in enumerate(header, start=1):
        if name == "y":
            if saw_y:
                raise CsvFormatError("duplicate column 'y'", line=1, column=col_no)
            saw_y = True
            col_map.append(("y", 0))
            continue
        m = _D_COL.match(name)
        if m:
            d_ids.append(int(m.group(1)))
            col_map.append(("d", int(m.group(1)) - 1))
            continue
        m = _T_COL.match(name)
        if m:
            t_ids.append(int(m.group(1)))
            col_map.append(("t", int(m.group(1)) - 1))
            continue
        raise CsvFormatError(
            f"unrecognized column {name!r} (expected y, d1..dK, t1..tJ)", line=1, column=col_no
        )
    if not saw_y:
        raise CsvFormatError("missing column 'y'", line=1)
    if sorted(d_ids) != list(range(1, len(d_ids) + 1)):
        raise CsvFormatError("nuisance columns must be numbered d1..dK without gaps", line=1)
    if sorted(t_ids) != list(range(1, len(t_ids) + 1)):
        raise CsvFormatError("test columns must be numbered t1..tJ without gaps", line=1)
    if not t_ids:
        raise CsvFormatError("at least one test column t1.. is required", line=1)
    return col_map


_RATE_IOTA = 1e-10


def rate_rule_k(n: int) -> int:
    """Model count at sample size ``n``: round(5 * n^(1/2 - 1e-10)).

    Evaluates to 50, 79, 112, 158 at n = 100, 250, 500, 1000 and is
    monotone in ``n``.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    return int(np.floor(5.0 * float(n) ** (0.5 - _RATE_IOTA) + 0.5))


def resolve_k(
    n: int,
    k_delta: int,
    k_available: int,
    rule: str = "rate",
    fixed: int | None = None,
) -> int:
    """Resolve the number of marginal models to fit.

    The result is capped at ``min(k_available, n - k_delta - 2)`` so that
    every marginal fit retains positive degrees of freedom.
    """
    if rule == "rate":
        base = rate_rule_k(n)
    elif rule == "fixed":
        if fixed is None or fixed < 1:
            raise ValueError("fixed rule requires a positive k")
        base = int(fixed)
    else:
        raise ValueError(f"unknown k rule {rule!r}")
    cap = min(int(k_available), n - k_delta - 2)
    if cap < 1:
        raise ValueError(f"sample too small for any marginal fit (n={n}, k_delta={k_delta})")
    return min(base, cap)
