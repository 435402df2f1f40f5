"""Dense SPD linear algebra, distribution tails, and splittable RNG streams.

Everything downstream (fitting, bootstrap draws, data generation) funnels
through this module so that numerical guards and reproducibility rules live
in exactly one place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = [
    "NonPositiveDefinite",
    "SpdMatrix",
    "solve_spd",
    "chisq_sf",
    "normal_sf",
    "RngStream",
    "draw_std_normals",
]

SYMMETRY_RTOL = 1e-12
PIVOT_RTOL = 1e-14


class NonPositiveDefinite(Exception):
    """A matrix failed the positive-definiteness pivot guard.

    Raised for singular or near-singular systems (collinear designs). The
    guard rejects rather than regularizes: a silent ridge would bias every
    statistic computed from the solve.
    """


def cholesky_guarded(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``a`` with a relative pivot guard.

    Every Schur-complement pivot must exceed ``dim * 1e-14 * max(diag)``;
    otherwise :class:`NonPositiveDefinite` is raised.
    """
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    if d == 0:
        return np.zeros((0, 0))
    max_diag = float(np.max(np.diag(a)))
    if not np.isfinite(max_diag) or max_diag <= 0.0:
        raise NonPositiveDefinite("non-positive diagonal")
    tol = d * PIVOT_RTOL * max_diag
    lower = np.zeros((d, d))
    for j in range(d):
        pivot = a[j, j] - lower[j, :j] @ lower[j, :j]
        if not pivot > tol:
            raise NonPositiveDefinite(
                f"pivot {pivot:.3e} at column {j} below guard {tol:.3e}"
            )
        ljj = np.sqrt(pivot)
        lower[j, j] = ljj
        if j + 1 < d:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / ljj
    return lower


def _solve_cholesky(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular

    if lower.shape[0] == 0:
        return np.zeros(b.shape, dtype=float)
    z = solve_triangular(lower, b, lower=True, check_finite=False)
    return solve_triangular(lower.T, z, lower=False, check_finite=False)


@dataclass(frozen=True)
class SpdMatrix:
    """Immutable symmetric matrix intended to be positive definite.

    Symmetry is enforced at construction (relative tolerance 1e-12);
    positive definiteness is established lazily by the guarded Cholesky
    factorization, which raises :class:`NonPositiveDefinite` on failure.
    The factor is cached after the first solve.
    """

    entries: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        scale = float(np.max(np.abs(a))) if a.size else 0.0
        skew = float(np.max(np.abs(a - a.T))) if a.size else 0.0
        if skew > SYMMETRY_RTOL * max(scale, 1e-300):
            raise ValueError(f"matrix is not symmetric: max|A - A'| = {skew:.3e}")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "_factor", None)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def cholesky(self) -> np.ndarray:
        cached = getattr(self, "_factor", None)
        if cached is None:
            cached = cholesky_guarded(self.entries)
            object.__setattr__(self, "_factor", cached)
        return cached

    def is_pd(self) -> bool:
        try:
            self.cholesky()
        except NonPositiveDefinite:
            return False
        return True

    def solve(self, b: np.ndarray) -> np.ndarray:
        return _solve_cholesky(self.cholesky(), np.asarray(b, dtype=float))

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.dim))


def solve_spd(a: SpdMatrix | np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Raises :class:`NonPositiveDefinite` if the pivot guard trips and
    ``ValueError`` on a dimension mismatch.
    """
    spd = a if isinstance(a, SpdMatrix) else SpdMatrix(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float)
    if b.shape[0] != spd.dim:
        raise ValueError(f"dimension mismatch: A is {spd.dim}x{spd.dim}, b has {b.shape[0]} rows")
    return spd.solve(b)


def chisq_sf(x: float, df: int) -> float:
    """Upper tail P(chi2_df > x) via the regularized incomplete gamma."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    if df < 1:
        raise ValueError("df must be a positive integer")
    return float(special.gammaincc(0.5 * df, 0.5 * x))


def normal_sf(z: float) -> float:
    """Upper tail P(N(0,1) > z) via the complementary error function."""
    return float(0.5 * special.erfc(z / np.sqrt(2.0)))


_TWO53 = float(2**53)


def normals_from_uniforms(u: np.ndarray) -> np.ndarray:
    """Inverse-CDF transform of half-open uniforms, recentred to a 53-bit grid.

    Shared by scalar and batch draw paths so both are bit-identical.
    """
    return special.ndtri((np.floor(u * _TWO53) + 0.5) / _TWO53)


@dataclass
class RngStream:
    """Deterministic, splittable random stream.

    Streams are keyed by ``(master_seed, stream_id)`` on a counter-based
    generator: distinct ids from one master seed give statistically
    independent sequences, and re-creating a stream replays it exactly.
    A stream is single-owner; parallel workers must each derive their own.

    Normal variates are produced by inverse-CDF applied to one uniform per
    variate, so the stream position advances by exactly one word per draw
    and replay is position-stable.
    """

    master_seed: int
    stream_id: int
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0 <= self.stream_id < 2**64:
            raise ValueError("stream_id must fit in 64 bits")
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def uniforms(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = self._gen.random(n)
        return low + (high - low) * u

    def raw_uniforms(self, n: int) -> np.ndarray:
        """Raw half-open uniforms; feed batches through normals_from_uniforms."""
        return self._gen.random(n)

    def normals(self, n: int) -> np.ndarray:
        return normals_from_uniforms(self._gen.random(n))


def draw_std_normals(stream: RngStream, n: int) -> np.ndarray:
    """Draw ``n`` deterministic N(0,1) variates from ``stream``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return stream.normals(n)
