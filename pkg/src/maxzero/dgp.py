"""Synthetic data generation for the Monte Carlo designs.

Covariate cases: mutually independent standard normals; block-dependent
normals (nuisance and test blocks internally factor-loaded, mutually
independent); cross-block dependent normals (one factor loading across all
covariates); and a dispersion case with a diagonal test-block covariance
profile. Errors are iid standard normal (extension point).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .model import Dataset
from .numerics import RngStream

__all__ = [
    "AlternativeSpec",
    "DgpSpec",
    "gen_covariates",
    "gen_dataset",
]

COVARIATE_CASES = (
    "independent",
    "block_dependent",
    "cross_block_dependent",
    "dispersion",
)

ALTERNATIVE_KINDS = ("null", "alt_i", "alt_ii", "alt_iii", "local", "custom")

_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class AlternativeSpec:
    """Shape of the test-coefficient vector used to generate data.

    kind "null": all zero. "alt_i": first coefficient = magnitude, rest
    zero. "alt_ii": i / k_theta for i = 1..k_theta. "alt_iii": every
    coefficient = magnitude. "local": vector / sqrt(n). "custom": vector
    as given.
    """

    kind: str = "null"
    magnitude: float = 1e-3
    vector: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ALTERNATIVE_KINDS:
            raise ValueError(f"unknown alternative kind {self.kind!r}")
        if self.kind in ("local", "custom") and self.vector is None:
            raise ValueError(f"{self.kind!r} requires an explicit vector")
        if self.vector is not None:
            object.__setattr__(self, "vector", tuple(float(v) for v in self.vector))

    def theta_vector(self, k_theta: int, n: int) -> np.ndarray:
        if self.kind == "null":
            return np.zeros(k_theta)
        if self.kind == "alt_i":
            theta = np.zeros(k_theta)
            theta[0] = self.magnitude
            return theta
        if self.kind == "alt_ii":
            return np.arange(1, k_theta + 1, dtype=float) / k_theta
        if self.kind == "alt_iii":
            return np.full(k_theta, self.magnitude)
        vec = np.asarray(self.vector, dtype=float)
        if vec.shape[0] != k_theta:
            raise ValueError(f"vector length {vec.shape[0]} != k_theta {k_theta}")
        if self.kind == "local":
            return vec / np.sqrt(n)
        return vec.copy()

    def tag(self) -> str:
        """Compact label for report rows."""
        if self.kind == "null":
            return "null"
        if self.kind == "alt_ii":
            return "alt_ii"
        if self.kind in ("alt_i", "alt_iii"):
            return f"{self.kind}({self.magnitude:g})"
        body = ";".join(f"{v:g}" for v in self.vector or ())
        return f"{self.kind}[{body}]"

    def as_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "magnitude": self.magnitude}
        if self.vector is not None:
            out["vector"] = list(self.vector)
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AlternativeSpec":
        vec = d.get("vector")
        return cls(
            kind=d.get("kind", "null"),
            magnitude=float(d.get("magnitude", 1e-3)),
            vector=tuple(vec) if vec is not None else None,
        )


@dataclass(frozen=True)
class DgpSpec:
    """Full description of one synthetic design."""

    n: int
    k_delta: int
    k_theta: int
    covariate_case: str = "independent"
    delta0: tuple[float, ...] | None = None
    theta: AlternativeSpec = field(default_factory=AlternativeSpec)
    error_dist: str = "std_normal"
    dispersion_profile: str | tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k_theta < 1:
            raise ValueError("k_theta must be at least 1")
        if self.k_delta < 0:
            raise ValueError("k_delta must be nonnegative")
        if self.n < self.k_delta + 2:
            raise ValueError("need n >= k_delta + 2")
        if self.covariate_case not in COVARIATE_CASES:
            raise ValueError(f"unknown covariate case {self.covariate_case!r}")
        if self.covariate_case == "dispersion" and self.dispersion_profile is None:
            raise ValueError("dispersion case requires a profile")
        if self.error_dist != "std_normal":
            raise ValueError(f"unsupported error distribution {self.error_dist!r}")
        if self.delta0 is not None:
            d0 = tuple(float(v) for v in self.delta0)
            if len(d0) != self.k_delta:
                raise ValueError("delta0 length must equal k_delta")
            object.__setattr__(self, "delta0", d0)
        if isinstance(self.dispersion_profile, (list, tuple)):
            object.__setattr__(
                self, "dispersion_profile", tuple(float(v) for v in self.dispersion_profile)
            )

    def delta0_vector(self) -> np.ndarray:
        if self.delta0 is None:
            return np.ones(self.k_delta)
        return np.asarray(self.delta0, dtype=float)

    def as_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "n": self.n,
            "k_delta": self.k_delta,
            "k_theta": self.k_theta,
            "covariate_case": self.covariate_case,
            "alternative": self.theta.as_dict(),
            "error_dist": self.error_dist,
            "seed": self.seed,
        }
        if self.delta0 is not None:
            out["delta0"] = list(self.delta0)
        if self.dispersion_profile is not None:
            prof = self.dispersion_profile
            out["dispersion_profile"] = list(prof) if isinstance(prof, tuple) else prof
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DgpSpec":
        alt = d.get("alternative", {"kind": "null"})
        if isinstance(alt, str):
            alt = {"kind": alt}
        prof = d.get("dispersion_profile")
        return cls(
            n=int(d["n"]),
            k_delta=int(d.get("k_delta", 0)),
            k_theta=int(d["k_theta"]),
            covariate_case=d.get("covariate_case", "independent"),
            delta0=tuple(d["delta0"]) if "delta0" in d else None,
            theta=AlternativeSpec.from_dict(alt),
            error_dist=d.get("error_dist", "std_normal"),
            dispersion_profile=tuple(prof) if isinstance(prof, list) else prof,
            seed=int(d.get("seed", 0)),
        )


def dispersion_diag(profile: str | tuple[float, ...], k_theta: int) -> np.ndarray:
    """Diagonal of the test-block covariance for the dispersion case."""
    if isinstance(profile, str):
        if profile == "increasing":
            return 1.0 + 100.0 * np.arange(k_theta, dtype=float) / k_theta
        if profile in ("single_10", "single_100"):
            psi = np.ones(k_theta)
            psi[0] = 10.0 if profile == "single_10" else 100.0
            return psi
        raise ValueError(f"unknown dispersion profile {profile!r}")
    psi = np.asarray(profile, dtype=float)
    if psi.shape[0] != k_theta or np.any(psi <= 0):
        raise ValueError("dispersion profile must be k_theta positive variances")
    return psi


def _draw_loading(stream: RngStream, k: int) -> np.ndarray:
    """Loading matrix with U[-1,1] entries, diagonal-repaired to full rank."""
    a = stream.uniforms(k * k, -1.0, 1.0).reshape(k, k)
    while True:
        svals = np.linalg.svd(a, compute_uv=False)
        if svals[-1] > _RANK_RTOL * svals[0]:
            return a
        a = a + np.diag(stream.uniforms(k, 0.0, 1.0))


def _factor_block(stream: RngStream, n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    a = _draw_loading(stream, k)
    w = stream.normals(n * k).reshape(n, k)
    v = stream.normals(n * k).reshape(n, k)
    return w @ a.T + v, a


def gen_covariates(
    spec: DgpSpec, stream: RngStream, return_info: bool = False
) -> np.ndarray | tuple[np.ndarray, dict[str, Any]]:
    """Draw the ``n x (k_delta + k_theta)`` covariate matrix for ``spec``.

    With ``return_info`` the drawn factor loadings (or dispersion diagonal)
    come back alongside the matrix, which lets callers reconstruct the
    population covariance of the draw.
    """
    n, kd, kt = spec.n, spec.k_delta, spec.k_theta
    info: dict[str, Any] = {}
    if spec.covariate_case == "independent":
        x = stream.normals(n * (kd + kt)).reshape(n, kd + kt)
    elif spec.covariate_case == "cross_block_dependent":
        x, a = _factor_block(stream, n, kd + kt)
        info["loading"] = a
    elif spec.covariate_case == "block_dependent":
        blocks = []
        loadings = []
        for size in (kd, kt):
            if size == 0:
                continue
            xb, ab = _factor_block(stream, n, size)
            blocks.append(xb)
            loadings.append(ab)
        x = np.hstack(blocks)
        info["loadings"] = loadings
    else:  # dispersion
        psi = dispersion_diag(spec.dispersion_profile, kt)
        xd = stream.normals(n * kd).reshape(n, kd)
        xt = stream.normals(n * kt).reshape(n, kt) * np.sqrt(psi)
        x = np.hstack([xd, xt])
        info["psi"] = psi
    if return_info:
        return x, info
    return x


def gen_dataset(spec: DgpSpec, stream: RngStream) -> Dataset:
    """Generate one dataset: y = X_delta delta0 + X_theta theta0 + eps."""
    x = gen_covariates(spec, stream)
    xd = x[:, : spec.k_delta]
    xt = x[:, spec.k_delta :]
    theta0 = spec.theta.theta_vector(spec.k_theta, spec.n)
    delta0 = spec.delta0_vector()
    eps = stream.normals(spec.n)
    y = xd @ delta0 + xt @ theta0 + eps
    return Dataset(y=y, x_delta=xd, x_theta=xt)
