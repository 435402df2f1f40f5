"""Configuration-driven Monte Carlo experiments with parallel replication.

Stream addressing is fixed so that reports are identical for any worker
count: replication r draws its data from stream ``r * 2^20`` and its
bootstrap draw j from stream ``r * 2^20 + j``. Aggregation sums rejection
indicators, which is order-independent.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

from .bootstrap import BootstrapConfig, _max_bootstrap_multi, wald_bootstrap
from .dgp import DgpSpec, gen_dataset
from .estimation import fit_full
from .inference import FLAT, INV_SE, normalized_wald, wald_statistic
from .model import linear_response, resolve_k
from .numerics import RngStream

__all__ = [
    "ConfigInvalid",
    "ExperimentConfig",
    "ExperimentReport",
    "run_experiment",
    "emit_report",
    "load_config",
    "REPLICATION_STRIDE",
]

REPLICATION_STRIDE = 2**20  # caps M below ~1e6 draws per replication

HARNESS_METHODS = ("max", "max_t", "wald_asymptotic", "wald_normalized", "wald_bootstrap")

WORKERS_ENV_VAR = "MAXZERO_WORKERS"

FAILURE_BUDGET = 0.01


class ConfigInvalid(ValueError):
    """Experiment configuration failed validation."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo cell: design, methods, levels, replication counts."""

    dgp: DgpSpec
    methods: tuple[str, ...] = ("max",)
    levels: tuple[float, ...] = (0.01, 0.05, 0.10)
    replications: int = 1000
    k_rule: str = "fixed"  # "fixed" or "rate"
    k_fixed: int | None = None
    bootstrap_m: int = 200
    weight_reuse: str = "reuse_sample_weights"
    seed: int = 0
    workers: int = 1
    se_flavor: str = "robust"
    wald_flavor: str = "homoskedastic"
    output_path: str | None = None
    output_format: str = "csv"

    def __post_init__(self) -> None:
        methods = tuple(self.methods)
        for m in methods:
            if m == "max_bootstrap":  # accepted alias for the flat-weight max test
                methods = tuple("max" if x == "max_bootstrap" else x for x in methods)
            elif m not in HARNESS_METHODS:
                raise ConfigInvalid(f"unknown method {m!r}; choose from {HARNESS_METHODS}")
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "levels", tuple(float(a) for a in self.levels))
        if not self.methods:
            raise ConfigInvalid("at least one method is required")
        if any(not 0.0 < a < 1.0 for a in self.levels) or not self.levels:
            raise ConfigInvalid("levels must lie strictly inside (0, 1)")
        if self.replications < 1:
            raise ConfigInvalid("replications must be at least 1")
        if self.bootstrap_m < 1 or self.bootstrap_m >= REPLICATION_STRIDE:
            raise ConfigInvalid(f"bootstrap_m must be in 1..{REPLICATION_STRIDE - 1}")
        if self.k_rule not in ("fixed", "rate"):
            raise ConfigInvalid("k_rule must be 'fixed' or 'rate'")
        if self.k_rule == "fixed" and (self.k_fixed is None or self.k_fixed < 1):
            raise ConfigInvalid("fixed k rule requires a positive k_fixed")
        if self.output_format not in ("csv", "json"):
            raise ConfigInvalid("output_format must be 'csv' or 'json'")

    def resolved_k(self) -> int:
        return resolve_k(
            self.dgp.n, self.dgp.k_delta, self.dgp.k_theta, rule=self.k_rule, fixed=self.k_fixed
        )

    def as_dict(self) -> dict[str, Any]:
        return {
            "dgp": self.dgp.as_dict(),
            "methods": list(self.methods),
            "levels": list(self.levels),
            "replications": self.replications,
            "k_rule": self.k_rule,
            "k_fixed": self.k_fixed,
            "bootstrap_m": self.bootstrap_m,
            "weight_reuse": self.weight_reuse,
            "seed": self.seed,
            "workers": self.workers,
            "se_flavor": self.se_flavor,
            "wald_flavor": self.wald_flavor,
        }


@dataclass
class ExperimentReport:
    """Rejection frequencies per (method, level) plus reproducibility metadata."""

    rows: list[dict[str, Any]]
    seed: int
    replications: int
    bootstrap_m: int
    n: int
    k_delta: int
    k_theta: int
    covariate_case: str
    alternative: str
    methods: tuple[str, ...]
    levels: tuple[float, ...]
    failures: int = 0
    wall_time_s: float = field(default=0.0, compare=False)

    def rate(self, method: str, alpha: float) -> float:
        for row in self.rows:
            if row["method"] == method and abs(row["alpha"] - alpha) < 1e-12:
                return row["reject_rate"]
        raise KeyError((method, alpha))

    def as_dict(self) -> dict[str, Any]:
        # Wall time is intentionally excluded: emitted artifacts must be
        # byte-identical across reruns and worker counts.
        return {
            "rows": self.rows,
            "metadata": {
                "seed": self.seed,
                "replications": self.replications,
                "bootstrap_m": self.bootstrap_m,
                "n": self.n,
                "k_delta": self.k_delta,
                "k_theta": self.k_theta,
                "covariate_case": self.covariate_case,
                "alternative": self.alternative,
                "methods": list(self.methods),
                "levels": list(self.levels),
                "failures": self.failures,
            },
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentReport":
        meta = d["metadata"]
        return cls(
            rows=[dict(r) for r in d["rows"]],
            seed=meta["seed"],
            replications=meta["replications"],
            bootstrap_m=meta["bootstrap_m"],
            n=meta["n"],
            k_delta=meta["k_delta"],
            k_theta=meta["k_theta"],
            covariate_case=meta["covariate_case"],
            alternative=meta["alternative"],
            methods=tuple(meta["methods"]),
            levels=tuple(meta["levels"]),
            failures=meta["failures"],
        )

    def summary_lines(self) -> list[str]:
        head = (
            f"n={self.n} k_delta={self.k_delta} k={self.k_theta} case={self.covariate_case} "
            f"alt={self.alternative} R={self.replications} M={self.bootstrap_m} seed={self.seed}"
        )
        lines = [head, f"{'method':<18}" + "".join(f"{a:>10.3g}" for a in self.levels)]
        for method in self.methods:
            cells = "".join(f"{self.rate(method, a):>10.4f}" for a in self.levels)
            lines.append(f"{method:<18}" + cells)
        if self.failures:
            lines.append(f"failed replications: {self.failures}")
        return lines


def _replication_pvalues(cfg: ExperimentConfig, k_used: int, r: int) -> dict[str, float]:
    """P-values of every configured method on replication r's dataset."""
    data = gen_dataset(cfg.dgp, RngStream(cfg.seed, r * REPLICATION_STRIDE))
    model = linear_response(cfg.dgp.k_delta)
    boot_cfg = BootstrapConfig(
        M=cfg.bootstrap_m,
        seed=cfg.seed,
        weight_reuse=cfg.weight_reuse,
        stream_offset=r * REPLICATION_STRIDE + 1,
    )
    out: dict[str, float] = {}
    max_schemes = [s for s in (FLAT, INV_SE) if s.method in cfg.methods]
    if max_schemes:
        outcomes = _max_bootstrap_multi(data, model, k_used, max_schemes, boot_cfg, cfg.se_flavor)
        for s in max_schemes:
            out[s.method] = outcomes[s.kind].p_value
    wald_methods = [m for m in cfg.methods if m.startswith("wald")]
    if "wald_asymptotic" in wald_methods or "wald_normalized" in wald_methods:
        full = fit_full(data, model, k_used, cfg.wald_flavor)
        wald = wald_statistic(full, data.n)
        if "wald_asymptotic" in wald_methods:
            out["wald_asymptotic"] = wald.p_value
        if "wald_normalized" in wald_methods:
            out["wald_normalized"] = normalized_wald(wald, k_used).p_value
    if "wald_bootstrap" in wald_methods:
        out["wald_bootstrap"] = wald_bootstrap(data, model, k_used, boot_cfg, cfg.wald_flavor).p_value
    return out


def _replication_task(args: tuple) -> tuple[int, dict[str, float] | str]:
    cfg, k_used, r = args
    try:
        return r, _replication_pvalues(cfg, k_used, r)
    except Exception as exc:  # recorded per replication, fatal only in bulk
        return r, f"{type(exc).__name__}: {exc}"


_WORKER_THREAD_LIMIT = None


def _worker_init() -> None:
    # One BLAS thread per worker; the replication grain is the parallel unit
    # and threaded kernels only add synchronization cost at these sizes.
    global _WORKER_THREAD_LIMIT
    import threadpoolctl

    _WORKER_THREAD_LIMIT = threadpoolctl.threadpool_limits(limits=1)


def _effective_workers(cfg: ExperimentConfig) -> int:
    env = os.environ.get(WORKERS_ENV_VAR)
    if env:
        return max(1, int(env))
    if cfg.workers >= 1:
        return cfg.workers
    return os.cpu_count() or 1


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run every replication of one Monte Carlo cell and aggregate rejections.

    Deterministic for a fixed master seed: replication r always consumes
    streams (r*2^20 .. r*2^20+M) no matter how work is scheduled.
    """
    import threadpoolctl

    start = time.monotonic()
    k_used = cfg.resolved_k()
    workers = _effective_workers(cfg)
    tasks = [(cfg, k_used, r) for r in range(1, cfg.replications + 1)]
    results: list[tuple[int, dict[str, float] | str]] = []
    if workers <= 1 or cfg.replications == 1:
        with threadpoolctl.threadpool_limits(limits=1):
            results = [_replication_task(t) for t in tasks]
    else:
        chunk = max(1, cfg.replications // (workers * 8))
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init) as pool:
            results = list(pool.map(_replication_task, tasks, chunksize=chunk))
    counts = {(m, a): 0 for m in cfg.methods for a in cfg.levels}
    failures: list[tuple[int, str]] = []
    n_ok = 0
    for r, res in sorted(results):
        if isinstance(res, str):
            failures.append((r, res))
            continue
        n_ok += 1
        for m in cfg.methods:
            for a in cfg.levels:
                counts[(m, a)] += int(res[m] < a)
    if len(failures) > FAILURE_BUDGET * cfg.replications:
        detail = "; ".join(f"r={r}: {msg}" for r, msg in failures[:5])
        raise RuntimeError(
            f"{len(failures)} of {cfg.replications} replications failed ({detail} ...)"
        )
    if n_ok == 0:
        raise RuntimeError("no replication succeeded")
    rows = [
        {"method": m, "alpha": a, "reject_rate": counts[(m, a)] / n_ok}
        for m in cfg.methods
        for a in cfg.levels
    ]
    return ExperimentReport(
        rows=rows,
        seed=cfg.seed,
        replications=cfg.replications,
        bootstrap_m=cfg.bootstrap_m,
        n=cfg.dgp.n,
        k_delta=cfg.dgp.k_delta,
        k_theta=k_used,
        covariate_case=cfg.dgp.covariate_case,
        alternative=cfg.dgp.theta.tag(),
        methods=cfg.methods,
        levels=cfg.levels,
        failures=len(failures),
        wall_time_s=time.monotonic() - start,
    )


CSV_COLUMNS = (
    "method",
    "alpha",
    "reject_rate",
    "R",
    "M",
    "n",
    "k_delta",
    "k_theta",
    "case",
    "alternative",
    "seed",
)


def emit_report(report: ExperimentReport, fmt: str, path: str) -> None:
    """Write a report as CSV (one row per method and level) or JSON.

    Output content is a pure function of the report's serialized fields,
    so reruns with the same seed produce byte-identical files.
    """
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in report.rows:
                writer.writerow(
                    [
                        row["method"],
                        repr(float(row["alpha"])),
                        repr(float(row["reject_rate"])),
                        report.replications,
                        report.bootstrap_m,
                        report.n,
                        report.k_delta,
                        report.k_theta,
                        report.covariate_case,
                        report.alternative,
                        report.seed,
                    ]
                )
    elif fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        raise ConfigInvalid(f"unknown output format {fmt!r}")


def _load_toml(path: str) -> dict[str, Any]:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def load_config(path: str) -> ExperimentConfig:
    """Read an experiment configuration from a TOML or JSON file."""
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    elif path.endswith(".toml"):
        raw = _load_toml(path)
    else:
        raise ConfigInvalid("config file must end in .toml or .json")
    return config_from_dict(raw)


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    try:
        dgp_raw = dict(raw["dgp"])
        exp = dict(raw.get("experiment", {}))
        boot = dict(raw.get("bootstrap", {}))
        output = dict(raw.get("output", {}))
        cfg = ExperimentConfig(
            dgp=DgpSpec.from_dict(dgp_raw),
            methods=tuple(exp.get("methods", ["max"])),
            levels=tuple(exp.get("levels", [0.01, 0.05, 0.10])),
            replications=int(exp.get("replications", 1000)),
            k_rule=exp.get("k_rule", "fixed"),
            k_fixed=int(exp["k"]) if "k" in exp else None,
            bootstrap_m=int(boot.get("M", 200)),
            weight_reuse=boot.get("weight_reuse", "reuse_sample_weights"),
            seed=int(exp.get("seed", 0)),
            workers=int(exp.get("workers", 1)),
            se_flavor=exp.get("se_flavor", "robust"),
            wald_flavor=exp.get("wald_flavor", "homoskedastic"),
            output_path=output.get("path"),
            output_format=output.get("format", "csv"),
        )
    except ConfigInvalid:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"bad experiment config: {exc}") from exc
    return cfg


def override_config(cfg: ExperimentConfig, **kwargs: Any) -> ExperimentConfig:
    """Return a copy of ``cfg`` with the given fields replaced."""
    return replace(cfg, **{k: v for k, v in kwargs.items() if v is not None})
