"""Command line entry points: test a dataset, run experiments, compare methods.

Exit codes: 0 ran, 2 input error (files, flags, config), 3 numerical
failure (singular design, no convergence, degenerate bootstrap).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from typing import Any

from . import __version__
from .bootstrap import (
    BootstrapConfig,
    BootstrapDegenerate,
    _max_bootstrap_multi,
    wald_bootstrap,
)
from .estimation import (
    InsufficientSample,
    NoConvergence,
    fit_all_parsimonious,
    fit_full,
)
from .harness import (
    ConfigInvalid,
    emit_report,
    load_config,
    override_config,
    run_experiment,
)
from .inference import (
    FLAT,
    INV_SE,
    TestResult,
    max_statistic,
    normalized_wald,
    wald_statistic,
)
from .model import CsvFormatError, Dataset, linear_response, resolve_k
from .numerics import NonPositiveDefinite

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

ALL_METHODS = ("max", "max_t", "wald_asymptotic", "wald_normalized", "wald_bootstrap")

_INPUT_ERRORS = (CsvFormatError, ConfigInvalid, FileNotFoundError, IsADirectoryError, ValueError)
_NUMERICAL_ERRORS = (NonPositiveDefinite, InsufficientSample, NoConvergence, BootstrapDegenerate)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", action="append", type=float, default=None,
                   help="significance level; repeatable (default 0.01 0.05 0.10)")
    p.add_argument("--M", type=int, default=None,
                   help="bootstrap replicates (default 1000; mc: config value)")
    p.add_argument("--k", default=None,
                   help="number of test columns to use: an integer or 'rate' (default: all)")
    p.add_argument("--weights", choices=["flat", "tstat"], default="tstat",
                   help="max-family weights when --method is not given")
    p.add_argument("--se", choices=["robust", "homoskedastic"], default="robust",
                   help="standard error flavor (default robust)")
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0; mc: config value)")
    p.add_argument("--workers", type=int, default=None, help="worker processes (mc only)")
    p.add_argument("--out", default=None, help="also write the output to this file")
    p.add_argument("--format", choices=["csv", "json"], default=None, help="mc output format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxzero", description=__doc__)
    parser.add_argument("--version", action="version", version=f"maxzero {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_test = sub.add_parser("test", help="bootstrap max tests on a CSV dataset")
    p_test.add_argument("--data", required=True, help="CSV with columns y, d1..dK, t1..tJ")
    p_test.add_argument("--method", action="append", default=None,
                        help=f"repeatable; one of {ALL_METHODS}")
    _add_common_flags(p_test)

    p_mc = sub.add_parser("mc", help="run a Monte Carlo experiment from a config file")
    p_mc.add_argument("--config", required=True, help="TOML or JSON experiment config")
    p_mc.add_argument("--replications", type=int, default=None, help="override replication count")
    _add_common_flags(p_mc)

    p_cmp = sub.add_parser("compare", help="run every method side by side on a CSV dataset")
    p_cmp.add_argument("--data", required=True, help="CSV with columns y, d1..dK, t1..tJ")
    _add_common_flags(p_cmp)
    return parser


def _digest(payload: dict[str, Any]) -> str:
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _resolve_k_flag(flag: str | None, data: Dataset) -> int:
    if flag is None or flag == "all":
        return resolve_k(data.n, data.k_delta, data.k_theta, rule="fixed", fixed=data.k_theta)
    if flag == "rate":
        return resolve_k(data.n, data.k_delta, data.k_theta, rule="rate")
    return resolve_k(data.n, data.k_delta, data.k_theta, rule="fixed", fixed=int(flag))


def _run_methods(
    data: Dataset,
    methods: list[str],
    k_used: int,
    levels: list[float],
    m: int,
    seed: int,
    se_flavor: str,
    capture_errors: bool,
) -> tuple[list[TestResult], list[dict[str, Any]], list[dict[str, Any]]]:
    model = linear_response(data.k_delta)
    cfg = BootstrapConfig(M=m, seed=seed)
    results: list[TestResult] = []
    decisions: list[dict[str, Any]] = []
    errors: list[dict[str, Any]] = []

    def record(result: TestResult, extra_tag: str | None = None, decisions_only: bool = False) -> None:
        if not decisions_only:
            results.append(result)
        tag = extra_tag or result.method
        for a in levels:
            decisions.append({"method": tag, "alpha": a, "reject": bool(result.p_value < a)})

    max_schemes = [s for s in (FLAT, INV_SE) if s.method in methods]
    if max_schemes:
        outcomes = _max_bootstrap_multi(data, model, k_used, max_schemes, cfg, se_flavor)
        fits = fit_all_parsimonious(data, model, k_used, se_flavor)
        for s in max_schemes:
            base = max_statistic(fits, s, data.n)
            record(outcomes[s.kind].to_result(base))
    wald_requested = [m_ for m_ in methods if m_.startswith("wald")]
    if wald_requested:
        try:
            full = fit_full(data, model, k_used, se_flavor)
            wald = wald_statistic(full, data.n)
            if "wald_asymptotic" in wald_requested:
                record(wald)
            if "wald_normalized" in wald_requested:
                record(normalized_wald(wald, k_used))
            if "wald_bootstrap" in wald_requested:
                outcome = wald_bootstrap(data, model, k_used, cfg, se_flavor)
                record(outcome.to_result(wald, method="wald_bootstrap"))
                # The recentered bootstrap makes identical decisions; surface
                # that equivalence in the output.
                norm_outcome = wald_bootstrap(data, model, k_used, cfg, se_flavor, normalized=True)
                norm_result = TestResult(
                    method="wald_bootstrap",
                    statistic=norm_outcome.observed,
                    p_value=norm_outcome.p_value,
                    k_used=k_used,
                    n=data.n,
                )
                record(norm_result, extra_tag="wald_bootstrap_normalized", decisions_only=True)
        except _NUMERICAL_ERRORS as exc:
            if not capture_errors:
                raise
            for m_ in wald_requested:
                errors.append({"method": m_, "error": type(exc).__name__, "message": str(exc)})
    return results, decisions, errors


def _emit_envelope(args, data: Dataset, k_used: int, levels, results, decisions, errors) -> str:
    invocation = {
        "subcommand": args.subcommand,
        "data": args.data,
        "alpha": levels,
        "M": args.M,
        "k": k_used,
        "weights": args.weights,
        "se": args.se,
        "seed": args.seed,
    }
    envelope = {
        "version": __version__,
        "seed": args.seed,
        "config_digest": _digest(invocation),
        "data": {
            "path": args.data,
            "n": data.n,
            "k_delta": data.k_delta,
            "k_theta": data.k_theta,
            "k_used": k_used,
        },
        "results": [r.to_json_dict() for r in results],
        "decisions": decisions,
    }
    if errors:
        envelope["errors"] = errors
    return json.dumps(envelope, indent=2, sort_keys=True) + "\n"


def _cmd_test(args) -> int:
    data = Dataset.from_csv(args.data)
    k_used = _resolve_k_flag(args.k, data)
    levels = args.alpha or [0.01, 0.05, 0.10]
    args.M = args.M if args.M is not None else 1000
    args.seed = args.seed if args.seed is not None else 0
    methods = args.method or (["max_t"] if args.weights == "tstat" else ["max"])
    methods = ["max" if m == "max_bootstrap" else m for m in methods]
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {ALL_METHODS}")
    results, decisions, errors = _run_methods(
        data, methods, k_used, levels, args.M, args.seed, args.se, capture_errors=False
    )
    text = _emit_envelope(args, data, k_used, levels, results, decisions, errors)
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


def _cmd_compare(args) -> int:
    data = Dataset.from_csv(args.data)
    k_used = _resolve_k_flag(args.k, data)
    levels = args.alpha or [0.01, 0.05, 0.10]
    args.M = args.M if args.M is not None else 1000
    args.seed = args.seed if args.seed is not None else 0
    results, decisions, errors = _run_methods(
        data, list(ALL_METHODS), k_used, levels, args.M, args.seed, args.se, capture_errors=True
    )
    text = _emit_envelope(args, data, k_used, levels, results, decisions, errors)
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


def _cmd_mc(args) -> int:
    cfg = load_config(args.config)
    cfg = override_config(
        cfg,
        replications=args.replications,
        workers=args.workers,
        seed=args.seed,
        bootstrap_m=args.M,
        output_path=args.out,
        output_format=args.format,
    )
    report = run_experiment(cfg)
    out_path = cfg.output_path
    if out_path is None:
        raise ConfigInvalid("no output path: set [output].path in the config or pass --out")
    emit_report(report, cfg.output_format, out_path)
    print(f"maxzero {__version__}  seed {cfg.seed}  config digest {_digest(cfg.as_dict())}")
    for line in report.summary_lines():
        print(line)
    print(f"report written to {out_path} ({cfg.output_format}), wall time {report.wall_time_s:.1f}s")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    # Pin BLAS to one thread so output bytes do not depend on core count.
    import threadpoolctl

    threadpoolctl.threadpool_limits(limits=1)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.subcommand == "test":
            return _cmd_test(args)
        if args.subcommand == "compare":
            return _cmd_compare(args)
        return _cmd_mc(args)
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
