"""Acceptance criteria, one test per criterion, each printing a verdict line.

Run with ``pytest tests/test_acceptance.py -v -s``. Criterion 2 documents a
known irreproducibility: the published power pair for its design cell is not
attainable from the described data-generating process and algorithms (see
the analysis printed by the test); the test states the target faithfully and
is expected to fail its max-power clause.
"""

import json
from fractions import Fraction

import numpy as np
from scipy.optimize import minimize

from maxzero import (
    AlternativeSpec,
    BootstrapConfig,
    Dataset,
    DgpSpec,
    ExperimentConfig,
    RngStream,
    emit_report,
    expansion_diagnostic,
    gen_dataset,
    linear_response,
    max_bootstrap,
    max_statistic,
    population_parsimonious,
    rate_rule_k,
    run_experiment,
    wald_bootstrap,
    wald_statistic,
)
from maxzero.estimation import fit_all_parsimonious, fit_full, fit_parsimonious
from maxzero.inference import FLAT, INV_SE

from test_estimation import random_dataset


def verdict(num, name, ok, detail):
    print(f"[criterion {num:>2}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok


class TestCriterion1SizeReproduction:
    def test_benchmark_null_cell(self):
        cfg = ExperimentConfig(
            dgp=DgpSpec(n=250, k_delta=0, k_theta=10, covariate_case="cross_block_dependent"),
            methods=("max",),
            levels=(0.01, 0.05, 0.10),
            replications=1000,
            k_rule="fixed",
            k_fixed=10,
            bootstrap_m=200,
            seed=11,
            workers=2,
        )
        report = run_experiment(cfg)
        targets = {0.01: 0.003, 0.05: 0.046, 0.10: 0.094}
        rates = {a: report.rate("max", a) for a in targets}
        ok = all(abs(rates[a] - t) <= 0.03 for a, t in targets.items())
        ok = ok and report.wall_time_s < 300.0
        assert verdict(
            1,
            "size reproduction",
            ok,
            f"sizes {tuple(rates.values())} vs targets {tuple(targets.values())} "
            f"(tol 0.03), wall {report.wall_time_s:.0f}s (< 300s)",
        )


class TestCriterion2PowerDominance:
    def test_power_cell_alternative_i(self):
        # Stated design: single lead test coefficient at the documented
        # magnitude. The signal-to-noise this yields (noncentrality about
        # sqrt(n) * 0.001 * sd(x) < 0.04) cannot move any test off its
        # size, so the published max power for this cell is unreachable;
        # the target is asserted as stated.
        cfg = ExperimentConfig(
            dgp=DgpSpec(
                n=100,
                k_delta=0,
                k_theta=35,
                covariate_case="cross_block_dependent",
                theta=AlternativeSpec("alt_i", magnitude=0.001),
            ),
            methods=("max", "wald_bootstrap"),
            levels=(0.05,),
            replications=500,
            k_rule="fixed",
            k_fixed=35,
            bootstrap_m=200,
            seed=22,
            workers=2,
        )
        report = run_experiment(cfg)
        max_power = report.rate("max", 0.05)
        wald_power = report.rate("wald_bootstrap", 0.05)
        ok_max = abs(max_power - 0.762) <= 0.08
        ok_wald = wald_power <= 0.25
        verdict(
            2,
            "power dominance",
            ok_max and ok_wald,
            f"max power {max_power:.3f} (target 0.762 +- 0.08: {ok_max}), "
            f"wald power {wald_power:.3f} (<= 0.25: {ok_wald})",
        )
        assert ok_wald, f"wald bootstrap power {wald_power} above 0.25"
        assert ok_max, (
            f"max power {max_power} outside 0.762 +- 0.08; unreachable from the "
            "stated design (see notes: the published cell implies a far larger "
            "signal than the documented coefficient 0.001)"
        )


class TestCriterion3WaldBootstrapEquivalence:
    def test_identical_indicators_and_p_values(self):
        rng = np.random.default_rng(33)
        model_cache = {}
        bad = 0
        for trial in range(200):
            n = int(rng.integers(40, 81))
            kd = int(rng.integers(0, 3))
            kt = int(rng.integers(2, 7))
            theta = rng.choice([0.0, 0.3]) * rng.standard_normal(kt)
            data = random_dataset(rng, n, kd, kt, theta=theta)
            model = model_cache.setdefault(kd, linear_response(kd))
            cfg = BootstrapConfig(M=64, seed=trial, record_draws=True)
            plain = wald_bootstrap(data, model, kt, cfg)
            norm = wald_bootstrap(data, model, kt, cfg, normalized=True)
            same_ind = np.array_equal(plain.draws > plain.observed, norm.draws > norm.observed)
            same_p = plain.p_value == norm.p_value
            bad += not (same_ind and same_p)
        ok = bad == 0
        assert verdict(3, "wald bootstrap equivalence", ok, f"{200 - bad}/200 instances identical")


class TestCriterion4EstimatorOracle:
    def test_closed_form_matches_derivative_free(self):
        rng = np.random.default_rng(44)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(10, 41))
            kd = int(rng.integers(0, 4))
            data = random_dataset(rng, n, kd, 2, theta=rng.standard_normal(2))
            fit = fit_parsimonious(data, linear_response(kd), 1)
            xi = np.column_stack([data.x_delta, data.x_theta[:, 0]])

            def sse(b):
                r = data.y - xi @ b
                return r @ r

            res = minimize(sse, np.zeros(kd + 1), method="Nelder-Mead",
                           options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000})
            res = minimize(sse, res.x, method="Nelder-Mead",
                           options={"xatol": 1e-11, "fatol": 1e-15, "maxiter": 20000})
            ours = np.concatenate([fit.beta.delta, [fit.theta_hat]])
            worst = max(worst, float(np.max(np.abs(ours - res.x))))
        ok = worst <= 1e-7
        assert verdict(4, "estimator oracle equivalence", ok, f"max parameter gap {worst:.2e} (tol 1e-7)")


class TestCriterion5IdentificationOracle:
    def test_population_moment_algebra(self):
        rng = np.random.default_rng(55)
        exact_zero_ok = True
        # Null case: exact rational arithmetic, theta* must be exactly zero
        # and every marginal nuisance vector must equal the truth.
        for _ in range(20):
            kd = int(rng.integers(1, 4))
            kt = int(rng.integers(1, 5))
            sigma, delta0 = _random_rational_design(rng, kd, kt)
            beta0 = delta0 + [Fraction(0)] * kt
            deltas, thetas = population_parsimonious(sigma, beta0, kd)
            exact_zero_ok = exact_zero_ok and all(t == 0 for t in thetas)
            exact_zero_ok = exact_zero_ok and all(list(d) == delta0 for d in deltas)
        # Alternative case: some marginal coefficient must move.
        min_max_theta = np.inf
        for _ in range(100):
            kd = int(rng.integers(0, 4))
            kt = int(rng.integers(1, 5))
            sigma, delta0 = _random_rational_design(rng, kd, kt)
            theta0 = [Fraction(int(v), 8) for v in rng.integers(-8, 9, kt)]
            while all(t == 0 for t in theta0):
                theta0 = [Fraction(int(v), 8) for v in rng.integers(-8, 9, kt)]
            _, thetas = population_parsimonious(sigma, delta0 + theta0, kd)
            min_max_theta = min(min_max_theta, max(abs(float(t)) for t in thetas))
        ok = exact_zero_ok and min_max_theta > 1e-8
        assert verdict(
            5,
            "identification oracle",
            ok,
            f"null case exactly zero: {exact_zero_ok}; "
            f"smallest max|theta*| under alternatives {min_max_theta:.3g} (> 1e-8)",
        )


def _random_rational_design(rng, kd, kt):
    dim = kd + kt
    m = rng.integers(-3, 4, (dim, dim))
    sigma_int = m @ m.T + np.eye(dim, dtype=int) * int(rng.integers(1, 4))
    sigma = np.array([[Fraction(int(v)) for v in row] for row in sigma_int], dtype=object)
    delta0 = [Fraction(int(v), 4) for v in rng.integers(-8, 9, kd)]
    return sigma, delta0


class TestCriterion6NullPValueUniformity:
    def test_decile_bands(self):
        spec = DgpSpec(n=250, k_delta=0, k_theta=10, covariate_case="cross_block_dependent")
        model = linear_response(0)
        stride = 2**20
        seed = 66
        pvals = np.empty(1000)
        for r in range(1, 1001):
            data = gen_dataset(spec, RngStream(seed, r * stride))
            cfg = BootstrapConfig(M=200, seed=seed, stream_offset=r * stride + 1)
            pvals[r - 1] = max_bootstrap(data, model, 10, FLAT, cfg).p_value
        deciles = np.arange(0.1, 0.95, 0.1)
        ecdf = np.array([np.mean(pvals <= q) for q in deciles])
        gap = np.max(np.abs(ecdf - deciles))
        ok = gap <= 0.05
        assert verdict(6, "null p-value uniformity", ok, f"max decile gap {gap:.3f} (tol 0.05)")


class TestCriterion7Consistency:
    def test_ramp_alternative_rejects(self):
        cfg = ExperimentConfig(
            dgp=DgpSpec(
                n=250,
                k_delta=0,
                k_theta=10,
                covariate_case="cross_block_dependent",
                theta=AlternativeSpec("alt_ii"),
            ),
            methods=("max",),
            levels=(0.05,),
            replications=300,
            k_rule="fixed",
            k_fixed=10,
            bootstrap_m=200,
            seed=77,
            workers=2,
        )
        rate = run_experiment(cfg).rate("max", 0.05)
        ok = rate >= 0.99
        assert verdict(7, "consistency under the ramp alternative", ok, f"rejection rate {rate:.3f} (>= 0.99)")


class TestCriterion8InvarianceSuite:
    def test_rescaling_permutation_reparameterization(self):
        rng = np.random.default_rng(88)
        data = random_dataset(rng, 80, 1, 5, theta=[0.4, 0.0, -0.2, 0.0, 0.1])
        model = linear_response(1)
        n = data.n

        # Max-t invariance to rescaling a test column.
        base_fits = fit_all_parsimonious(data, model, 5)
        base_stat = max_statistic(base_fits, INV_SE, n)
        base_p = max_bootstrap(data, model, 5, INV_SE, BootstrapConfig(M=100, seed=8)).p_value
        scale_ok = True
        for c in (3.0, -0.25, 1e3):
            scales = np.ones(5)
            scales[0] = c
            scaled = Dataset(y=data.y, x_delta=data.x_delta, x_theta=data.x_theta * scales)
            fits_c = fit_all_parsimonious(scaled, model, 5)
            stat_c = max_statistic(fits_c, INV_SE, n)
            p_c = max_bootstrap(scaled, model, 5, INV_SE, BootstrapConfig(M=100, seed=8)).p_value
            scale_ok &= abs(stat_c.statistic - base_stat.statistic) <= 1e-10
            scale_ok &= stat_c.argmax_index == base_stat.argmax_index
            scale_ok &= (p_c < 0.05) == (base_p < 0.05)

        # Flat max permutation equivariance.
        perm = [4, 2, 0, 1, 3]
        flat = max_statistic(base_fits, FLAT, n)
        data_p = Dataset(y=data.y, x_delta=data.x_delta, x_theta=data.x_theta[:, perm])
        flat_p = max_statistic(fit_all_parsimonious(data_p, model, 5), FLAT, n)
        perm_ok = abs(flat_p.statistic - flat.statistic) <= 1e-12 * max(1.0, flat.statistic)
        for new_pos, old_pos in enumerate(perm):
            diff = abs(flat_p.per_index[new_pos][0] - flat.per_index[old_pos][0])
            perm_ok &= diff <= 1e-12 * max(1.0, abs(flat.per_index[old_pos][0]))
        perm_ok &= flat_p.argmax_index == perm.index(flat.argmax_index - 1) + 1

        # Wald invariance under full-rank reparameterization of the test block.
        w = wald_statistic(fit_full(data, model, 5, "homoskedastic"), n).statistic
        repar_ok = True
        for _ in range(25):
            c = rng.standard_normal((5, 5))
            while abs(np.linalg.det(c)) < 0.1:
                c = rng.standard_normal((5, 5))
            data_c = Dataset(y=data.y, x_delta=data.x_delta, x_theta=data.x_theta @ c)
            w_c = wald_statistic(fit_full(data_c, model, 5, "homoskedastic"), n).statistic
            repar_ok &= abs(w_c - w) <= 1e-8 * max(1.0, abs(w))

        ok = scale_ok and perm_ok and repar_ok
        assert verdict(
            8,
            "invariance suite",
            ok,
            f"rescaling {scale_ok}, permutation {perm_ok}, reparameterization {repar_ok}",
        )


class TestCriterion9Determinism:
    def test_worker_count_invariance(self, tmp_path):
        files = {}
        for workers in (1, 3):
            cfg = ExperimentConfig(
                dgp=DgpSpec(n=80, k_delta=1, k_theta=6, covariate_case="cross_block_dependent"),
                methods=("max", "max_t", "wald_bootstrap"),
                levels=(0.05, 0.10),
                replications=40,
                k_rule="fixed",
                k_fixed=6,
                bootstrap_m=50,
                seed=99,
                workers=workers,
            )
            report = run_experiment(cfg)
            csv_path = tmp_path / f"w{workers}.csv"
            json_path = tmp_path / f"w{workers}.json"
            emit_report(report, "csv", str(csv_path))
            emit_report(report, "json", str(json_path))
            files[workers] = (csv_path.read_bytes(), json_path.read_bytes())
        ok = files[1] == files[3]
        assert verdict(9, "determinism across workers", ok, "byte-identical csv and json reports")


class TestCriterion10ExpansionDiagnosticTrend:
    def test_median_gap_strictly_decreases(self):
        # Null design with independent covariates: the population
        # second-moment matrix of every marginal design is the identity,
        # which is the normalizer the first-order term is defined with.
        kd = 10
        medians = []
        grid = (500, 2000, 8000)
        for n in grid:
            k = rate_rule_k(n)
            vals = []
            for seed in range(20):
                spec = DgpSpec(n=n, k_delta=kd, k_theta=k, covariate_case="independent", seed=seed)
                data = gen_dataset(spec, RngStream(seed, 0))
                fits = fit_all_parsimonious(data, linear_response(kd), k)
                vals.append(expansion_diagnostic(data, fits, hessian=np.eye(kd + 1)))
            medians.append(float(np.median(vals)))
        ok = medians[0] > medians[1] > medians[2] > 0.0
        assert verdict(
            10,
            "expansion diagnostic trend",
            ok,
            "medians " + " > ".join(f"{m:.4f}" for m in medians) + f" at n={grid}",
        )
