import math

import numpy as np
import pytest

from maxzero.bootstrap import (
    BootstrapConfig,
    BootstrapDegenerate,
    BootstrapDegenerateWarning,
    _generic_max_draws,
    bootstrap_responses,
    dump_draws_csv,
    max_bootstrap,
    wald_bootstrap,
)
from maxzero.estimation import NoConvergence, fit_all_parsimonious, fit_restricted
from maxzero.inference import FLAT, INV_SE
from maxzero.model import Dataset, LinearResponse, linear_response
from maxzero.numerics import RngStream

from test_estimation import random_dataset


class TestEtaAddressing:
    def test_columns_come_from_numbered_streams(self):
        cfg = BootstrapConfig(M=4, seed=11, stream_offset=100)
        eta = cfg.eta_matrix(9)
        for j in range(4):
            np.testing.assert_array_equal(eta[:, j], RngStream(11, 100 + j).normals(9))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BootstrapConfig(M=0)
        with pytest.raises(ValueError):
            BootstrapConfig(M=10, weight_reuse="sometimes")


class TestMaxBootstrapOracle:
    def test_two_draw_hand_computation(self):
        # n=6, no nuisance, two test columns, M=2: every quantity is a short
        # plain-Python sum, fully checkable by hand.
        x1 = [1.0, -2.0, 0.5, 3.0, -1.0, 2.0]
        x2 = [0.5, 1.0, -1.5, 2.0, 0.0, -1.0]
        y = [1.2, -0.7, 0.3, 2.1, -0.4, 0.9]
        data = Dataset(
            y=np.array(y),
            x_delta=np.zeros((6, 0)),
            x_theta=np.column_stack([x1, x2]),
        )
        cfg = BootstrapConfig(M=2, seed=5, record_draws=True)
        out = max_bootstrap(data, linear_response(0), 2, FLAT, cfg)

        def theta(col, resp):
            num = sum(c * r for c, r in zip(col, resp))
            den = sum(c * c for c in col)
            return num / den

        t_obs = math.sqrt(6) * max(abs(theta(x1, y)), abs(theta(x2, y)))
        draws = []
        for j in range(2):
            eta = RngStream(5, 1 + j).normals(6)
            y_star = [yy * ee for yy, ee in zip(y, eta)]  # restricted fit is y itself
            draws.append(math.sqrt(6) * max(abs(theta(x1, y_star)), abs(theta(x2, y_star))))
        p_hand = sum(d > t_obs for d in draws) / 2.0
        assert out.observed == pytest.approx(t_obs, rel=1e-12)
        np.testing.assert_allclose(out.draws, draws, rtol=1e-12)
        assert out.p_value == p_hand

    def test_p_value_matches_recorded_draws(self):
        rng = np.random.default_rng(0)
        data = random_dataset(rng, 40, 1, 3)
        out = max_bootstrap(
            data, linear_response(1), 3, INV_SE, BootstrapConfig(M=37, seed=3, record_draws=True)
        )
        assert out.p_value == np.mean(out.draws > out.observed)


class TestNullImposition:
    def test_y_star_ignores_test_block(self):
        rng = np.random.default_rng(1)
        data = random_dataset(rng, 30, 2, 3)
        garbage = Dataset(
            y=data.y, x_delta=data.x_delta, x_theta=rng.uniform(5, 9, (30, 3))
        )
        model = linear_response(2)
        ra = fit_restricted(data, model)
        rb = fit_restricted(garbage, model)
        eta = BootstrapConfig(M=5, seed=9).eta_matrix(30)
        np.testing.assert_array_equal(
            bootstrap_responses(ra.fitted, ra.residuals, eta),
            bootstrap_responses(rb.fitted, rb.residuals, eta),
        )

    def test_wald_mean_uses_nuisance_only(self):
        # Identical y and X_delta, different X_theta: the regenerated mean
        # differs only because the unrestricted residuals differ.
        rng = np.random.default_rng(2)
        data = random_dataset(rng, 40, 2, 2)
        out1 = wald_bootstrap(data, linear_response(2), 2, BootstrapConfig(M=8, seed=4, record_draws=True))
        assert out1.draws.shape == (8,)


class TestDegenerateCases:
    def test_zero_residuals_warn_and_p_zero(self):
        data = Dataset(y=np.zeros(12), x_delta=np.zeros((12, 0)), x_theta=np.eye(12)[:, :2])
        with pytest.warns(BootstrapDegenerateWarning):
            out = max_bootstrap(data, linear_response(0), 2, FLAT, BootstrapConfig(M=10, seed=1))
        assert out.p_value == 0.0
        assert out.observed == 0.0

    def test_failure_budget_enforced(self, monkeypatch):
        import maxzero.bootstrap as bt

        rng = np.random.default_rng(3)
        data = random_dataset(rng, 25, 0, 2)
        model = linear_response(0)
        restricted = fit_restricted(data, model)
        fits = fit_all_parsimonious(data, model, 2)
        cfg = BootstrapConfig(M=50, seed=8)
        # Per-draw regenerated response maxima; a cutoff below the j-th
        # largest makes exactly j refits fail.
        maxima = np.array(
            [
                np.max(
                    bootstrap_responses(
                        restricted.fitted,
                        restricted.residuals,
                        RngStream(cfg.seed, cfg.stream_offset + j).normals(25),
                    )
                )
                for j in range(cfg.M)
            ]
        )

        class Opaque(LinearResponse):
            """Forces the generic per-draw driver."""

        def run_with_cutoff(cutoff):
            def tripwire(data_, model_, k_, flavor_):
                if np.max(data_.y) > cutoff:
                    raise NoConvergence("tripwire")
                return fit_all_parsimonious(data_, LinearResponse(0), k_, flavor_)

            monkeypatch.setattr(bt, "fit_all_parsimonious", tripwire)
            return _generic_max_draws(data, Opaque(0), 2, [FLAT], cfg, "robust", restricted, fits)

        # 3 failing draws out of 50 exceeds the 1% budget.
        with pytest.raises(BootstrapDegenerate):
            run_with_cutoff(np.sort(maxima)[-3] - 1e-9)
        # No failing draws: everything kept.
        stats, failures = run_with_cutoff(maxima.max() + 1.0)
        assert not failures and stats["flat"].shape == (50,)


class TestWeightReuse:
    def test_modes_differ_for_t_ratios(self):
        rng = np.random.default_rng(4)
        data = random_dataset(rng, 50, 1, 3, theta=[0.3, 0.0, 0.0])
        p_reuse = max_bootstrap(
            data, linear_response(1), 3, INV_SE,
            BootstrapConfig(M=60, seed=2, weight_reuse="reuse_sample_weights", record_draws=True),
        )
        p_fresh = max_bootstrap(
            data, linear_response(1), 3, INV_SE,
            BootstrapConfig(M=60, seed=2, weight_reuse="recompute_per_draw", record_draws=True),
        )
        assert not np.array_equal(p_reuse.draws, p_fresh.draws)

    @pytest.mark.parametrize("flavor", ["robust", "homoskedastic"])
    def test_recompute_matches_per_draw_refit(self, flavor):
        rng = np.random.default_rng(5)
        data = random_dataset(rng, 35, 2, 3)
        model = linear_response(2)
        cfg = BootstrapConfig(M=12, seed=6, weight_reuse="recompute_per_draw", record_draws=True)
        out = max_bootstrap(data, model, 3, INV_SE, cfg, se_flavor=flavor)
        restricted = fit_restricted(data, model)
        for j in range(cfg.M):
            eta = RngStream(cfg.seed, cfg.stream_offset + j).normals(35)
            y_j = bootstrap_responses(restricted.fitted, restricted.residuals, eta)
            refits = fit_all_parsimonious(
                Dataset(y=y_j, x_delta=data.x_delta, x_theta=data.x_theta), model, 3, flavor
            )
            t_j = max(abs(f.theta_hat) / f.se_theta for f in refits)
            assert out.draws[j] == pytest.approx(t_j, rel=1e-9)

    def test_flat_ignores_reuse_mode(self):
        rng = np.random.default_rng(6)
        data = random_dataset(rng, 40, 0, 2)
        a = max_bootstrap(data, linear_response(0), 2, FLAT,
                          BootstrapConfig(M=25, seed=7, weight_reuse="reuse_sample_weights"))
        b = max_bootstrap(data, linear_response(0), 2, FLAT,
                          BootstrapConfig(M=25, seed=7, weight_reuse="recompute_per_draw"))
        assert a.p_value == b.p_value


class TestGenericPathAgreement:
    def test_nonlinear_driver_matches_linear_fast_path(self):
        class OpaqueLinear(LinearResponse):
            """Same response, but hides its linearity from type checks."""

        rng = np.random.default_rng(7)
        data = random_dataset(rng, 30, 1, 2)
        cfg = BootstrapConfig(M=15, seed=10, record_draws=True)
        fast = max_bootstrap(data, linear_response(1), 2, FLAT, cfg)
        model = OpaqueLinear(1)
        restricted = fit_restricted(data, model)
        fits = fit_all_parsimonious(data, model, 2)
        stats, _ = _generic_max_draws(data, model, 2, [FLAT], cfg, "robust", restricted, fits)
        np.testing.assert_allclose(stats["flat"], fast.draws, rtol=1e-9)


class TestWaldBootstrap:
    def test_normalized_identical_decisions_small(self):
        rng = np.random.default_rng(8)
        for trial in range(10):
            data = random_dataset(rng, 45, 1, 3, theta=0.2 * rng.standard_normal(3))
            cfg = BootstrapConfig(M=30, seed=trial, record_draws=True)
            plain = wald_bootstrap(data, linear_response(1), 3, cfg)
            norm = wald_bootstrap(data, linear_response(1), 3, cfg, normalized=True)
            np.testing.assert_array_equal(
                plain.draws > plain.observed, norm.draws > norm.observed
            )
            assert plain.p_value == norm.p_value

    def test_determinism(self):
        rng = np.random.default_rng(9)
        data = random_dataset(rng, 40, 0, 4)
        cfg = BootstrapConfig(M=40, seed=1234)
        a = wald_bootstrap(data, linear_response(0), 4, cfg)
        b = wald_bootstrap(data, linear_response(0), 4, cfg)
        assert a.p_value == b.p_value

    def test_single_parameter_agrees_with_max_t(self):
        # One restriction: both are t-type tests and should mostly agree.
        rng = np.random.default_rng(10)
        agree = 0
        trials = 50
        for trial in range(trials):
            theta = float(rng.choice([0.0, 0.2, 0.45]))
            data = random_dataset(rng, 80, 1, 1, theta=[theta])
            cfg = BootstrapConfig(M=99, seed=trial)
            p_wald = wald_bootstrap(data, linear_response(1), 1, cfg, "homoskedastic").p_value
            p_max = max_bootstrap(
                data, linear_response(1), 1, INV_SE, cfg, se_flavor="homoskedastic"
            ).p_value
            agree += (p_wald < 0.1) == (p_max < 0.1)
        assert agree >= 0.9 * trials

    def test_robust_flavor_runs(self):
        rng = np.random.default_rng(11)
        data = random_dataset(rng, 50, 1, 2)
        out = wald_bootstrap(data, linear_response(1), 2, BootstrapConfig(M=20, seed=3), "robust")
        assert 0.0 <= out.p_value <= 1.0


class TestDrawDump:
    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        data = random_dataset(rng, 30, 0, 2)
        out = max_bootstrap(
            data, linear_response(0), 2, FLAT, BootstrapConfig(M=9, seed=2, record_draws=True)
        )
        path = tmp_path / "draws.csv"
        dump_draws_csv(out, str(path))
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "j,statistic"
        assert len(rows) == 10
        assert float(rows[1].split(",")[1]) == out.draws[0]

    def test_requires_recorded_draws(self):
        out = max_bootstrap(
            random_dataset(np.random.default_rng(13), 30, 0, 2),
            linear_response(0), 2, FLAT, BootstrapConfig(M=5, seed=1),
        )
        with pytest.raises(ValueError):
            dump_draws_csv(out, "ignored.csv")
