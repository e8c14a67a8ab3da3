"""Ensemble driver determinism (split-invariant RNG streams), the three-way
diffusion-constant concordance on the constant-rate model, CLT test machinery
in raw-sample mode, and the drift/energy scan helpers.
"""

import math

import numpy as np
import pytest

from kickmc.dynamics import (SimParams, make_initial_sampler, simulate,
                             stream_rng)
from kickmc.ensemble import (DecayRow, EnsembleConfig, EnsembleError,
                             GaussianJointReference, abs_momentum_test,
                             bootstrap_se, clt_tests, drift_decay_scan,
                             energy_growth, estimate_sigma, run_ensemble)
from kickmc.model import ModelSpec, Potential, standard_cosine_model


class TestRunEnsemble:
    def test_shapes_and_flags(self, cos_model):
        cfg = EnsembleConfig(model=cos_model, n=6, t=10.0,
                             s_grid=(0.5, 1.0), seed=3, h=5e-3, eps_e=1e-6)
        res = run_ensemble(cfg)
        assert res.x_hat.shape == (6, 2) and res.k_hat.shape == (6, 2)
        assert res.e_t.shape == (6,)
        assert not res.failed.any() and res.n_ok == 6
        assert np.all(np.isfinite(res.ok_rows(res.k_hat)))

    def test_rows_match_standalone_simulate(self, cos_model):
        # the ensemble is nothing but simulate() driven by per-index streams
        cfg = EnsembleConfig(model=cos_model, n=6, t=10.0,
                             s_grid=(0.5, 1.0), seed=3, h=5e-3, eps_e=1e-6)
        res = run_ensemble(cfg)
        rt = math.sqrt(cfg.t)
        init = make_initial_sampler(None)
        for j in (0, 5):
            rng = stream_rng(cfg.seed, j, domain=0)
            traj = simulate(cos_model, cfg.t, initial=init(rng),
                            params=cfg.sim_params(),
                            obs_times=np.asarray(cfg.s_grid) * cfg.t,
                            rng=rng)
            assert np.array_equal(res.x_hat[j], traj.obs_x / (cfg.t * rt))
            assert np.array_equal(res.k_hat[j], traj.obs_k / rt)
            assert res.qv[j] == traj.qv_total

    def test_worker_split_invariance(self, cos_model):
        base = dict(model=cos_model, n=16, t=8.0, s_grid=(1.0,), seed=11,
                    h=5e-3, eps_e=1e-6)
        r1 = run_ensemble(EnsembleConfig(workers=1, **base))
        r2 = run_ensemble(EnsembleConfig(workers=2, **base))
        for name in ("x_hat", "k_hat", "e_t", "drift_sup", "qv", "qvp"):
            assert np.array_equal(getattr(r1, name), getattr(r2, name))

    def test_config_validation(self, hom):
        with pytest.raises(ValueError):
            EnsembleConfig(model=hom, n=0, t=1.0)
        with pytest.raises(ValueError):
            EnsembleConfig(model=hom, n=1, t=0.0)
        with pytest.raises(ValueError):
            EnsembleConfig(model=hom, n=1, t=1.0, s_grid=(1.0, 0.5))
        with pytest.raises(ValueError):
            EnsembleConfig(model=hom, n=1, t=1.0, s_grid=(0.0, 1.0))
        with pytest.raises(ValueError):
            EnsembleConfig(model=hom, n=1, t=1.0, s_grid=(0.5, 1.5))

    def test_too_many_failures_raise(self):
        # steep potential with a coarse step and an unreachable energy
        # budget: every trajectory aborts, which must not pass silently
        model = ModelSpec.build(Potential(kind="cosine", amplitude=2.0),
                                standard_cosine_model().kicks)
        cfg = EnsembleConfig(model=model, n=2, t=2.0, seed=0,
                             h=0.5, eps_e=1e-15)
        with pytest.raises(EnsembleError):
            run_ensemble(cfg)

    def test_reducers_run_per_trajectory(self, hom):
        cfg = EnsembleConfig(model=hom, n=5, t=10.0, seed=7,
                             record_events=True)
        res = run_ensemble(cfg, reducers=lambda tr, m: int(tr.n_fired))
        red = res.extras["reduced"]
        assert len(red) == 5
        for j in (0, 4):
            rng = stream_rng(cfg.seed, j, domain=0)
            traj = simulate(hom, cfg.t, initial=make_initial_sampler(None)(rng),
                            params=cfg.sim_params(),
                            obs_times=np.asarray(cfg.s_grid) * cfg.t, rng=rng)
            assert red[j] == traj.n_fired
        plain = run_ensemble(EnsembleConfig(model=hom, n=5, t=10.0, seed=7))
        assert "reduced" not in plain.extras


class TestSigmaEstimates:
    def test_three_routes_agree_on_constant_rate_model(self, hom):
        cfg = EnsembleConfig(model=hom, n=2000, t=100.0, seed=5)
        est = estimate_sigma(run_ensemble(cfg))
        assert est.quadrature == 1.0
        assert est.qv_rate == pytest.approx(1.0, abs=3 * est.qv_rate_se)
        assert est.var_rate == pytest.approx(1.0, abs=3 * est.var_rate_se)
        assert est.mutually_consistent(3.0)

    def test_input_requirements(self, hom):
        small = run_ensemble(EnsembleConfig(model=hom, n=50, t=5.0, seed=1))
        with pytest.raises(ValueError):
            estimate_sigma(small)
        partial = run_ensemble(EnsembleConfig(model=hom, n=120, t=5.0,
                                              seed=1, s_grid=(0.5,)))
        with pytest.raises(ValueError):
            estimate_sigma(partial)

    def test_bootstrap_se_tracks_parametric_rate(self):
        rng = np.random.default_rng(42)
        data = rng.standard_normal(4000)
        se = bootstrap_se(np.mean, data, np.random.default_rng(1))
        assert se == pytest.approx(1.0 / math.sqrt(4000), rel=0.2)


class TestGaussianJointReference:
    def test_covariance_and_inverse(self):
        ref = GaussianJointReference(sigma=1.08125)
        want = 1.08125 * np.array([[1 / 3, 1 / 2], [1 / 2, 1.0]])
        np.testing.assert_allclose(ref.cov(1.0), want, atol=1e-15)
        inv = ref.inverse_cov_s1()
        np.testing.assert_allclose(
            inv, np.array([[12.0, -6.0], [-6.0, 4.0]]) / 1.08125, atol=1e-15)
        np.testing.assert_allclose(ref.cov(1.0) @ inv, np.eye(2), atol=1e-12)

    def test_inner_time_scaling(self):
        ref = GaussianJointReference(sigma=2.0)
        c = ref.cov(0.5)
        assert c[1, 1] == pytest.approx(2.0 * 0.5)
        assert c[0, 0] == pytest.approx(2.0 * 0.5**3 / 3.0)
        assert c[0, 1] == pytest.approx(2.0 * 0.5**2 / 2.0)

    def test_density_normalizes(self):
        ref = GaussianJointReference(sigma=1.3)
        g = np.linspace(-6.0, 6.0, 801)
        xx, kk = np.meshgrid(g, g, indexing="ij")
        mass = np.trapezoid(np.trapezoid(ref.density_s1(xx, kk), g, axis=1),
                            g)
        assert mass == pytest.approx(1.0, abs=1e-6)

    def test_sampler_matches_cov(self):
        ref = GaussianJointReference(sigma=1.0)
        xk = ref.sample(1.0, 200_000, np.random.default_rng(8))
        np.testing.assert_allclose(np.cov(xk.T), ref.cov(1.0), atol=0.01)


class TestCltMachinery:
    def test_raw_samples_from_the_reference_pass(self):
        ref = GaussianJointReference(sigma=1.08125)
        rng = np.random.default_rng(12)
        s_grid = (0.5, 1.0)
        n = 4000
        arr = np.stack([ref.sample(s, n, rng) for s in s_grid], axis=1)
        summary = clt_tests(arr, ref, s_grid=s_grid)
        assert np.all(summary.ks_p > 0.01)
        assert np.all(summary.cov_rel_err < 0.15)
        assert summary.chi2_dof == 35
        assert summary.chi2_p > 0.01

    def test_raw_mode_requirements(self):
        ref = GaussianJointReference(sigma=1.0)
        arr = ref.sample(1.0, 2000, np.random.default_rng(0))[:, None, :]
        with pytest.raises(ValueError):
            clt_tests(arr, ref)                      # no s_grid
        with pytest.raises(ValueError):
            clt_tests(arr[:500], ref, s_grid=(1.0,))  # too few samples

    def test_abs_momentum_on_halfnormal_draws(self):
        rng = np.random.default_rng(3)
        vals = np.abs(rng.normal(0.0, math.sqrt(1.08125), size=5000))
        rep = abs_momentum_test(vals, sigma=1.08125)
        assert rep.law == "halfnorm"
        assert rep.p > 0.01
        with pytest.raises(ValueError):
            abs_momentum_test(vals)                  # sigma required
        with pytest.raises(ValueError):
            abs_momentum_test(vals[:100], sigma=1.0)

    def test_summary_csv_roundtrip(self, tmp_path):
        ref = GaussianJointReference(sigma=1.0)
        rng = np.random.default_rng(4)
        arr = ref.sample(1.0, 1500, rng)[:, None, :]
        summary = clt_tests(arr, ref, s_grid=(1.0,))
        path = tmp_path / "stats.csv"
        summary.to_csv(path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 2
        vals = [float(c) for c in lines[1].split(",")]
        assert vals[0] == 1.0
        assert vals[3] == summary.cov[0][0, 0]


class TestDriftAndEnergyScans:
    def test_zero_potential_drift_is_identically_zero(self, hom):
        rows = drift_decay_scan(hom, [5.0, 10.0, 20.0], n=40, seed=2)
        assert [r.t for r in rows] == [5.0, 10.0, 20.0]
        for r in rows:
            assert abs(r.mean) < 1e-12

    def test_scan_input_validation(self, hom):
        with pytest.raises(ValueError):
            drift_decay_scan(hom, [5.0, 10.0], n=10)
        with pytest.raises(ValueError):
            drift_decay_scan(hom, [10.0, 5.0, 20.0], n=10)

    def test_energy_growth_recovers_exact_line(self):
        t_list = [10.0, 20.0, 40.0]
        e_arrays = [np.full(50, 3.0 + 0.55 * t) for t in t_list]
        fit = energy_growth(t_list, e_arrays)
        assert fit.slope == pytest.approx(0.55, abs=1e-12)
        assert fit.intercept == pytest.approx(3.0, abs=1e-10)
        assert fit.se < 1e-12

    def test_energy_growth_needs_three_horizons(self):
        with pytest.raises(ValueError):
            energy_growth([1.0, 2.0], [np.ones(5), np.ones(5)])
