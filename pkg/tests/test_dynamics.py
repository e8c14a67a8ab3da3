"""Single-trajectory engine: flow accuracy against an independent high-order
integrator, the frozen randomness protocol, kick gating, and the exact
bookkeeping accumulated along runs.
"""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from kickmc.dynamics import (IntegrationError, PhaseState, SimParams,
                             Trajectory, attempt_kick, draw_alarm_randomness,
                             flow, make_initial_sampler, next_alarm, simulate,
                             stream_rng)
from kickmc.model import ModelSpec, Potential, standard_cosine_model


def dop853_flow(model, x0, k0, dt):
    """Reference integration of the same Hamiltonian field at tight rtol."""
    pot = model.potential

    def rhs(_t, y):
        return [y[1], float(pot.force(y[0]))]

    sol = solve_ivp(rhs, (0.0, dt), [x0, k0], method="DOP853",
                    rtol=1e-12, atol=1e-12, dense_output=False)
    return sol.y[0, -1], sol.y[1, -1]


class TestFlow:
    def test_matches_dop853_oracle(self, cos_model):
        st = PhaseState(0.25, 0.8)
        out = flow(st, 3.7, cos_model, SimParams(h=1e-3, eps_e=1e-6))
        xr, kr = dop853_flow(cos_model, 0.25, 0.8, 3.7)
        assert out.k == pytest.approx(kr, abs=2e-5)
        assert out.x == pytest.approx(xr, abs=2e-5)

    def test_zero_potential_exact(self, hom):
        st = PhaseState(0.3, -1.7)
        out = flow(st, 5.0, hom, SimParams(h=1e-3))
        assert out.k == -1.7
        assert out.x == pytest.approx(0.3 - 1.7 * 5.0, abs=1e-12)

    def test_energy_conserved_within_budget(self, cos_model):
        p = SimParams(h=1e-3, eps_e=1e-8)
        st = PhaseState(0.1, 1.2)
        e0 = 0.5 * 1.2**2 + float(cos_model.potential.value(0.1))
        out = flow(st, 2.0, cos_model, p)
        e1 = 0.5 * out.k**2 + float(cos_model.potential.value(out.x))
        assert abs(e1 - e0) <= p.eps_e * max(1.0, abs(e0))

    def test_reports_unreachable_budget(self):
        model = ModelSpec.build(Potential(kind="cosine", amplitude=2.0),
                                standard_cosine_model().kicks)
        with pytest.raises(IntegrationError):
            flow(PhaseState(0.2, 1.0), 1.0, model,
                 SimParams(h=0.5, eps_e=1e-15, max_halvings=0))

    def test_params_validated(self):
        with pytest.raises(ValueError):
            SimParams(h=0.0)
        with pytest.raises(ValueError):
            SimParams(eps_e=-1.0)


class TestRandomnessProtocol:
    def test_stream_reproducible_and_independent(self):
        a1 = stream_rng(42, 0).random(4)
        a2 = stream_rng(42, 0).random(4)
        b = stream_rng(42, 1).random(4)
        c = stream_rng(43, 0).random(4)
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, b)
        assert not np.array_equal(a1, c)

    def test_next_alarm_inverse_cdf(self):
        u = stream_rng(7, 0).random()
        got = next_alarm(stream_rng(7, 0), rate=2.5)
        assert got == pytest.approx(-math.log1p(-u) / 2.5, abs=1e-15)
        with pytest.raises(ValueError):
            next_alarm(stream_rng(7, 0), rate=0.0)

    def test_alarm_draw_order_frozen(self):
        # count, sorted uniforms * t, coin block, kick block, in that order
        rng = stream_rng(11, 2)
        t = 50.0
        n = int(rng.poisson(1.0 * t))
        times = np.sort(rng.random(n)) * t
        coin = rng.random(n)
        kick = rng.random(n)
        at, cu, ku = draw_alarm_randomness(stream_rng(11, 2), 1.0, t)
        assert np.array_equal(at, times)
        assert np.array_equal(cu, coin)
        assert np.array_equal(ku, kick)

    def test_simulate_deterministic(self, cos_model):
        t1 = simulate(cos_model, 20.0, rng=stream_rng(3, 5))
        t2 = simulate(cos_model, 20.0, rng=stream_rng(3, 5))
        assert t1.x_end == t2.x_end and t1.k_end == t2.k_end
        assert t1.m_total == t2.m_total and t1.n_fired == t2.n_fired


class TestAttemptKick:
    def test_coin_gates_and_consumes_two_uniforms(self, cos_model):
        rng = stream_rng(9, 0)
        u_after = stream_rng(9, 0).random(3)[2]   # third draw
        st = PhaseState(0.0, 1.0)
        _out, ev = attempt_kick(st, cos_model.kicks, rng)
        assert ev.fired == (stream_rng(9, 0).random() <
                            float(cos_model.kicks.coin(0.0)))
        assert rng.random() == u_after

    def test_kick_changes_momentum_only(self, cos_model):
        rng = stream_rng(1, 0)
        for _ in range(20):
            st = PhaseState(0.37, -0.5)
            out, ev = attempt_kick(st, cos_model.kicks, rng)
            assert out.x == st.x
            assert out.k == st.k + ev.w
            if not ev.fired:
                assert ev.w == 0.0

    def test_k_post_property(self):
        from kickmc.dynamics import KickEvent
        ev = KickEvent(t=1.0, a=0.5, k_pre=2.0, w=-0.5, fired=True)
        assert ev.k_post == 1.5


class TestSimulate:
    def test_input_validation(self, hom):
        with pytest.raises(ValueError):
            simulate(hom, 0.0)
        with pytest.raises(ValueError):
            simulate(hom, 10.0, obs_times=[3.0, 1.0])
        with pytest.raises(ValueError):
            simulate(hom, 10.0, obs_times=[0.0, 11.0])

    def test_observations_at_grid(self, hom):
        traj = simulate(hom, 10.0, initial=PhaseState(0.2, 0.7),
                        obs_times=[0.0, 5.0, 10.0], seed=21)
        assert traj.obs_x[0] == pytest.approx(0.2)
        assert traj.obs_k[0] == pytest.approx(0.7)
        assert traj.obs_x[-1] == pytest.approx(traj.x_end)
        assert traj.obs_k[-1] == pytest.approx(traj.k_end)

    def test_kick_ledger_totals(self, cos_model):
        traj = simulate(cos_model, 30.0, seed=4,
                        params=SimParams(record_events=True))
        fired = traj.ev_fired == 1
        assert traj.n_fired == int(np.sum(fired))
        assert traj.m_total == pytest.approx(
            math.fsum(traj.ev_w[fired]), abs=1e-12)
        assert traj.qv_total == pytest.approx(
            math.fsum(traj.ev_w[fired] ** 2), abs=1e-12)
        assert np.all(traj.ev_w[~fired] == 0.0)

    def test_energy_identity_on_event_log(self, cos_model):
        # E_T - E_0 = sum over fired kicks of (w k_pre + w^2/2), up to the
        # accumulated per-segment integrator budget
        p = SimParams(h=1e-3, eps_e=1e-8, record_events=True)
        traj = simulate(cos_model, 20.0, seed=13, params=p)
        e0 = 0.5 * traj.k0**2 + float(cos_model.potential.value(traj.x0))
        e_t = traj.energy_end(cos_model)
        fired = traj.ev_fired == 1
        gain = math.fsum(traj.ev_w[fired] * traj.ev_kpre[fired]
                         + 0.5 * traj.ev_w[fired] ** 2)
        scale = max(1.0, abs(e_t), abs(e0))
        assert abs(e_t - e0 - gain) <= traj.n_segments * p.eps_e * scale

    def test_zero_potential_momentum_is_pure_jumps(self, hom):
        traj = simulate(hom, 50.0, seed=2)
        assert traj.k_end - traj.k0 == pytest.approx(traj.m_total, abs=1e-12)
        assert traj.drift_min == pytest.approx(0.0, abs=1e-12)
        assert traj.drift_max == pytest.approx(0.0, abs=1e-12)

    def test_status_and_failure(self, hom):
        traj = simulate(hom, 5.0, seed=0)
        assert traj.ok
        model = ModelSpec.build(Potential(kind="cosine", amplitude=2.0),
                                hom.kicks)
        with pytest.raises(IntegrationError):
            simulate(model, 5.0, seed=0, initial=PhaseState(0.2, 1.0),
                     params=SimParams(h=0.5, eps_e=1e-15, max_halvings=0))


class TestObservers:
    def test_replay_matches_arrays(self, cos_model):
        seen = {"events": [], "segments": 0, "finished": None}

        class Probe:
            def on_event(self, ev):
                seen["events"].append(ev)

            def on_segment(self, t0, t1, kmin, kmax, absmin):
                seen["segments"] += 1
                assert t1 >= t0
                assert kmin <= kmax

            def finish(self, traj):
                seen["finished"] = traj

        traj = simulate(cos_model, 15.0, seed=8, observers=(Probe(),))
        assert seen["finished"] is traj
        assert len(seen["events"]) == traj.n_events
        assert seen["segments"] == traj.n_events + 1
        for i, ev in enumerate(seen["events"]):
            assert ev.t == traj.ev_t[i]
            assert ev.w == traj.ev_w[i]

    def test_events_require_recording(self, hom):
        traj = simulate(hom, 5.0, seed=0)
        with pytest.raises(ValueError):
            list(traj.events())


class TestInitialSampler:
    def test_point_default(self):
        s = make_initial_sampler(None)
        st = s(stream_rng(0, 0))
        assert (st.x, st.k) == (0.0, 0.0)

    def test_gaussian_draw_order(self):
        s = make_initial_sampler({"kind": "gaussian", "x": 1.0, "k": -1.0,
                                  "sd_x": 0.5, "sd_k": 2.0})
        rng = stream_rng(5, 0)
        z = stream_rng(5, 0).standard_normal(2)
        st = s(rng)
        assert st.x == pytest.approx(1.0 + 0.5 * z[0])
        assert st.k == pytest.approx(-1.0 + 2.0 * z[1])

    def test_bad_specs(self):
        with pytest.raises(ValueError):
            make_initial_sampler({"kind": "gaussian", "sd_x": -1.0})
        with pytest.raises(ValueError):
            make_initial_sampler({"kind": "uniform"})


def test_torus_coordinate():
    assert PhaseState(-0.25, 0.0).a == pytest.approx(0.75)
    assert PhaseState(3.25, 0.0).a == pytest.approx(0.25)


def test_events_csv_roundtrip(tmp_path, cos_model):
    from kickmc.dynamics import events_to_csv
    traj = simulate(cos_model, 10.0, seed=6,
                    params=SimParams(record_events=True))
    path = tmp_path / "events.csv"
    events_to_csv(traj, path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "t,a,k_pre,w,k_post,fired"
    assert len(rows) == traj.n_events + 1
    first = rows[1].split(",")
    assert float(first[0]) == traj.ev_t[0]          # repr round-trips
