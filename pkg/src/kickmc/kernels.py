"""Hot loops: velocity-Verlet flow, the event-driven trajectory kernel, and
sampling-heavy scan kernels. Everything here is numba-compiled; set
KICKMC_DISABLE_NUMBA=1 to run the same code as plain Python (slow, for
debugging).

Conventions shared by all kernels:
  potential kinds: 0 = zero, 1 = cosine (V = amp*(1+cos(2 pi x))/2),
                   2 = tabulated (piecewise-linear V, piecewise-constant force)
  coin kinds:      0 = constant, 1 = cosine, 2 = twostep (see model.Modulation)
  status codes:    0 = ok, 1 = energy tolerance unreachable (step underflow)

The energy budget per integrated segment is max(eps_e, eps_e*|H_start|):
absolute at unit energies, relative once the trajectory heats up. Segments
exceeding it are re-run with the step halved, up to max_halvings times.
"""

from __future__ import annotations

import math
import os

import numpy as np

if os.environ.get("KICKMC_DISABLE_NUMBA"):
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):  # noqa: D103 - passthrough decorator
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap
else:
    from numba import njit

    NUMBA_ENABLED = True

STATUS_OK = 0
STATUS_ENERGY_FAIL = 1

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# scalar helpers


@njit(cache=True)
def _pot_value(kind, amp, tab, x):
    if kind == 0:
        return 0.0
    if kind == 1:
        return 0.5 * amp * (1.0 + math.cos(TWO_PI * x))
    n = tab.shape[0]
    pos = (x - math.floor(x)) * n
    i0 = int(pos)
    if i0 >= n:
        i0 = n - 1
    frac = pos - i0
    i1 = i0 + 1
    if i1 == n:
        i1 = 0
    return tab[i0] * (1.0 - frac) + tab[i1] * frac


@njit(cache=True)
def _pot_force(kind, amp, tab, x):
    if kind == 0:
        return 0.0
    if kind == 1:
        return 0.5 * amp * TWO_PI * math.sin(TWO_PI * x)
    n = tab.shape[0]
    pos = (x - math.floor(x)) * n
    i0 = int(pos)
    if i0 >= n:
        i0 = n - 1
    i1 = i0 + 1
    if i1 == n:
        i1 = 0
    return -(tab[i1] - tab[i0]) * n


@njit(cache=True)
def _coin(kind, base, amp, a):
    if kind == 0:
        return base
    if kind == 1:
        return base + amp * math.cos(TWO_PI * a)
    if a - math.floor(a) < 0.5:
        return base
    return amp


@njit(cache=True)
def _quantile(knot_u, qrow, u):
    """Piecewise-linear inverse CDF on the knot grid; clamps beyond the
    end knots (u there is ~2^-40, unreachable at desk scale)."""
    n = knot_u.shape[0]
    if u <= knot_u[0]:
        return qrow[0]
    if u >= knot_u[n - 1]:
        return qrow[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if knot_u[mid] <= u:
            lo = mid
        else:
            hi = mid
    frac = (u - knot_u[lo]) / (knot_u[lo + 1] - knot_u[lo])
    return qrow[lo] + (qrow[lo + 1] - qrow[lo]) * frac


@njit(cache=True)
def _uq_lookup(uq, u):
    """Quantile lookup on a uniform u-grid (O(1) index, no search).

    uq[j] tabulates the quantile at u = j/m. Used by the random-walk
    engines, which burn billions of draws; the dynamics kernels keep the
    hybrid tail grid where per-draw cost is irrelevant.
    """
    m = uq.shape[0] - 1
    pos = u * m
    j = int(pos)
    if j >= m:
        j = m - 1
    frac = pos - j
    return uq[j] + (uq[j + 1] - uq[j]) * frac


@njit(cache=True)
def _cell_index(a_frac, n_cells):
    c = int(a_frac * n_cells)
    if c >= n_cells:
        c = n_cells - 1
    return c


@njit(cache=True)
def _m2rate_at(m2_rate_cell, n_cells, x):
    return m2_rate_cell[_cell_index(x - math.floor(x), n_cells)]


@njit(cache=True)
def _sweep_antiderivative(prefix, n_cells, x):
    """Antiderivative at line position x of the piecewise-constant cell field
    whose prefix integral over one period is `prefix` (len n_cells + 1)."""
    fl = math.floor(x)
    a = x - fl
    c = _cell_index(a, n_cells)
    inner = prefix[c] + (a - c / n_cells) * (prefix[c + 1] - prefix[c]) * n_cells
    return fl * prefix[n_cells] + inner


# ---------------------------------------------------------------------------
# flow


@njit(cache=True)
def _verlet_pass(x, k, dt, h, pot_kind, pot_amp, pot_tab,
                 m2_rate_cell, n_cells):
    """One fixed-step pass over a flow segment, final partial step included.

    Returns end state plus the per-pass accumulators:
    (x, k, qvp, kmin, kmax, absmin) where qvp is the trapezoid integral of
    the local jump second-moment rate and the extremes are over step ends.
    """
    n_full = int(dt / h)
    h_rem = dt - n_full * h
    kmin = k
    kmax = k
    absmin = abs(k)
    qvp = 0.0
    f = _pot_force(pot_kind, pot_amp, pot_tab, x)
    g = _m2rate_at(m2_rate_cell, n_cells, x)
    for i in range(n_full + 1):
        hs = h if i < n_full else h_rem
        if hs <= 0.0:
            continue
        k_half = k + 0.5 * hs * f
        x = x + hs * k_half
        f = _pot_force(pot_kind, pot_amp, pot_tab, x)
        k = k_half + 0.5 * hs * f
        g_new = _m2rate_at(m2_rate_cell, n_cells, x)
        qvp += 0.5 * hs * (g + g_new)
        g = g_new
        if k < kmin:
            kmin = k
        if k > kmax:
            kmax = k
        ak = abs(k)
        if ak < absmin:
            absmin = ak
    return x, k, qvp, kmin, kmax, absmin


@njit(cache=True)
def _advance_segment(x, k, dt, pot_kind, pot_amp, pot_tab,
                     m2_rate_cell, m2_rate_prefix, n_cells,
                     h0, eps_e, max_halvings):
    """Advance the flow by dt, halving the step until the energy budget
    max(eps_e, eps_e*|H0|) is met.

    Returns (x, k, qvp, kmin, kmax, absmin, err, halvings, ok).
    """
    if dt <= 0.0:
        return x, k, 0.0, k, k, abs(k), 0.0, 0, True
    if pot_kind == 0:
        # free flight is exact for any step; sweep the rate field in closed
        # form through the prefix table
        x1 = x + k * dt
        if k > 0.0:
            qvp = (_sweep_antiderivative(m2_rate_prefix, n_cells, x1)
                   - _sweep_antiderivative(m2_rate_prefix, n_cells, x)) / k
        elif k < 0.0:
            qvp = (_sweep_antiderivative(m2_rate_prefix, n_cells, x)
                   - _sweep_antiderivative(m2_rate_prefix, n_cells, x1)) / (-k)
        else:
            qvp = dt * _m2rate_at(m2_rate_cell, n_cells, x)
        return x1, k, qvp, k, k, abs(k), 0.0, 0, True
    e0 = 0.5 * k * k + _pot_value(pot_kind, pot_amp, pot_tab, x)
    budget = eps_e * abs(e0)
    if budget < eps_e:
        budget = eps_e
    h_try = h0 if h0 < dt else dt
    for halv in range(max_halvings + 1):
        x1, k1, qvp, kmin, kmax, absmin = _verlet_pass(
            x, k, dt, h_try, pot_kind, pot_amp, pot_tab,
            m2_rate_cell, n_cells)
        e1 = 0.5 * k1 * k1 + _pot_value(pot_kind, pot_amp, pot_tab, x1)
        err = abs(e1 - e0)
        if err <= budget:
            return x1, k1, qvp, kmin, kmax, absmin, err, halv, True
        h_try *= 0.5
    return x1, k1, qvp, kmin, kmax, absmin, err, max_halvings, False


@njit(cache=True)
def flow_kernel(x, k, dt, pot_kind, pot_amp, pot_tab, h0, eps_e, max_halvings):
    """Hamiltonian flow for dt. Returns (x, k, energy_err, halvings, ok)."""
    dummy_rate = np.zeros(1)
    dummy_prefix = np.zeros(2)
    x1, k1, _qvp, _a, _b, _c, err, halv, ok = _advance_segment(
        x, k, dt, pot_kind, pot_amp, pot_tab,
        dummy_rate, dummy_prefix, 1, h0, eps_e, max_halvings)
    return x1, k1, err, halv, ok


# ---------------------------------------------------------------------------
# trajectory


@njit(cache=True)
def trajectory_kernel(
        x0, k0, t_final,
        pot_kind, pot_amp, pot_tab,
        coin_kind, coin_base, coin_amp,
        knot_u, quantiles, m2_rate_cell, m2_rate_prefix,
        h0, eps_e, max_halvings,
        alarm_t, coin_u, kick_u,
        obs_t,
        want_events,
        obs_x, obs_k, obs_e, obs_qvp, obs_drift,
        ev_a, ev_kpre, ev_w, ev_fired, ev_qvp,
        seg_kmin, seg_kmax, seg_absmin):
    """Run one trajectory to t_final.

    Pre-drawn randomness: alarm_t (sorted alarm times in [0, t_final]),
    coin_u and kick_u (uniforms, one per alarm). Observables are recorded at
    obs_t (sorted, <= t_final); observation at an alarm time sees the
    pre-kick (left limit) state.

    Returns (status, x, k, m_total, qv_total, drift_min, drift_max,
             mprime, aprime, qvp_total, n_segments, max_seg_err,
             n_halvings, n_fired).
    """
    n_cells = m2_rate_cell.shape[0]
    n_alarms = alarm_t.shape[0]
    n_obs = obs_t.shape[0]

    x = x0
    k = k0
    t = 0.0
    m_total = 0.0
    qv_total = 0.0
    qvp_total = 0.0
    mprime = 0.0
    aprime = 0.0
    drift_min = 0.0
    drift_max = 0.0
    n_segments = 0
    max_seg_err = 0.0
    n_halvings = 0
    n_fired = 0
    status = STATUS_OK

    i_alarm = 0
    i_obs = 0
    # per inter-alarm segment extremes of the momentum path
    cur_kmin = k
    cur_kmax = k
    cur_absmin = abs(k)

    while True:
        t_alarm = alarm_t[i_alarm] if i_alarm < n_alarms else math.inf
        t_obs = obs_t[i_obs] if i_obs < n_obs else math.inf
        t_next = t_alarm if t_alarm < t_obs else t_obs
        if t_next > t_final:
            t_next = t_final
        is_final = t_next >= t_final and t_obs > t_final and t_alarm > t_final

        dt = t_next - t
        if dt > 0.0:
            x, k, qvp, kmin, kmax, absmin, err, halv, ok = _advance_segment(
                x, k, dt, pot_kind, pot_amp, pot_tab,
                m2_rate_cell, m2_rate_prefix, n_cells,
                h0, eps_e, max_halvings)
            qvp_total += qvp
            n_segments += 1
            n_halvings += halv
            if err > max_seg_err:
                max_seg_err = err
            if not ok:
                status = STATUS_ENERGY_FAIL
                return (status, x, k, m_total, qv_total, drift_min, drift_max,
                        mprime, aprime, qvp_total, n_segments, max_seg_err,
                        n_halvings, n_fired)
            # drift integral along the segment is k - k0 - m_total (exact
            # telescoping of the Verlet trapezoid force sum)
            dlo = kmin - k0 - m_total
            dhi = kmax - k0 - m_total
            if dlo < drift_min:
                drift_min = dlo
            if dhi > drift_max:
                drift_max = dhi
            if kmin < cur_kmin:
                cur_kmin = kmin
            if kmax > cur_kmax:
                cur_kmax = kmax
            if absmin < cur_absmin:
                cur_absmin = absmin
        t = t_next

        if t_obs <= t_alarm and t_obs <= t_final and i_obs < n_obs:
            # record left-limit state at the observation time
            obs_x[i_obs] = x
            obs_k[i_obs] = k
            obs_e[i_obs] = 0.5 * k * k + _pot_value(pot_kind, pot_amp, pot_tab, x)
            obs_qvp[i_obs] = qvp_total
            obs_drift[i_obs] = k - k0 - m_total
            i_obs += 1
            continue

        if i_alarm < n_alarms and t_alarm <= t_final:
            a = x - math.floor(x)
            kap = _coin(coin_kind, coin_base, coin_amp, a)
            w = 0.0
            fired = coin_u[i_alarm] < kap
            if fired:
                cell = _cell_index(a, n_cells)
                w = _quantile(knot_u, quantiles[cell], kick_u[i_alarm])
                n_fired += 1
            if want_events:
                ev_a[i_alarm] = a
                ev_kpre[i_alarm] = k
                ev_w[i_alarm] = w
                ev_fired[i_alarm] = 1 if fired else 0
                ev_qvp[i_alarm] = qvp_total
                seg_kmin[i_alarm] = cur_kmin
                seg_kmax[i_alarm] = cur_kmax
                seg_absmin[i_alarm] = cur_absmin
            if fired:
                sgn = 1.0 if k >= 0.0 else -1.0
                k_new = k + w
                m_total += w
                qv_total += w * w
                mprime += w * sgn
                if -mprime > aprime:
                    aprime = -mprime
                k = k_new
            cur_kmin = k
            cur_kmax = k
            cur_absmin = abs(k)
            i_alarm += 1
            continue

        if is_final:
            break

    if want_events:
        seg_kmin[n_alarms] = cur_kmin
        seg_kmax[n_alarms] = cur_kmax
        seg_absmin[n_alarms] = cur_absmin

    return (status, x, k, m_total, qv_total, drift_min, drift_max,
            mprime, aprime, qvp_total, n_segments, max_seg_err,
            n_halvings, n_fired)


# ---------------------------------------------------------------------------
# first-alarm torus position scan


@njit(cache=True)
def flatten_kernel(x0, k0, dts, pot_kind, pot_amp, pot_tab, h):
    """Torus position at the first alarm for each pre-drawn alarm delay.

    Fixed step h (no halving; callers pick h against k0). Returns the hit
    positions and the largest per-sample energy drift observed.
    """
    n = dts.shape[0]
    out = np.empty(n)
    worst = 0.0
    for i in range(n):
        if pot_kind == 0:
            xe = x0 + k0 * dts[i]
        else:
            x = x0
            k = k0
            e0 = 0.5 * k * k + _pot_value(pot_kind, pot_amp, pot_tab, x)
            dt = dts[i]
            n_full = int(dt / h)
            h_rem = dt - n_full * h
            f = _pot_force(pot_kind, pot_amp, pot_tab, x)
            for j in range(n_full + 1):
                hs = h if j < n_full else h_rem
                if hs <= 0.0:
                    continue
                k_half = k + 0.5 * hs * f
                x = x + hs * k_half
                f = _pot_force(pot_kind, pot_amp, pot_tab, x)
                k = k_half + 0.5 * hs * f
            e1 = 0.5 * k * k + _pot_value(pot_kind, pot_amp, pot_tab, x)
            de = abs(e1 - e0)
            if de > worst:
                worst = de
            xe = x
        out[i] = xe - math.floor(xe)
    return out, worst


# ---------------------------------------------------------------------------
# downward level-crossing scan (full dynamics)


@njit(cache=True)
def crossing_scan_kernel(
        x0, k0, levels, t_cap,
        pot_kind, pot_amp, pot_tab,
        coin_kind, coin_base, coin_amp,
        knot_u, quantiles, m2_rate_cell, m2_rate_prefix,
        rate, h0, eps_e, max_halvings,
        u_blocks,
        out_a, out_v, out_w, out_t):
    """First passage below each level of the jump-observed momentum chain.

    The chain is the momentum right after each fired kick; its increments
    include the flow drift accumulated since the previous kick, which is the
    crossing law under study. Flow excursions below a level between kicks do
    not count (the chain is never observed mid-flight). levels must be
    strictly decreasing; a single large kick may cross several at once, and
    each records the same (a, w) with its own overshoot.

    Recorded per level: torus position a at the crossing kick, overshoot
    v = level - k_post, step magnitude w = k_prev_chain - k_post, time t.

    u_blocks is a (n, 3) array of uniforms consumed sequentially as
    (alarm, coin, kick) triples. Returns (n_levels_done, n_triples_used);
    n_levels_done < len(levels) means t_cap or the pool ran out and the
    caller censors the remaining levels. -1 flags an integration failure.
    """
    n_cells = m2_rate_cell.shape[0]
    n_levels = levels.shape[0]
    n_u = u_blocks.shape[0]
    x = x0
    k = k0
    k_chain = k0
    t = 0.0
    lvl = 0
    used = 0
    while lvl < n_levels and used < n_u and t < t_cap:
        u_alarm = u_blocks[used, 0]
        u_coin = u_blocks[used, 1]
        u_kick = u_blocks[used, 2]
        used += 1
        dt = -math.log(1.0 - u_alarm) / rate
        x, k, _qvp, _kmin, _kmax, _absmin, _err, _halv, ok = _advance_segment(
            x, k, dt, pot_kind, pot_amp, pot_tab,
            m2_rate_cell, m2_rate_prefix, n_cells, h0, eps_e, max_halvings)
        t += dt
        if not ok:
            return -1, used
        if t >= t_cap:
            break
        a = x - math.floor(x)
        kap = _coin(coin_kind, coin_base, coin_amp, a)
        if u_coin < kap:
            cell = _cell_index(a, n_cells)
            w = _quantile(knot_u, quantiles[cell], u_kick)
            k = k + w
            while lvl < n_levels and k < levels[lvl]:
                out_a[lvl] = a
                out_v[lvl] = levels[lvl] - k
                out_w[lvl] = k_chain - k
                out_t[lvl] = t
                lvl += 1
            k_chain = k
    return lvl, used


# ---------------------------------------------------------------------------
# renewal overshoot sampler (ladder increments)


@njit(cache=True)
def renewal_overshoot_kernel(inc_v, inc_w, idx, level, out_v, out_w, start):
    """Overshoot over `level` of a renewal process with increments resampled
    (by index) from the empirical ladder table.

    Fills out_v/out_w from position `start`; returns (n_done, n_idx_used).
    A sample left incomplete when idx runs out is restarted from scratch by
    the caller with fresh indices (no partial state is kept, so restarting
    is unbiased).
    """
    n_idx = idx.shape[0]
    n_out = out_v.shape[0]
    ptr = 0
    s = start
    while s < n_out:
        acc = 0.0
        j = -1
        complete = False
        while ptr < n_idx:
            j = idx[ptr]
            ptr += 1
            acc += inc_v[j]
            if acc > level:
                complete = True
                break
        if not complete:
            return s, ptr
        out_v[s] = acc - level
        out_w[s] = inc_w[j]
        s += 1
    return s, ptr


@njit(cache=True)
def walk_sweep_kernel(walk_kind, tp_step, uq, us, levels,
                      step_cap, out_v, out_w, start):
    """Multi-level first-passage sweep of a mean-zero random walk.

    Each sample walks from 0 and records (overshoot, crossing step) at the
    first passage strictly over every level in the non-decreasing `levels`,
    in one pass (the first passage over a higher level is always at or after
    that over a lower one, and a single step may clear several). Levels not
    reached within step_cap steps are censored as nan.

    walk_kind 0 draws steps through the uniform-grid quantile table uq;
    walk_kind 1 is the exact two-point +-tp_step walk (u >= 0.5 mapping
    to +tp_step).

    No new sample starts unless step_cap uniforms remain in `us`, so a
    started sample never exhausts the pool: samples are never restarted and
    the censoring at step_cap is the only truncation of the law.
    Returns (next_sample_index, n_uniforms_used).
    """
    n_us = us.shape[0]
    n_samples = out_v.shape[0]
    n_levels = levels.shape[0]
    s = start
    ptr = 0
    while s < n_samples and n_us - ptr >= step_cap:
        y = 0.0
        lvl = 0
        steps = 0
        while lvl < n_levels and steps < step_cap:
            u = us[ptr]
            ptr += 1
            if walk_kind == 1:
                w = tp_step if u >= 0.5 else -tp_step
            else:
                w = _uq_lookup(uq, u)
            y += w
            steps += 1
            while lvl < n_levels and y > levels[lvl]:
                out_v[s, lvl] = y - levels[lvl]
                out_w[s, lvl] = w
                lvl += 1
        while lvl < n_levels:
            out_v[s, lvl] = np.nan
            out_w[s, lvl] = np.nan
            lvl += 1
        s += 1
    return s, ptr
