"""Proof-level observables computed from a finished trajectory's event log:
the sign-weighted kick martingale and its compensators, occupation fractions
above moving thresholds, and the square-root-energy decomposition.

Everything here is a pure function of (trajectory, model); nothing mutates
the trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import SimParams, Trajectory
from .kernels import flow_kernel
from .model import ModelSpec
from .tables import pack_potential


def _sign(k: np.ndarray) -> np.ndarray:
    # S(0) = +1 by convention, matching the kick accumulator
    return np.where(k >= 0.0, 1.0, -1.0)


@dataclass
class MartingaleTrack:
    """Event-grid processes of the kick martingale.

    mprime[i] = sum_{n<=i} w_n * S(K at left limit); aprime is its running
    drawdown max(-mprime); qv the running sum of squared kicks; qvp the
    predictable quadratic variation accumulated by quadrature along the flow
    up to each event time.
    """

    t: np.ndarray
    mprime: np.ndarray
    aprime: np.ndarray
    qv: np.ndarray
    qvp: np.ndarray
    r1: float
    r2: float

    def tandori_ok(self, slack: float = 1e-9) -> bool:
        """r1*t <= <M>_t <= r2*t on the event grid (tiny slack for the
        cell-table bias)."""
        lo = (self.r1 - slack) * self.t
        hi = (self.r2 + slack) * self.t
        return bool(np.all(self.qvp >= lo) and np.all(self.qvp <= hi))


def martingale_track(traj: Trajectory, model: ModelSpec) -> MartingaleTrack:
    if traj.ev_t is None:
        raise ValueError("martingale_track needs a trajectory with events")
    w = traj.ev_w
    mprime = np.cumsum(w * _sign(traj.ev_kpre))
    aprime = np.maximum.accumulate(np.concatenate(([0.0], -mprime)))[1:]
    qv = np.cumsum(w * w)
    return MartingaleTrack(
        t=traj.ev_t, mprime=mprime, aprime=aprime, qv=qv,
        qvp=traj.ev_qvp,
        r1=model.derived["r1"], r2=model.derived["r2"])


def martingale_track_to_csv(track: MartingaleTrack, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,mprime,aprime,qv,qvp\n")
        for i in range(len(track.t)):
            row = (track.t[i], track.mprime[i], track.aprime[i],
                   track.qv[i], track.qvp[i])
            f.write(",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# occupation fractions


@dataclass(frozen=True)
class OccupationReport:
    eps: float
    t_frac: float
    variant: str


def _fired_segments(traj: Trajectory, model: ModelSpec):
    """(t0, t1, a0, k0, E0) per inter-kick segment. Alarms that did not fire
    leave the state untouched and are skipped, so energy is constant on each
    returned segment (up to integrator tolerance)."""
    fired = traj.ev_fired == 1
    t_b = np.concatenate(([0.0], traj.ev_t[fired], [traj.t_final]))
    a_b = np.concatenate(([traj.x0 - math.floor(traj.x0)],
                          traj.ev_a[fired]))
    k_b = np.concatenate(([traj.k0],
                          traj.ev_kpre[fired] + traj.ev_w[fired]))
    e_b = 0.5 * k_b**2 + model.potential.value(a_b)
    return t_b[:-1], t_b[1:], a_b, k_b, e_b


def occupation_fraction(traj: Trajectory, eps: float, model: ModelSpec,
                        variant: str = "energy") -> OccupationReport:
    """Lebesgue fraction of [0, t] with t^{-1/2} E_s^{1/2} > eps (energy
    variant) or t^{-1/2} |K_s| > eps (absmomentum variant).

    Energy is exactly piecewise constant between kicks, so the energy variant
    needs no refinement. |K| moves along the flow; partially-above segments
    are re-integrated and each threshold crossing is bisected to h/100.
    """
    if traj.ev_t is None:
        raise ValueError("occupation_fraction needs a trajectory with events")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    t = traj.t_final
    if variant == "energy":
        thr = (eps * eps) * t
        t0, t1, _a, _k, e = _fired_segments(traj, model)
        above = float(np.sum((t1 - t0)[e > thr]))
        return OccupationReport(eps=eps, t_frac=above / t, variant=variant)
    if variant != "absmomentum":
        raise ValueError(f"unknown occupation variant {variant!r}")

    thr = eps * math.sqrt(t)
    # segment extremes decide most segments outright
    bounds = np.concatenate(([0.0], traj.ev_t, [t]))
    k_entry = np.concatenate(([traj.k0], traj.ev_kpre + traj.ev_w))
    a_entry = np.concatenate(([traj.x0 - math.floor(traj.x0)], traj.ev_a))
    absmax = np.maximum(np.abs(traj.seg_kmin), np.abs(traj.seg_kmax))
    absmin = traj.seg_absmin
    above = 0.0
    pk, pa, pt = pack_potential(model.potential)
    h = traj.params.h
    for i in range(len(bounds) - 1):
        dur = bounds[i + 1] - bounds[i]
        if dur <= 0.0:
            continue
        if absmin[i] > thr:
            above += dur
        elif absmax[i] <= thr:
            continue
        else:
            above += _above_measure(a_entry[i], k_entry[i], dur, thr,
                                    pk, pa, pt, h, traj.params)
    return OccupationReport(eps=eps, t_frac=above / t, variant=variant)


def _above_measure(x0, k0, dur, thr, pk, pa, pt, h, params: SimParams):
    """Measure of {s in [0,dur] : |k_s| > thr} along one flow segment,
    crossings located by bisection to h/100."""
    n = max(1, int(math.ceil(dur / h)))
    ts = np.linspace(0.0, dur, n + 1)
    ks = np.empty(n + 1)
    x, k = x0, k0
    ks[0] = k
    for j in range(n):
        x, k, _e, _hv, ok = flow_kernel(x, k, ts[j + 1] - ts[j], pk, pa, pt,
                                        h, params.eps_e, params.max_halvings)
        ks[j + 1] = k
    above = np.abs(ks) > thr
    measure = 0.0
    for j in range(n):
        lo, hi = ts[j], ts[j + 1]
        if above[j] and above[j + 1]:
            measure += hi - lo
        elif above[j] != above[j + 1]:
            cross = _bisect_crossing(x0, k0, lo, hi, thr, pk, pa, pt,
                                     h, params)
            measure += (cross - lo) if above[j] else (hi - cross)
        # both below: contributes nothing; an interior double-crossing
        # within one h step is below the documented resolution
    return measure


def _bisect_crossing(x0, k0, lo, hi, thr, pk, pa, pt, h, params: SimParams):
    tol = h / 100.0
    f_lo = _abs_k_at(x0, k0, lo, pk, pa, pt, h, params) - thr
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = _abs_k_at(x0, k0, mid, pk, pa, pt, h, params) - thr
        if (f_lo > 0) == (f_mid > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _abs_k_at(x0, k0, dt, pk, pa, pt, h, params: SimParams):
    if dt == 0.0:
        return abs(k0)
    _x, k, _e, _hv, _ok = flow_kernel(x0, k0, dt, pk, pa, pt,
                                      h, params.eps_e, params.max_halvings)
    return abs(k)


# ---------------------------------------------------------------------------
# square-root-energy decomposition


def energy_decomposition(traj: Trajectory, model: ModelSpec):
    """Per-alarm increments (m_inc, a_inc) of the martingale and increasing
    parts of sqrt(E): with E_pm = (k_pre +- w)^2/2 + V(a),

        m_inc = (sqrt(E_+) - sqrt(E_-)) / 2
        a_inc = (sqrt(E_+) + sqrt(E_-)) / 2 - sqrt(E_pre)

    a_inc >= 0 by convexity of sqrt(k^2/2 + V) in k; alarms that did not
    fire contribute exact zeros. m_inc + a_inc telescopes to
    sqrt(E_T) - sqrt(E_0) because energy is flat between kicks.
    """
    if traj.ev_t is None:
        raise ValueError("energy_decomposition needs recorded events")
    v = np.asarray(model.potential.value(traj.ev_a))
    k = traj.ev_kpre
    w = traj.ev_w
    e_plus = np.sqrt(0.5 * (k + w) ** 2 + v)
    e_minus = np.sqrt(0.5 * (k - w) ** 2 + v)
    e_pre = np.sqrt(0.5 * k**2 + v)
    m_inc = 0.5 * (e_plus - e_minus)
    a_inc = 0.5 * (e_plus + e_minus) - e_pre
    fired = traj.ev_fired == 1
    m_inc = np.where(fired, m_inc, 0.0)
    a_inc = np.where(fired, a_inc, 0.0)
    return m_inc, a_inc


def energy_decomposition_to_csv(traj: Trajectory, model: ModelSpec,
                                path) -> None:
    m_inc, a_inc = energy_decomposition(traj, model)
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,m_inc,a_inc\n")
        for i in range(len(traj.ev_t)):
            f.write(f"{float(traj.ev_t[i])!r},{float(m_inc[i])!r},"
                    f"{float(a_inc[i])!r}\n")
