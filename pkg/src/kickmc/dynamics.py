"""Single-trajectory simulation: Hamiltonian flow between Poisson alarms,
coin-gated symmetric momentum kicks at alarms, exact bookkeeping functionals.

Randomness protocol (frozen; determinism tests depend on it). Each trajectory
owns one numpy Generator. Draws happen in this order and no other:

  1. initial-state draws, if the initial state is random (none for the
     default point mass),
  2. n = Poisson(rate * t_final),
  3. n sorted uniforms scaled to [0, t_final] (the alarm times; conditioned
     on the count, alarms of a Poisson process are iid uniform),
  4. n uniforms for the coin,
  5. n uniforms for the kick quantile lookup.

An alarm fires a kick when coin_u < kappa(a); the kick uniform for that alarm
is consumed either way. Observation times coincident with an alarm see the
pre-kick (left limit) state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import KickField, ModelSpec
from .tables import KickTables, build_tables, pack_potential


class IntegrationError(RuntimeError):
    """Energy budget unreachable after the maximum number of step halvings."""


@dataclass(frozen=True)
class PhaseState:
    x: float
    k: float

    @property
    def a(self) -> float:
        return self.x - math.floor(self.x)


@dataclass(frozen=True)
class SimParams:
    """Integrator controls.

    eps_e is a per-segment energy budget, read as max(eps_e, eps_e*|H_start|)
    so it is absolute at unit energies and relative once the trajectory
    heats up (an absolute budget is unattainable at high energy with any
    fixed step).
    """

    h: float = 1e-3
    eps_e: float = 1e-8
    max_halvings: int = 20
    record_events: bool = False

    def __post_init__(self):
        if not (self.h > 0.0 and self.eps_e > 0.0 and self.max_halvings >= 0):
            raise ValueError("h > 0, eps_e > 0, max_halvings >= 0 required")


@dataclass(frozen=True)
class KickEvent:
    t: float
    a: float
    k_pre: float
    w: float
    fired: bool

    @property
    def k_post(self) -> float:
        return self.k_pre + self.w


@dataclass
class Trajectory:
    """One finished run plus the exact functionals accumulated along it.

    Event arrays cover every alarm (fired or not); they are None unless the
    run recorded events. seg_* arrays hold per-flow-segment momentum extremes,
    indexed so that seg_*[i] covers the flow ending at alarm i and seg_*[-1]
    the tail segment after the last alarm.
    """

    t_final: float
    x0: float
    k0: float
    params: SimParams
    status: int
    x_end: float
    k_end: float
    m_total: float          # sum of kicks M_T
    qv_total: float         # sum of squared kicks [M]_T
    qvp_total: float        # predictable QV <M>_T by segment quadrature
    drift_min: float        # running extremes of K_s - K_0 - M_s
    drift_max: float
    mprime: float           # sum of w * sign(K at left limit)
    aprime: float           # running max of -mprime
    n_segments: int
    max_seg_err: float
    n_halvings: int
    n_fired: int
    obs_t: np.ndarray = field(default=None, repr=False)
    obs_x: np.ndarray = field(default=None, repr=False)
    obs_k: np.ndarray = field(default=None, repr=False)
    obs_e: np.ndarray = field(default=None, repr=False)
    obs_qvp: np.ndarray = field(default=None, repr=False)
    obs_drift: np.ndarray = field(default=None, repr=False)
    ev_t: np.ndarray = field(default=None, repr=False)
    ev_a: np.ndarray = field(default=None, repr=False)
    ev_kpre: np.ndarray = field(default=None, repr=False)
    ev_w: np.ndarray = field(default=None, repr=False)
    ev_fired: np.ndarray = field(default=None, repr=False)
    ev_qvp: np.ndarray = field(default=None, repr=False)
    seg_kmin: np.ndarray = field(default=None, repr=False)
    seg_kmax: np.ndarray = field(default=None, repr=False)
    seg_absmin: np.ndarray = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == kernels.STATUS_OK

    @property
    def n_events(self) -> int:
        return 0 if self.ev_t is None else len(self.ev_t)

    def events(self):
        if self.ev_t is None:
            raise ValueError("run was not recorded with record_events")
        for i in range(len(self.ev_t)):
            yield KickEvent(t=float(self.ev_t[i]), a=float(self.ev_a[i]),
                            k_pre=float(self.ev_kpre[i]),
                            w=float(self.ev_w[i]),
                            fired=bool(self.ev_fired[i]))

    def energy_end(self, model: ModelSpec) -> float:
        return 0.5 * self.k_end**2 + float(model.potential.value(self.x_end))


# ---------------------------------------------------------------------------
# RNG streams


def stream_rng(master_seed: int, index: int, domain: int = 0) -> np.random.Generator:
    """Independent, reproducible stream for trajectory `index` of `domain`."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(domain, index))
    return np.random.default_rng(ss)


def next_alarm(rng: np.random.Generator, rate: float) -> float:
    """Exponential waiting time by inverse CDF (one uniform per call)."""
    if rate <= 0.0:
        raise ValueError("alarm rate must be positive")
    return -math.log1p(-rng.random()) / rate


def draw_alarm_randomness(rng: np.random.Generator, rate: float,
                          t_final: float):
    """All per-trajectory alarm randomness in the frozen draw order."""
    n = int(rng.poisson(rate * t_final))
    alarm_t = np.sort(rng.random(n)) * t_final
    coin_u = rng.random(n)
    kick_u = rng.random(n)
    return alarm_t, coin_u, kick_u


# ---------------------------------------------------------------------------
# spec-level operations


def flow(state: PhaseState, dt: float, model_or_potential,
         params: SimParams = SimParams()) -> PhaseState:
    """Hamiltonian flow of (x, k) for duration dt; no kicks."""
    potential = getattr(model_or_potential, "potential", model_or_potential)
    pk, pa, pt = pack_potential(potential)
    x1, k1, err, _halv, ok = kernels.flow_kernel(
        state.x, state.k, float(dt), pk, pa, pt,
        params.h, params.eps_e, params.max_halvings)
    if not ok:
        raise IntegrationError(
            f"energy drift {err:.3e} after {params.max_halvings} halvings")
    return PhaseState(x=float(x1), k=float(k1))


def attempt_kick(state: PhaseState, kicks: KickField,
                 rng: np.random.Generator,
                 tables: KickTables | None = None,
                 t: float = 0.0) -> tuple[PhaseState, KickEvent]:
    """Toss the coin at the state's torus position; on success draw a kick
    through the table sampler. Consumes two uniforms either way."""
    if tables is None:
        tables = build_tables_for(kicks)
    a = state.a
    u_coin = rng.random()
    u_kick = rng.random()
    fired = bool(u_coin < float(kicks.coin(a)))
    w = 0.0
    if fired:
        cell = min(int(a * tables.n_cells), tables.n_cells - 1)
        w = float(np.interp(u_kick, tables.knot_u, tables.quantiles[cell]))
    ev = KickEvent(t=t, a=a, k_pre=state.k, w=w, fired=fired)
    return PhaseState(x=state.x, k=state.k + w), ev


_TABLES_CACHE: dict[int, KickTables] = {}


def build_tables_for(obj) -> KickTables:
    """Tables for a ModelSpec or bare KickField, cached by object identity."""
    key = id(obj)
    hit = _TABLES_CACHE.get(key)
    if hit is not None:
        return hit
    if isinstance(obj, ModelSpec):
        model = obj
    else:
        from .model import Potential
        model = ModelSpec.build(Potential(kind="zero"), obj)
    tab = build_tables(model)
    if len(_TABLES_CACHE) > 32:
        _TABLES_CACHE.clear()
    _TABLES_CACHE[key] = tab
    return tab


def simulate(model: ModelSpec, t_final: float,
             initial: PhaseState = PhaseState(0.0, 0.0),
             params: SimParams = SimParams(),
             obs_times=None,
             rng: np.random.Generator | None = None,
             seed: int | None = None,
             tables: KickTables | None = None,
             observers=()) -> Trajectory:
    """Run one trajectory to t_final.

    Exactly one of rng/seed supplies the randomness (seed builds stream 0 of
    domain 0). Observers get replayed events and segments after the run, in
    order; supplying any forces event recording.
    """
    if rng is None:
        rng = stream_rng(0 if seed is None else int(seed), 0)
    if tables is None:
        tables = build_tables_for(model)
    if t_final <= 0.0:
        raise ValueError("t_final must be positive")
    want_events = bool(params.record_events or observers)

    alarm_t, coin_u, kick_u = draw_alarm_randomness(
        rng, tables.rate, t_final)
    obs_t = (np.empty(0) if obs_times is None
             else np.asarray(obs_times, dtype=float))
    if obs_t.size and (np.any(np.diff(obs_t) < 0) or obs_t[-1] > t_final
                       or obs_t[0] < 0):
        raise ValueError("obs_times must be sorted within [0, t_final]")

    n_al = len(alarm_t)
    n_obs = len(obs_t)
    obs_arrays = [np.zeros(n_obs) for _ in range(5)]
    n_ev = n_al if want_events else 0
    ev_a = np.zeros(n_ev)
    ev_kpre = np.zeros(n_ev)
    ev_w = np.zeros(n_ev)
    ev_fired = np.zeros(n_ev, dtype=np.int64)
    ev_qvp = np.zeros(n_ev)
    seg = [np.zeros(n_ev + 1 if want_events else 1) for _ in range(3)]

    pk, pa, pt = pack_potential(model.potential)
    out = kernels.trajectory_kernel(
        float(initial.x), float(initial.k), float(t_final),
        pk, pa, pt,
        tables.coin_kind, tables.coin_base, tables.coin_amp,
        tables.knot_u, tables.quantiles,
        tables.m2_rate_cell, tables.m2_rate_prefix,
        params.h, params.eps_e, params.max_halvings,
        alarm_t, coin_u, kick_u, obs_t, want_events,
        *obs_arrays, ev_a, ev_kpre, ev_w, ev_fired, ev_qvp, *seg)
    (status, x_end, k_end, m_total, qv_total, drift_min, drift_max,
     mprime, aprime, qvp_total, n_segments, max_seg_err,
     n_halvings, n_fired) = out

    traj = Trajectory(
        t_final=float(t_final), x0=float(initial.x), k0=float(initial.k),
        params=params, status=int(status),
        x_end=float(x_end), k_end=float(k_end),
        m_total=float(m_total), qv_total=float(qv_total),
        qvp_total=float(qvp_total),
        drift_min=float(drift_min), drift_max=float(drift_max),
        mprime=float(mprime), aprime=float(aprime),
        n_segments=int(n_segments), max_seg_err=float(max_seg_err),
        n_halvings=int(n_halvings), n_fired=int(n_fired),
        obs_t=obs_t, obs_x=obs_arrays[0], obs_k=obs_arrays[1],
        obs_e=obs_arrays[2], obs_qvp=obs_arrays[3], obs_drift=obs_arrays[4])
    if want_events:
        traj.ev_t = alarm_t
        traj.ev_a, traj.ev_kpre, traj.ev_w = ev_a, ev_kpre, ev_w
        traj.ev_fired, traj.ev_qvp = ev_fired, ev_qvp
        traj.seg_kmin, traj.seg_kmax, traj.seg_absmin = seg
    if status != kernels.STATUS_OK:
        raise IntegrationError(
            f"trajectory aborted at segment {n_segments}: "
            f"energy drift {max_seg_err:.3e} exceeded budget after "
            f"{params.max_halvings} halvings")

    for obs in observers:
        on_event = getattr(obs, "on_event", None)
        on_segment = getattr(obs, "on_segment", None)
        if on_segment is not None:
            bounds = np.concatenate(([0.0], alarm_t, [t_final]))
            for i in range(n_al + 1):
                on_segment(bounds[i], bounds[i + 1], seg[0][i], seg[1][i],
                           seg[2][i])
        if on_event is not None:
            for ev in traj.events():
                on_event(ev)
        finish = getattr(obs, "finish", None)
        if finish is not None:
            finish(traj)
    return traj


def events_to_csv(traj: Trajectory, path) -> None:
    """Per-trajectory event dump, one row per alarm."""
    if traj.ev_t is None:
        raise ValueError("trajectory has no recorded events")
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,a,k_pre,w,k_post,fired\n")
        for i in range(len(traj.ev_t)):
            row = (traj.ev_t[i], traj.ev_a[i], traj.ev_kpre[i], traj.ev_w[i],
                   traj.ev_kpre[i] + traj.ev_w[i])
            f.write(",".join(repr(float(v)) for v in row)
                    + f",{int(traj.ev_fired[i])}\n")


def make_initial_sampler(spec: dict | None):
    """Initial-state factory from a config mapping.

    None or {"kind": "point", "x": ..., "k": ...} is a point mass (no draws);
    {"kind": "gaussian", "x": mx, "k": mk, "sd_x": sx, "sd_k": sk} draws a
    Gaussian product (two draws, x then k). Returned callable takes the
    trajectory rng and must be called before the alarm draws.
    """
    if spec is None:
        spec = {"kind": "point"}
    kind = spec.get("kind", "point")
    if kind == "point":
        x0 = float(spec.get("x", 0.0))
        k0 = float(spec.get("k", 0.0))

        def sample(rng: np.random.Generator) -> PhaseState:
            return PhaseState(x0, k0)
    elif kind == "gaussian":
        mx = float(spec.get("x", 0.0))
        mk = float(spec.get("k", 0.0))
        sx = float(spec.get("sd_x", 1.0))
        sk = float(spec.get("sd_k", 1.0))
        if sx < 0 or sk < 0:
            raise ValueError("initial-state sds must be >= 0")

        def sample(rng: np.random.Generator) -> PhaseState:
            x = mx + sx * rng.standard_normal()
            k = mk + sk * rng.standard_normal()
            return PhaseState(x, k)
    else:
        raise ValueError(f"unknown initial-state kind {kind!r}")
    return sample
