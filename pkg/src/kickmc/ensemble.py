"""Many-trajectory runs and the distributional checks on the rescaled pair
(t^{-3/2} X_{st}, t^{-1/2} K_{st}): diffusion-constant estimators, KS tests
of the Gaussian marginals, joint covariance against the integrated-Brownian
target, drift decay, and linear energy growth.

Reference laws always take sigma from model quadrature, never from the data
under test.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .dynamics import (IntegrationError, SimParams, make_initial_sampler,
                       simulate, stream_rng)
from .model import ModelSpec
from .tables import build_tables

_BOOTSTRAP_DOMAIN = 9


class EnsembleError(RuntimeError):
    """Too many trajectory failures to report statistics honestly."""


@dataclass(frozen=True)
class EnsembleConfig:
    model: ModelSpec
    n: int
    t: float
    s_grid: tuple = (1.0,)
    seed: int = 0
    initial: dict | None = None
    h: float = 1e-3
    eps_e: float = 1e-6
    record_events: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("trajectory count must be >= 1")
        if self.t <= 0:
            raise ValueError("horizon must be positive")
        s = tuple(float(v) for v in self.s_grid)
        if not s or list(s) != sorted(s):
            raise ValueError("s_grid must be non-empty and sorted")
        if s[0] <= 0.0 or s[-1] > 1.0:
            raise ValueError("s_grid values must lie in (0, 1]")
        object.__setattr__(self, "s_grid", s)

    def sim_params(self) -> SimParams:
        return SimParams(h=self.h, eps_e=self.eps_e,
                         record_events=self.record_events)


@dataclass
class EnsembleResult:
    """Rescaled per-trajectory samples, trajectory-indexed.

    x_hat, k_hat have shape (n, len(s_grid)) and hold t^{-3/2} X_{st} and
    t^{-1/2} K_{st}. Failed trajectories carry NaN rows and are flagged in
    `failed`.
    """

    config: EnsembleConfig
    x_hat: np.ndarray
    k_hat: np.ndarray
    e_t: np.ndarray
    drift_sup: np.ndarray       # sup_s |t^{-1/2} int_0^{st} dV/dx|, s in [0,1]
    qv: np.ndarray              # [M]_t per trajectory
    qvp: np.ndarray             # <M>_t per trajectory
    failed: np.ndarray          # bool mask
    extras: dict = field(default_factory=dict)

    @property
    def n_ok(self) -> int:
        return int(np.sum(~self.failed))

    def ok_rows(self, arr: np.ndarray) -> np.ndarray:
        return arr[~self.failed]


def _run_block(config: EnsembleConfig, lo: int, hi: int,
               reducers=None) -> dict:
    """Trajectories [lo, hi); returns plain arrays so it can cross a process
    boundary. Per-index RNG streams make the result independent of how the
    work is split."""
    model = config.model
    tables = build_tables(model)
    params = config.sim_params()
    init = make_initial_sampler(config.initial)
    t = config.t
    obs_times = np.asarray(config.s_grid) * t
    n = hi - lo
    n_s = len(config.s_grid)
    out = {
        "x_hat": np.full((n, n_s), np.nan),
        "k_hat": np.full((n, n_s), np.nan),
        "e_t": np.full(n, np.nan),
        "drift_sup": np.full(n, np.nan),
        "qv": np.full(n, np.nan),
        "qvp": np.full(n, np.nan),
        "failed": np.zeros(n, dtype=bool),
    }
    reduced = []
    rt = math.sqrt(t)
    for j in range(n):
        rng = stream_rng(config.seed, lo + j, domain=0)
        initial = init(rng)
        try:
            traj = simulate(model, t, initial=initial, params=params,
                            obs_times=obs_times, rng=rng, tables=tables)
        except IntegrationError:
            out["failed"][j] = True
            if reducers is not None:
                reduced.append(None)
            continue
        out["x_hat"][j] = traj.obs_x / (t * rt)
        out["k_hat"][j] = traj.obs_k / rt
        out["e_t"][j] = traj.energy_end(model)
        out["drift_sup"][j] = max(-traj.drift_min, traj.drift_max) / rt
        out["qv"][j] = traj.qv_total
        out["qvp"][j] = traj.qvp_total
        if reducers is not None:
            reduced.append(reducers(traj, model))
    if reducers is not None:
        out["reduced"] = reduced
    return out


def run_ensemble(config: EnsembleConfig, reducers=None) -> EnsembleResult:
    """N independent trajectories; deterministic in (config, seed) no matter
    the worker count.

    `reducers`, if given, is a callable (trajectory, model) -> picklable
    summary evaluated inside the worker while the event log is still alive;
    the per-trajectory results land in result.extras["reduced"].
    """
    n = config.n
    workers = max(1, int(config.workers))
    if workers == 1 or n < 4 * workers:
        blocks = [_run_block(config, 0, n, reducers)]
        spans = [(0, n)]
    else:
        bounds = np.linspace(0, n, workers + 1).astype(int)
        spans = [(int(bounds[i]), int(bounds[i + 1]))
                 for i in range(workers) if bounds[i] < bounds[i + 1]]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_block, config, lo, hi, reducers)
                    for lo, hi in spans]
            blocks = [f.result() for f in futs]

    n_s = len(config.s_grid)
    res = EnsembleResult(
        config=config,
        x_hat=np.full((n, n_s), np.nan), k_hat=np.full((n, n_s), np.nan),
        e_t=np.full(n, np.nan), drift_sup=np.full(n, np.nan),
        qv=np.full(n, np.nan), qvp=np.full(n, np.nan),
        failed=np.zeros(n, dtype=bool))
    reduced_all = [None] * n if reducers is not None else None
    for (lo, hi), blk in zip(spans, blocks):
        for name in ("x_hat", "k_hat", "e_t", "drift_sup", "qv", "qvp",
                     "failed"):
            getattr(res, name)[lo:hi] = blk[name]
        if reducers is not None:
            reduced_all[lo:hi] = blk["reduced"]
    if reducers is not None:
        res.extras["reduced"] = reduced_all
    n_failed = int(np.sum(res.failed))
    if n_failed > 0.001 * n:
        raise EnsembleError(
            f"{n_failed}/{n} trajectories failed integration")
    return res


# ---------------------------------------------------------------------------
# bootstrap


def bootstrap_se(stat_fn, data: np.ndarray, rng: np.random.Generator,
                 n_resamples: int = 400) -> float:
    """SE of stat_fn over iid row resamples. data indexed on axis 0."""
    n = len(data)
    vals = np.empty(n_resamples)
    for b in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        vals[b] = stat_fn(data[idx])
    return float(np.std(vals, ddof=1))


# ---------------------------------------------------------------------------
# sigma estimators


@dataclass(frozen=True)
class SigmaEstimates:
    quadrature: float
    qv_rate: float
    qv_rate_se: float
    var_rate: float
    var_rate_se: float

    def mutually_consistent(self, n_se: float = 3.0) -> bool:
        pairs = [
            (self.quadrature, self.qv_rate, self.qv_rate_se),
            (self.quadrature, self.var_rate, self.var_rate_se),
            (self.qv_rate, self.var_rate,
             math.hypot(self.qv_rate_se, self.var_rate_se)),
        ]
        return all(abs(a - b) <= n_se * se for a, b, se in pairs)


def estimate_sigma(result: EnsembleResult, n_resamples: int = 400
                   ) -> SigmaEstimates:
    """Three routes to the diffusion constant: model quadrature, mean
    quadratic variation per unit time, and Var(t^{-1/2}K_t)."""
    if result.n_ok < 100:
        raise ValueError("need at least 100 trajectories to estimate sigma")
    cfg = result.config
    if not math.isclose(cfg.s_grid[-1], 1.0):
        raise ValueError("sigma estimation expects s=1 in the grid")
    t = cfg.t
    qv = result.ok_rows(result.qv)
    k1 = result.ok_rows(result.k_hat[:, -1])
    rng = stream_rng(cfg.seed, 0, domain=_BOOTSTRAP_DOMAIN)
    qv_rate = float(np.mean(qv) / t)
    qv_se = bootstrap_se(lambda d: np.mean(d) / t, qv, rng, n_resamples)
    var_rate = float(np.var(k1, ddof=1))
    var_se = bootstrap_se(lambda d: np.var(d, ddof=1), k1, rng, n_resamples)
    return SigmaEstimates(
        quadrature=cfg.model.derived["sigma"],
        qv_rate=qv_rate, qv_rate_se=qv_se,
        var_rate=var_rate, var_rate_se=var_se)


# ---------------------------------------------------------------------------
# CLT reference and tests


@dataclass(frozen=True)
class GaussianJointReference:
    """Joint law of (integral of BM, BM) at inner time s, diffusion sigma."""

    sigma: float

    def cov(self, s: float) -> np.ndarray:
        s = float(s)
        return self.sigma * np.array([[s**3 / 3.0, s**2 / 2.0],
                                      [s**2 / 2.0, s]])

    def inverse_cov_s1(self) -> np.ndarray:
        return np.array([[12.0, -6.0], [-6.0, 4.0]]) / self.sigma

    def density_s1(self, x, k):
        """Stationary rescaled joint density at s=1."""
        sig = self.sigma
        return (math.sqrt(3.0) / (math.pi * sig)
                * np.exp(-(6.0 / sig) * (x - 0.5 * k) ** 2
                         - k**2 / (2.0 * sig)))

    def sample(self, s: float, n: int, rng: np.random.Generator):
        c = np.linalg.cholesky(self.cov(s))
        z = rng.standard_normal((n, 2))
        return z @ c.T


@dataclass
class StatsSummary:
    s_grid: tuple
    sigma: float
    mean_x: np.ndarray
    mean_k: np.ndarray
    cov: np.ndarray             # (n_s, 2, 2)
    ks_stat: np.ndarray
    ks_p: np.ndarray
    cov_rel_err: np.ndarray     # (n_s,) worst relative covariance deviation
    chi2_stat: float = math.nan  # 2-D histogram distance at s=1
    chi2_p: float = math.nan
    chi2_dof: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("s,mean_x,mean_k,cov_xx,cov_xk,cov_kk,ks_stat,ks_p\n")
            for j, s in enumerate(self.s_grid):
                c = self.cov[j]
                row = (s, self.mean_x[j], self.mean_k[j],
                       c[0, 0], c[0, 1], c[1, 1],
                       self.ks_stat[j], self.ks_p[j])
                f.write(",".join(repr(float(v)) for v in row) + "\n")


def _grid_chi2(xk: np.ndarray, ref: GaussianJointReference, n_bins: int = 6):
    """Histogram chi-square distance of (x_hat, k_hat) at s=1 against the
    stationary density, on a grid of marginal-quantile bins."""
    sig = ref.sigma
    sd_x = math.sqrt(sig / 3.0)
    sd_k = math.sqrt(sig)
    qs = np.linspace(0.0, 1.0, n_bins + 1)
    edges_x = sps.norm.ppf(qs, scale=sd_x)
    edges_k = sps.norm.ppf(qs, scale=sd_k)
    obs, _, _ = np.histogram2d(xk[:, 0], xk[:, 1], bins=[edges_x, edges_k])
    mvn = sps.multivariate_normal(mean=[0.0, 0.0], cov=ref.cov(1.0),
                                  allow_singular=False)
    fx = np.nan_to_num(edges_x, neginf=-1e9, posinf=1e9)
    fk = np.nan_to_num(edges_k, neginf=-1e9, posinf=1e9)
    cdf = np.array([[mvn.cdf([fx[i], fk[j]]) for j in range(n_bins + 1)]
                    for i in range(n_bins + 1)])
    prob = (cdf[1:, 1:] - cdf[:-1, 1:] - cdf[1:, :-1] + cdf[:-1, :-1])
    prob = np.clip(prob, 1e-12, None)
    prob /= prob.sum()
    n = len(xk)
    exp = prob * n
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = n_bins * n_bins - 1
    return stat, float(sps.chi2.sf(stat, dof)), dof


def clt_tests(result_or_samples, reference: GaussianJointReference,
              s_grid=None) -> StatsSummary:
    """Per-s marginal KS and joint covariance against the scaling limit.

    Accepts an EnsembleResult, or a raw (n, n_s, 2) array of (x_hat, k_hat)
    samples with an explicit s_grid (synthetic/null-calibration mode).
    """
    if isinstance(result_or_samples, EnsembleResult):
        res = result_or_samples
        s_grid = res.config.s_grid
        x = res.ok_rows(res.x_hat)
        k = res.ok_rows(res.k_hat)
    else:
        arr = np.asarray(result_or_samples)
        if s_grid is None:
            raise ValueError("s_grid required for raw sample input")
        x, k = arr[:, :, 0], arr[:, :, 1]
    n = len(x)
    if n < 1000:
        raise ValueError("clt_tests expects at least 1000 samples")
    n_s = len(s_grid)
    sig = reference.sigma
    mean_x = x.mean(axis=0)
    mean_k = k.mean(axis=0)
    cov = np.empty((n_s, 2, 2))
    ks_stat = np.empty(n_s)
    ks_p = np.empty(n_s)
    cov_rel = np.empty(n_s)
    for j, s in enumerate(s_grid):
        cov[j] = np.cov(np.stack([x[:, j], k[:, j]]), ddof=1)
        target = reference.cov(s)
        cov_rel[j] = float(np.max(np.abs(cov[j] - target) / np.abs(target)))
        r = sps.kstest(k[:, j], "norm", args=(0.0, math.sqrt(sig * s)),
                       mode="asymp")
        ks_stat[j], ks_p[j] = float(r.statistic), float(r.pvalue)
    summary = StatsSummary(
        s_grid=tuple(s_grid), sigma=sig, mean_x=mean_x, mean_k=mean_k,
        cov=cov, ks_stat=ks_stat, ks_p=ks_p, cov_rel_err=cov_rel)
    if math.isclose(s_grid[-1], 1.0) and n >= 1000:
        xk1 = np.stack([x[:, -1], k[:, -1]], axis=1)
        summary.chi2_stat, summary.chi2_p, summary.chi2_dof = _grid_chi2(
            xk1, reference)
    return summary


@dataclass(frozen=True)
class KSReport:
    stat: float
    p: float
    law: str


def abs_momentum_test(result_or_values, sigma: float | None = None
                      ) -> KSReport:
    """KS of t^{-1/2}|K_t| against the half-normal with scale sqrt(sigma)."""
    if isinstance(result_or_values, EnsembleResult):
        res = result_or_values
        if not math.isclose(res.config.s_grid[-1], 1.0):
            raise ValueError("abs momentum test expects s=1 in the grid")
        values = np.abs(res.ok_rows(res.k_hat[:, -1]))
        sigma = res.config.model.derived["sigma"]
    else:
        values = np.abs(np.asarray(result_or_values, dtype=float))
        if sigma is None:
            raise ValueError("sigma required for raw input")
    if len(values) < 1000:
        raise ValueError("abs momentum test expects at least 1000 samples")
    r = sps.kstest(values, "halfnorm", args=(0.0, math.sqrt(sigma)),
                   mode="asymp")
    return KSReport(stat=float(r.statistic), p=float(r.pvalue),
                    law="halfnorm")


# ---------------------------------------------------------------------------
# drift decay and energy growth


@dataclass(frozen=True)
class DecayRow:
    t: float
    mean: float
    se: float


def drift_decay_scan(model: ModelSpec, t_list, n: int, seed: int = 0,
                     workers: int = 1, initial: dict | None = None,
                     sim_kwargs: dict | None = None) -> list[DecayRow]:
    """E[sup_s |t^{-1/2} drift integral|] per horizon, bootstrap errors."""
    t_list = [float(t) for t in t_list]
    if len(t_list) < 3 or sorted(t_list) != t_list:
        raise ValueError("need at least 3 increasing horizons")
    rows = []
    for t in t_list:
        kw = dict(sim_kwargs or {})
        cfg = EnsembleConfig(model=model, n=n, t=t, s_grid=(1.0,),
                             seed=seed, initial=initial, workers=workers,
                             **kw)
        res = run_ensemble(cfg)
        d = res.ok_rows(res.drift_sup)
        rng = stream_rng(seed, int(t), domain=_BOOTSTRAP_DOMAIN)
        rows.append(DecayRow(t=t, mean=float(np.mean(d)),
                             se=bootstrap_se(np.mean, d, rng)))
    return rows


@dataclass(frozen=True)
class EnergySlope:
    slope: float
    se: float
    intercept: float


def energy_growth(t_list, e_arrays, seed: int = 0,
                  n_resamples: int = 400) -> EnergySlope:
    """Least-squares slope of mean E_t against t, bootstrap SE over
    trajectories within each horizon."""
    t = np.asarray([float(v) for v in t_list])
    if len(t) < 3:
        raise ValueError("need energies at >= 3 horizons")
    e_arrays = [np.asarray(e, dtype=float) for e in e_arrays]
    means = np.array([np.mean(e) for e in e_arrays])

    def fit(m):
        a = np.vstack([t, np.ones_like(t)]).T
        sol, *_ = np.linalg.lstsq(a, m, rcond=None)
        return sol

    slope, intercept = fit(means)
    rng = stream_rng(seed, 0, domain=_BOOTSTRAP_DOMAIN)
    boots = np.empty(n_resamples)
    for b in range(n_resamples):
        m = np.array([np.mean(e[rng.integers(0, len(e), size=len(e))])
                      for e in e_arrays])
        boots[b] = fit(m)[0]
    return EnergySlope(slope=float(slope), se=float(np.std(boots, ddof=1)),
                       intercept=float(intercept))
