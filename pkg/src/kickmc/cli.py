"""Config-driven verification runs with byte-stable outputs.

One subcommand per claim cluster: validate, simulate, clt, drift,
incursions, records, flatten, all. A run reads a strict JSON config, runs
the selected suites, and writes into the output directory:

  * suite CSVs (plot-ready, floats in shortest round-trip form),
  * summary.json with every check's status and the numbers behind it,
  * manifest.json listing the resolved config, per-suite statuses, and a
    sha256 digest of every emitted file,
  * run_info.json with timestamps and invocation details.

Everything except run_info.json is a pure function of (config, seed), so
re-running with a different worker count or at a different time produces
byte-identical artifacts; that is what makes the manifest digest a usable
cache key.

Exit codes: 0 all checks pass, 2 at least one check failed, 3 no failures
but at least one check was inconclusive at this sample size, 1 operational
error (bad config, integration failure).
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import stream_rng
from .ensemble import (EnsembleConfig, GaussianJointReference,
                       abs_momentum_test, clt_tests, drift_decay_scan,
                       energy_growth, estimate_sigma, run_ensemble)
from .incursions import (aggregate, count_scaling, detect,
                         drift_antisymmetry, exit_symmetry)
from .model import (InvalidModelError, JumpFamily, KickField, ModelSpec,
                    Modulation, Potential, validate)
from .records import (averaged_walk, flattening_to_csv,
                      first_jump_flattening, ladder_estimate, ladder_to_csv,
                      overshoot_scan, overshoot_to_csv)

SUITES = ("validate", "simulate", "clt", "drift", "incursions", "records",
          "flatten")
DEFAULT_LEVELS = (1.0, 2.0, 5.0)
_RECORDS_DOMAIN = 5        # rng domain for the walk suites (0 trajectories,
                           # 9 bootstrap, per the stream protocol)


class ConfigError(ValueError):
    """Schema violations, each message prefixed with its config path."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


# ---------------------------------------------------------------------------
# strict config parsing


def _take(d: dict, key: str, path: str, errors: list, kind,
          required: bool = False, default=None):
    if key not in d:
        if required:
            errors.append(f"{path}.{key}: missing required key")
        return default
    v = d.pop(key)
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            errors.append(f"{path}.{key}: expected a number")
            return default
        return float(v)
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            errors.append(f"{path}.{key}: expected an integer")
            return default
        return v
    if kind is bool and not isinstance(v, bool):
        errors.append(f"{path}.{key}: expected a boolean")
        return default
    if kind is str and not isinstance(v, str):
        errors.append(f"{path}.{key}: expected a string")
        return default
    if kind is dict and not isinstance(v, dict):
        errors.append(f"{path}.{key}: expected an object")
        return default
    if kind is list and not isinstance(v, list):
        errors.append(f"{path}.{key}: expected an array")
        return default
    return v


def _reject_unknown(d: dict, path: str, errors: list):
    for k in d:
        errors.append(f"{path}.{k}: unknown key")


def _parse_modulation(obj, path, errors) -> tuple[Modulation | None, dict]:
    obj = dict(obj or {})
    kind = _take(obj, "kind", path, errors, str, default="constant")
    base = _take(obj, "base", path, errors, float, default=1.0)
    amp = _take(obj, "amp", path, errors, float, default=0.0)
    _reject_unknown(obj, path, errors)
    resolved = {"kind": kind, "base": base, "amp": amp}
    try:
        return Modulation(kind, base, amp), resolved
    except (InvalidModelError, TypeError) as e:
        errors.append(f"{path}: {e}")
        return None, resolved


def _parse_model(obj, errors) -> tuple[ModelSpec | None, dict]:
    obj = dict(obj or {})
    pot_obj = dict(_take(obj, "potential", "model", errors, dict,
                         default={"kind": "zero"}) or {})
    kicks_obj = dict(_take(obj, "kicks", "model", errors, dict,
                           default={}) or {})
    _reject_unknown(obj, "model", errors)

    p_kind = _take(pot_obj, "kind", "model.potential", errors, str,
                   default="zero")
    p_amp = _take(pot_obj, "amplitude", "model.potential", errors, float,
                  default=0.0)
    p_table = _take(pot_obj, "table", "model.potential", errors, list)
    p_refl = pot_obj.pop("reflection_point", 0.0)
    if p_refl is not None and isinstance(p_refl, bool):
        errors.append("model.potential.reflection_point: expected a number "
                      "or null")
    _reject_unknown(pot_obj, "model.potential", errors)
    pot_resolved = {"kind": p_kind}
    if p_kind == "cosine":
        pot_resolved["amplitude"] = p_amp
    if p_table is not None:
        pot_resolved["table"] = [float(v) for v in p_table]
    pot_resolved["reflection_point"] = (None if p_refl is None
                                        else float(p_refl))

    rate = _take(kicks_obj, "rate", "model.kicks", errors, float, default=1.0)
    coin, coin_resolved = _parse_modulation(
        _take(kicks_obj, "coin", "model.kicks", errors, dict,
              default={"kind": "constant", "base": 1.0}),
        "model.kicks.coin", errors)
    jump_obj = dict(_take(kicks_obj, "jump", "model.kicks", errors, dict,
                          default={"kind": "laplace"}) or {})
    _reject_unknown(kicks_obj, "model.kicks", errors)

    j_kind = _take(jump_obj, "kind", "model.kicks.jump", errors, str,
                   default="laplace")
    scale, scale_resolved = _parse_modulation(
        _take(jump_obj, "scale", "model.kicks.jump", errors, dict,
              default={"kind": "constant", "base": 1.0}),
        "model.kicks.jump.scale", errors)
    j_weights = _take(jump_obj, "weights", "model.kicks.jump", errors, list)
    j_sds = _take(jump_obj, "sds", "model.kicks.jump", errors, list)
    j_vgrid = _take(jump_obj, "v_grid", "model.kicks.jump", errors, list)
    j_values = _take(jump_obj, "values", "model.kicks.jump", errors, list)
    _reject_unknown(jump_obj, "model.kicks.jump", errors)

    jump_resolved = {"kind": j_kind, "scale": scale_resolved}
    for name, val in (("weights", j_weights), ("sds", j_sds),
                      ("v_grid", j_vgrid), ("values", j_values)):
        if val is not None:
            jump_resolved[name] = [float(v) for v in val]

    resolved = {"potential": pot_resolved,
                "kicks": {"rate": rate, "coin": coin_resolved,
                          "jump": jump_resolved}}

    # value ranges the schema can see without running anything
    if not (rate > 0 and math.isfinite(rate)):
        errors.append("model.kicks.rate: must be finite and > 0")
    if coin is not None:
        lo, hi = coin.bounds()
        if lo <= 0.0 or hi > 1.0:
            errors.append("model.kicks.coin: values must lie in (0, 1], got "
                          f"range [{lo:g}, {hi:g}]")
    if scale is not None and scale.bounds()[0] <= 0.0:
        errors.append("model.kicks.jump.scale: values must be > 0")
    if errors:
        return None, resolved

    try:
        potential = Potential(kind=p_kind, amplitude=p_amp,
                              table=None if p_table is None
                              else tuple(float(v) for v in p_table),
                              reflection_point=p_refl)
    except (InvalidModelError, TypeError) as e:
        errors.append(f"model.potential: {e}")
        return None, resolved
    try:
        jump = JumpFamily(
            kind=j_kind, scale=scale,
            weights=None if j_weights is None else tuple(j_weights),
            sds=None if j_sds is None else tuple(j_sds),
            v_grid=None if j_vgrid is None else tuple(j_vgrid),
            values=None if j_values is None else tuple(j_values))
        kicks = KickField(rate=rate, coin=coin, jump=jump)
        return ModelSpec.build(potential, kicks), resolved
    except (InvalidModelError, TypeError, ValueError) as e:
        errors.append(f"model.kicks.jump: {e}")
        return None, resolved


@dataclass(frozen=True)
class RunConfig:
    """Parsed and validated run configuration.

    `resolved` is the canonical dict with every default filled in; emitting
    it and parsing the emission reproduces this object exactly, which keeps
    config digests stable.
    """

    seed: int
    model: ModelSpec
    t: float
    n: int
    s_grid: tuple
    h: float
    eps_e: float
    suites: tuple
    out: str
    resolved: dict = field(repr=False)


def parse_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"(root): not valid JSON: {e}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["(root): expected a JSON object"])
    raw = dict(raw)
    errors: list[str] = []

    seed = _take(raw, "seed", "(root)", errors, int, default=0)
    if seed is not None and not (0 <= seed < 2**64):
        errors.append("(root).seed: must fit in an unsigned 64-bit integer")
    model, model_resolved = _parse_model(
        _take(raw, "model", "(root)", errors, dict, default={}), errors)

    sim = dict(_take(raw, "simulation", "(root)", errors, dict,
                     default={}) or {})
    t = _take(sim, "t", "simulation", errors, float, default=100.0)
    n = _take(sim, "n", "simulation", errors, int, default=2000)
    s_grid = _take(sim, "s_grid", "simulation", errors, list,
                   default=[0.5, 1.0])
    h = _take(sim, "h", "simulation", errors, float, default=1e-3)
    eps_e = _take(sim, "eps_e", "simulation", errors, float, default=1e-8)
    _reject_unknown(sim, "simulation", errors)
    if t is not None and not (t > 0):
        errors.append("simulation.t: must be > 0")
    if n is not None and n < 1:
        errors.append("simulation.n: must be >= 1")
    if h is not None and not (h > 0):
        errors.append("simulation.h: must be > 0")
    if eps_e is not None and not (eps_e > 0):
        errors.append("simulation.eps_e: must be > 0")
    sg: list[float] = []
    if s_grid is not None:
        for i, v in enumerate(s_grid):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                errors.append(f"simulation.s_grid[{i}]: expected a number")
            else:
                sg.append(float(v))
        if sg and (sg != sorted(sg) or sg[0] <= 0.0 or sg[-1] > 1.0):
            errors.append("simulation.s_grid: must be sorted values in "
                          "(0, 1] ending at 1")
        if not sg:
            errors.append("simulation.s_grid: must be non-empty")

    suites_obj = dict(_take(raw, "suites", "(root)", errors, dict,
                            default={}) or {})
    enabled = []
    suites_resolved = {}
    for name in SUITES:
        flag = _take(suites_obj, name, "suites", errors, bool, default=True)
        suites_resolved[name] = bool(flag)
        if flag:
            enabled.append(name)
    _reject_unknown(suites_obj, "suites", errors)

    out = _take(raw, "out", "(root)", errors, str, default="runs")
    _reject_unknown(raw, "(root)", errors)

    if errors:
        raise ConfigError(errors)

    resolved = {
        "seed": seed,
        "model": model_resolved,
        "simulation": {"t": t, "n": n, "s_grid": sg, "h": h, "eps_e": eps_e},
        "suites": suites_resolved,
        "out": out,
    }
    return RunConfig(seed=seed, model=model, t=t, n=n, s_grid=tuple(sg),
                     h=h, eps_e=eps_e, suites=tuple(enabled), out=out,
                     resolved=resolved)


def emit_config(config: RunConfig) -> str:
    return json.dumps(config.resolved, indent=2) + "\n"


def config_digest(config: RunConfig) -> str:
    return hashlib.sha256(emit_config(config).encode()).hexdigest()


def default_config_text() -> str:
    """The documented minimal config: zero potential, homogeneous Laplace
    kicks at a quick desk scale."""
    return json.dumps({
        "seed": 1,
        "model": {
            "potential": {"kind": "zero"},
            "kicks": {"rate": 1.0,
                      "coin": {"kind": "constant", "base": 0.5},
                      "jump": {"kind": "laplace",
                               "scale": {"kind": "constant", "base": 1.0}}},
        },
        "simulation": {"t": 100.0, "n": 2000},
    }, indent=2) + "\n"


# ---------------------------------------------------------------------------
# checks and suite results


@dataclass
class Check:
    name: str
    status: str                # "pass" | "fail" | "inconclusive"
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "status": self.status, **self.detail}


@dataclass
class SuiteResult:
    name: str
    checks: list
    summary: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    @property
    def status(self) -> str:
        st = [c.status for c in self.checks]
        if "fail" in st:
            return "fail"
        if "inconclusive" in st:
            return "inconclusive"
        return "pass"


def _gate(name: str, ok: bool, inconclusive: bool = False, **detail) -> Check:
    if ok:
        return Check(name, "pass", detail)
    return Check(name, "inconclusive" if inconclusive else "fail", detail)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _ensemble(config: RunConfig, workers: int, *, t: float | None = None,
              n: int | None = None, s_grid=None, record_events=False):
    cfg = EnsembleConfig(
        model=config.model, n=n if n is not None else config.n,
        t=t if t is not None else config.t,
        s_grid=s_grid if s_grid is not None else config.s_grid,
        seed=config.seed, h=config.h, eps_e=config.eps_e,
        record_events=record_events, workers=workers)
    return run_ensemble(cfg, reducers=_detect_reducer if record_events
                        else None)


def _detect_reducer(traj, model):
    return detect(traj)


def _t_ladder(t: float) -> list[float]:
    # first rung at >= 10 so the t^{-1/2} rescaling is already active;
    # below that the sup statistic is still in its growth transient
    lo = max(10.0, t / 100.0)
    if lo >= t:
        return [t / 4.0, t / 2.0, t]
    return [float(v) for v in np.geomspace(lo, t, 3)]


# ---------------------------------------------------------------------------
# the suites


def _suite_validate(config: RunConfig, outdir: Path, workers: int,
                    levels) -> SuiteResult:
    rep = validate(config.model)
    checks = [_gate(f"assumption_{name}", ok) for name, ok in
              sorted(rep.flags.items())]
    return SuiteResult("validate", checks, summary={
        "flags": dict(sorted(rep.flags.items())),
        "constants": dict(sorted(rep.constants.items())),
        "worst": dict(sorted(rep.worst.items())),
        "advisories": list(rep.advisories),
        "derived": dict(sorted(config.model.derived.items())),
    })


def _suite_simulate(config: RunConfig, outdir: Path, workers: int,
                    levels) -> SuiteResult:
    res = _ensemble(config, workers)
    t = config.t
    rt = math.sqrt(t)
    lines = [f"# t={t!r} n={config.n} seed={config.seed} h={config.h!r} "
             f"eps_e={config.eps_e!r}",
             "idx,x_t,k_t,e_t,qv,qvp,drift_sup,failed"]
    for i in range(config.n):
        row = (res.x_hat[i, -1] * t * rt, res.k_hat[i, -1] * rt,
               res.e_t[i], res.qv[i], res.qvp[i], res.drift_sup[i])
        lines.append(f"{i}," + ",".join(repr(float(v)) for v in row)
                     + f",{int(res.failed[i])}")
    _write(outdir / "simulate.csv", "\n".join(lines) + "\n")
    frac = float(np.mean(res.failed))
    return SuiteResult(
        "simulate",
        [_gate("integration_failures", frac <= 1e-3, fraction=frac)],
        summary={"n": config.n, "t": t, "failed_fraction": frac,
                 "mean_e_t": float(np.nanmean(res.e_t)),
                 "var_k_hat": float(np.nanvar(res.k_hat[:, -1], ddof=1))},
        files=["simulate.csv"])


def _suite_clt(config: RunConfig, outdir: Path, workers: int,
               levels) -> SuiteResult:
    res = _ensemble(config, workers)
    est = estimate_sigma(res)
    ref = GaussianJointReference(sigma=est.quadrature)
    stats = clt_tests(res, ref)
    half = abs_momentum_test(res)
    stats.to_csv(outdir / "clt.csv")
    n = res.n_ok
    # rough sampling scale of a relative covariance entry, used only to
    # report underpowered runs as inconclusive instead of failed
    cov_noise = 3.0 * math.sqrt(8.0 / n)
    rel = float(stats.cov_rel_err[-1])
    checks = [
        _gate("sigma_concordance_3se", est.mutually_consistent(3.0),
              quadrature=est.quadrature, qv_rate=est.qv_rate,
              qv_rate_se=est.qv_rate_se, var_rate=est.var_rate,
              var_rate_se=est.var_rate_se),
        _gate("joint_cov_within_5pct", rel <= 0.05,
              inconclusive=cov_noise > 0.05, rel_err=rel,
              noise_scale=cov_noise),
        _gate("momentum_ks_p_gt_1pct", float(stats.ks_p[-1]) > 0.01,
              p=float(stats.ks_p[-1]), stat=float(stats.ks_stat[-1])),
        _gate("abs_momentum_ks_p_gt_1pct", half.p > 0.01, p=half.p,
              stat=half.stat),
    ]
    return SuiteResult("clt", checks, summary={
        "sigma_quadrature": est.quadrature, "qv_rate": est.qv_rate,
        "var_rate": est.var_rate, "cov_rel_err_s1": rel,
        "ks_p": [float(p) for p in stats.ks_p],
        "chi2_p_joint": stats.chi2_p, "halfnorm_p": half.p,
    }, files=["clt.csv"])


def _suite_drift(config: RunConfig, outdir: Path, workers: int,
                 levels) -> SuiteResult:
    ts = _t_ladder(config.t)
    rows = drift_decay_scan(config.model, ts, config.n, seed=config.seed,
                            workers=workers,
                            sim_kwargs={"h": config.h, "eps_e": config.eps_e})
    lines = ["# suite=drift", "t,mean_sup,se"]
    for r in rows:
        lines.append(f"{r.t!r},{r.mean!r},{r.se!r}")
    _write(outdir / "drift.csv", "\n".join(lines) + "\n")
    drop = rows[0].mean - rows[-1].mean
    se = math.hypot(rows[0].se, rows[-1].se)
    zero = rows[0].mean < 1e-12 and rows[-1].mean < 1e-12
    checks = [_gate("sup_drift_decreases_2se", zero or drop > 2.0 * se,
                    inconclusive=abs(drop) <= 2.0 * se,
                    first=rows[0].mean, last=rows[-1].mean, se=se)]
    return SuiteResult("drift", checks, summary={
        "t": [r.t for r in rows], "mean_sup": [r.mean for r in rows],
        "se": [r.se for r in rows]}, files=["drift.csv"])


def _suite_incursions(config: RunConfig, outdir: Path, workers: int,
                      levels) -> SuiteResult:
    ts = _t_ladder(config.t)
    stats_by_t = []
    e_by_t = []
    for t in ts:
        res = _ensemble(config, workers, t=t, s_grid=(1.0,),
                        record_events=True)
        evs = [e for e in res.extras["reduced"] if e is not None]
        stats_by_t.append(aggregate(evs, t))
        e_by_t.append(res.ok_rows(res.e_t))
    rows, slope, count_ok = count_scaling(stats_by_t, config.model)
    sym = exit_symmetry(stats_by_t[-1])
    dsym = drift_antisymmetry(stats_by_t[-1])
    eslope = energy_growth(ts, e_by_t, seed=config.seed)
    r1 = config.model.derived["r1"]
    r2 = config.model.derived["r2"]
    lines = ["# suite=incursions",
             "t,n_y_mean,n_y_mean_se,bound,ratio,duration_mean"]
    for r in rows:
        lines.append(f"{r.t!r},{r.n_y_mean!r},{r.n_y_mean_se!r},{r.bound!r},"
                     f"{r.ratio!r},{r.duration_mean!r}")
    _write(outdir / "incursions.csv", "\n".join(lines) + "\n")
    checks = [
        _gate("count_within_sqrt_r2_envelope", count_ok,
              ratios=[r.ratio for r in rows], bound=math.sqrt(r2)),
        _gate("y_rms_below_5", bool(dsym.y_rms < 5.0),
              inconclusive=math.isnan(dsym.y_rms), y_rms=dsym.y_rms),
        Check("exit_symmetry_3se", sym.status,
              {"rho_pm": sym.rho_pm, "rho_mp": sym.rho_mp, "se": sym.se}),
        Check("drift_antisymmetry_3se", dsym.status,
              {"c_pp": list(dsym.c_pp), "c_mm": list(dsym.c_mm),
               "c_cross": list(dsym.c_pm_plus_mp)}),
        _gate("energy_slope_in_r_band",
              r1 / 2.0 - 3.0 * eslope.se <= eslope.slope
              <= r2 / 2.0 + 3.0 * eslope.se,
              slope=eslope.slope, se=eslope.se, lo=r1 / 2.0, hi=r2 / 2.0),
    ]
    return SuiteResult("incursions", checks, summary={
        "t": ts, "count_slope_loglog": slope,
        "energy_slope": eslope.slope, "energy_slope_se": eslope.se,
        "y_rms": dsym.y_rms}, files=["incursions.csv"])


def _suite_records(config: RunConfig, outdir: Path, workers: int,
                   levels) -> SuiteResult:
    lv = sorted(levels if levels else DEFAULT_LEVELS)
    walk = averaged_walk(config.model)
    ladder = ladder_estimate(
        walk, 1_000_000, stream_rng(config.seed, 0, _RECORDS_DOMAIN),
        workers=workers, cache_dir=outdir / "cache",
        cache_key=f"seed{config.seed}")
    scan = overshoot_scan(walk, lv, config.n,
                          stream_rng(config.seed, 1, _RECORDS_DOMAIN),
                          ladder=ladder, workers=workers)
    _write(outdir / "ladder.csv", ladder_to_csv(ladder))
    files = ["ladder.csv"]
    for table in scan:
        name = f"overshoot_L{table.level:g}.csv"
        _write(outdir / name, overshoot_to_csv(table))
        files.append(name)
    lines = ["# suite=records distance=l1_to_limit",
             "level,l1,l1_se,n_samples,n_censored"]
    for table in scan:
        lines.append(f"{table.level!r},{table.l1!r},{table.l1_se!r},"
                     f"{table.n_samples},{table.n_censored}")
    _write(outdir / "records_distances.csv", "\n".join(lines) + "\n")
    files.append("records_distances.csv")
    norm_ok = all(abs(t.empirical.sum() - 1.0) < 1e-6 for t in scan)
    checks = [
        _gate("tables_normalized", norm_ok),
        _gate("l1_non_increasing_2se", scan.monotone_ok,
              l1=list(scan.l1), diff_se=list(scan.diff_se)),
    ]
    return SuiteResult("records", checks, summary={
        "levels": lv, "l1": list(scan.l1), "l1_se": list(scan.l1_se),
        "ladder_records": ladder.n_records,
        "ladder_mean_height": ladder.mean_height,
        "folded": [t.folded for t in scan]}, files=files)


def _suite_flatten(config: RunConfig, outdir: Path, workers: int,
                   levels) -> SuiteResult:
    vbar = config.model.potential.vbar
    ks = [k for k in (10.0, 100.0, 1000.0) if k > 2.0 * math.sqrt(vbar)]
    rep = first_jump_flattening(
        config.model, ks, config.n,
        stream_rng(config.seed, 2, _RECORDS_DOMAIN))
    _write(outdir / "flatten.csv", flattening_to_csv(rep))
    last = rep.rows[-1]
    # sup over bins of a centered histogram fluctuates at ~2.6 sd
    noise_sup = 2.6 * math.sqrt(rep.n_bins / config.n)
    envelope_ok = last.ratio <= 1.5
    noisy = 3.0 * noise_sup > 0.5 * last.envelope
    slope_ok = -1.3 <= rep.slope <= -0.7
    slope_noisy = any(r.sup_dev < 3.0 * noise_sup for r in rep.rows[-2:])
    checks = [
        _gate("sup_dev_within_envelope", envelope_ok, inconclusive=noisy,
              k=last.k, sup_dev=last.sup_dev, envelope=last.envelope,
              noise_scale=noise_sup),
        _gate("decay_slope_in_band", slope_ok, inconclusive=slope_noisy,
              slope=rep.slope),
    ]
    return SuiteResult("flatten", checks, summary={
        "k": [r.k for r in rep.rows], "sup_dev": [r.sup_dev for r in rep.rows],
        "envelope": [r.envelope for r in rep.rows], "slope": rep.slope,
    }, files=["flatten.csv"])


_SUITE_FN = {
    "validate": _suite_validate,
    "simulate": _suite_simulate,
    "clt": _suite_clt,
    "drift": _suite_drift,
    "incursions": _suite_incursions,
    "records": _suite_records,
    "flatten": _suite_flatten,
}


# ---------------------------------------------------------------------------
# orchestration


def _jclean(v):
    """JSON-safe copy: numpy scalars to python, non-finite floats to None."""
    if isinstance(v, dict):
        return {str(k): _jclean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jclean(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jclean(x) for x in v.tolist()]
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(subcommand: str, config: RunConfig, out: Path | None = None,
        workers: int = 1, levels=None) -> tuple[dict, int]:
    """Execute one suite (or `all`); returns (manifest, exit_code)."""
    outdir = Path(out) if out is not None else Path(config.out)
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    names = list(config.suites) if subcommand == "all" else [subcommand]
    results: list[SuiteResult] = []
    incomplete = False
    error_msg = None
    for name in names:
        try:
            results.append(_SUITE_FN[name](config, outdir, workers, levels))
        except Exception as e:                      # noqa: BLE001
            incomplete = True
            error_msg = f"{name}: {type(e).__name__}: {e}"
            break

    summary = {"suites": {r.name: {
        "status": r.status,
        "checks": [c.as_dict() for c in r.checks],
        **r.summary} for r in results}}
    if error_msg:
        summary["error"] = error_msg
    _write(outdir / "summary.json",
           json.dumps(_jclean(summary), indent=2) + "\n")

    files = sorted({f for r in results for f in r.files} | {"summary.json"})
    manifest = {
        "artifact_version": __version__,
        "command": subcommand,
        "config_sha256": config_digest(config),
        "config": config.resolved,
        "incomplete": incomplete,
        "suites": {r.name: r.status for r in results},
        "files": [{"path": f, "sha256": _sha256_file(outdir / f)}
                  for f in files],
    }
    _write(outdir / "manifest.json",
           json.dumps(_jclean(manifest), indent=2) + "\n")
    _write(outdir / "run_info.json", json.dumps({
        "started_utc": datetime.datetime.fromtimestamp(
            started, datetime.timezone.utc).isoformat(),
        "duration_s": time.time() - started,
        "workers": workers,
        "argv": sys.argv,
    }, indent=2) + "\n")

    if incomplete:
        return manifest, 1
    statuses = [r.status for r in results]
    if "fail" in statuses:
        return manifest, 2
    if "inconclusive" in statuses:
        return manifest, 3
    return manifest, 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kickmc",
        description="Verification suites for the kicked-particle simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*SUITES, "all"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, default=None,
                        help="JSON config path (built-in default if omitted)")
        sp.add_argument("--out", type=Path, default=None,
                        help="output directory (overrides config)")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--seed", type=int, default=None,
                        help="overrides the config seed")
        if name in ("records", "all"):
            sp.add_argument("--levels", type=str, default=None,
                            help="comma-separated overshoot levels")
    args = parser.parse_args(argv)

    try:
        text = (args.config.read_text(encoding="utf-8")
                if args.config is not None else default_config_text())
    except OSError as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return 1
    try:
        config = parse_config(text)
        if args.seed is not None:
            patched = dict(config.resolved)
            patched["seed"] = args.seed
            config = parse_config(json.dumps(patched))
    except ConfigError as e:
        for msg in e.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return 1

    levels = None
    if getattr(args, "levels", None):
        try:
            levels = [float(v) for v in args.levels.split(",")]
        except ValueError:
            print(f"error: bad --levels list {args.levels!r}",
                  file=sys.stderr)
            return 1

    manifest, code = run(args.command, config, out=args.out,
                         workers=max(1, args.workers), levels=levels)
    for name, status in manifest["suites"].items():
        print(f"{name}: {status}")
    if manifest["incomplete"]:
        print("run incomplete; see summary.json", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
