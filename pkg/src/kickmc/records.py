"""Record increments of the averaged walk and level-crossing laws.

The torus-averaged kick density defines a mean-zero random walk. Three
related objects are estimated here and compared against each other and
against closed forms:

  * the record (ladder-height) increment law D(v, w): overshoot v over the
    running maximum and the step w that achieved it, harvested as repeated
    first passages over 0 (successive record increments are i.i.d., so one
    stream of restarts is the same process as one long walk's records);
  * level overshoot laws pi_L(v, w): first-passage excess over a level L,
    with the integrated-tail limit pi_inf(v, w) computed from D;
  * torus-decorated crossings phi_L(a, v) under the full dynamics: the
    momentum observed at fired kicks forms a chain whose increments include
    the flow drift; phi_L collects (torus position, overshoot) at the
    chain's first passage below L, compared to the reference built from
    pi_inf and the position-weighted kick kernel.

Grids are uniform on [0, 8 * step_rms] with mass beyond the grid folded
into the last bin (reported as `folded`). All estimators bin by count and
normalize to total mass 1. Stored tables use the full 256-bin axes; the L1
distance statistics are computed on a 4x block-aggregated view (64 bins per
axis), where the distances are signal-dominated at the sample sizes the
convergence checks pin down. On the full grid the Monte Carlo L1 noise
floor of a 1e6-sample joint histogram is about 0.08, which would swamp the
convergence gates; aggregation is exact mass addition, so nothing is lost
from the stored tables.

First-passage times over a level have infinite mean (the walk is driftless),
so every sampler carries a per-sample step cap; samples that do not cross in
time are censored, counted, and excluded. The cap is the only truncation of
the law: the sweep kernel never starts a sample without a full cap's worth
of uniforms in its pool, so no sample is ever restarted mid-flight.

Parallelism splits samples over a fixed number of independent RNG streams
(spawned once, in a fixed order, from the caller's generator), and merging
is an ordered bin-wise sum, so results are byte-identical for any worker
count.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .dynamics import build_tables_for
from .kernels import (crossing_scan_kernel, flatten_kernel,
                      renewal_overshoot_kernel, walk_sweep_kernel)
from .model import ModelSpec, averaged_kick
from .tables import KickTables, _pwl_second_moment, pack_potential

N_BLOCKS = 16          # fixed RNG-stream count; workers only schedule them
GRID_BINS = 256
GRID_SPAN = 8.0        # edges run to span * step_rms
DISTANCE_FOLD = 4      # L1 distances use the grid aggregated by this factor
DEFAULT_STEP_CAP = 1_000_000


class RecordsError(RuntimeError):
    """Estimation failed operationally (all samples censored, kernel fail)."""


class DegenerateTableError(ValueError):
    """A ladder table with no mass or zero mean height was supplied."""


# ---------------------------------------------------------------------------
# the averaged walk


@dataclass(frozen=True)
class AveragedWalk:
    """Steps of the torus-averaged kick law, sampled by inverse CDF.

    The quantile table lives on a uniform u-grid so the hot loops index it
    directly. kind "twopoint" bypasses the table with exact +-step draws
    (the lattice anchor where every record increment equals the step).
    """

    kind: str                  # "table" | "twopoint"
    uq: np.ndarray             # quantile at u = j/(len-1)
    step_rms: float
    rate: float                # averaged jump rate, carried for reference
    tp_step: float = 0.0

    @property
    def kind_code(self) -> int:
        return 1 if self.kind == "twopoint" else 0

    def steps(self, us: np.ndarray) -> np.ndarray:
        """Vectorized mirror of the kernel's draw (bit-identical)."""
        if self.kind == "twopoint":
            return np.where(us >= 0.5, self.tp_step, -self.tp_step)
        m = len(self.uq) - 1
        pos = us * m
        j = np.minimum(pos.astype(np.int64), m - 1)
        frac = pos - j
        return self.uq[j] + (self.uq[j + 1] - self.uq[j]) * frac

    def fingerprint(self) -> str:
        h = hashlib.sha1()
        h.update(self.kind.encode())
        h.update(np.float64(self.tp_step).tobytes())
        h.update(self.uq.tobytes())
        return h.hexdigest()[:16]


def averaged_walk(model: ModelSpec, n_grid: int = 1 << 16) -> AveragedWalk:
    """Build the walk from the torus-averaged kick density."""
    avg = averaged_kick(model)
    dv = np.diff(avg.v_grid)
    cdf = np.concatenate(
        ([0.0], np.cumsum(0.5 * dv * (avg.density[1:] + avg.density[:-1]))))
    cdf /= cdf[-1]
    ug = np.linspace(0.0, 1.0, n_grid + 1)
    uq = np.interp(ug, cdf, avg.v_grid)
    rms = math.sqrt(_pwl_second_moment(ug, uq))
    return AveragedWalk(kind="table", uq=uq, step_rms=rms, rate=avg.rate)


def two_point_walk(step: float = 1.0) -> AveragedWalk:
    if step <= 0:
        raise ValueError("two-point step must be positive")
    return AveragedWalk(kind="twopoint", uq=np.zeros(2), step_rms=step,
                        rate=1.0, tp_step=step)


def grid_edges(step_rms: float, n_bins: int = GRID_BINS,
               span: float = GRID_SPAN) -> np.ndarray:
    return np.linspace(0.0, span * step_rms, n_bins + 1)


# ---------------------------------------------------------------------------
# binning helpers


def _bin2d(v: np.ndarray, w: np.ndarray, v_edges: np.ndarray,
           w_edges: np.ndarray) -> tuple[np.ndarray, float]:
    """Counts on the (v, w) grid; overflow folds into the last bin."""
    nv = len(v_edges) - 1
    nw = len(w_edges) - 1
    dv = v_edges[1] - v_edges[0]
    dw = w_edges[1] - w_edges[0]
    iv = np.minimum((v / dv).astype(np.int64), nv - 1)
    iw = np.minimum((w / dw).astype(np.int64), nw - 1)
    folded = float(np.mean((v >= v_edges[-1]) | (w >= w_edges[-1]))) if len(v) else 0.0
    counts = np.bincount(iv * nw + iw, minlength=nv * nw).astype(float)
    return counts.reshape(nv, nw), folded


def _flat_ids(v: np.ndarray, w: np.ndarray, v_edges: np.ndarray,
              w_edges: np.ndarray) -> np.ndarray:
    nv = len(v_edges) - 1
    nw = len(w_edges) - 1
    iv = np.minimum((v / (v_edges[1] - v_edges[0])).astype(np.int64), nv - 1)
    iw = np.minimum((w / (w_edges[1] - w_edges[0])).astype(np.int64), nw - 1)
    return iv * nw + iw


def _l1(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(a - b).sum())


def _coarsen(m: np.ndarray, fold: int = DISTANCE_FOLD) -> np.ndarray:
    """Block-sum a 2-D mass table by `fold` along both axes."""
    nv, nw = m.shape
    return m.reshape(nv // fold, fold, nw // fold, fold).sum(axis=(1, 3))


def _block_sizes(n: int, n_blocks: int = N_BLOCKS) -> list[int]:
    edges = np.linspace(0, n, n_blocks + 1).astype(int)
    return [int(hi - lo) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def _map_ordered(fn, payloads, workers: int):
    if workers <= 1 or len(payloads) < 2:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, payloads))


def _spawn_layout(rng: np.random.Generator):
    """Fixed spawn order shared by the walk estimators: one stream for an
    internal ladder build, one for bootstraps, N_BLOCKS for sample blocks.
    Sharing the layout is what makes the level-0 scan reproduce
    ladder_estimate draw for draw under a shared seed."""
    children = rng.spawn(N_BLOCKS + 2)
    return children[0], children[1], children[2:]


# ---------------------------------------------------------------------------
# ladder (record increment) estimation


@dataclass(frozen=True)
class LadderTable:
    """Empirical joint law of (record increment v, achieving step w)."""

    v_edges: np.ndarray
    w_edges: np.ndarray
    mass: np.ndarray           # (n_v, n_w), sums to 1
    inc_v: np.ndarray          # raw completed increments, for resampling
    inc_w: np.ndarray
    n_records: int
    n_censored: int
    folded: float
    step_cap: int

    @property
    def marginal_v(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    @property
    def mean_height(self) -> float:
        return float(self.inc_v.mean()) if len(self.inc_v) else 0.0


def _sweep_block(args):
    """One RNG stream's worth of multi-level first passages."""
    walk, levels, n, child, step_cap = args
    out_v = np.empty((n, len(levels)))
    out_w = np.empty((n, len(levels)))
    pool_n = 2 * step_cap
    s = 0
    while s < n:
        us = child.random(pool_n)
        s, _used = walk_sweep_kernel(walk.kind_code, walk.tp_step, walk.uq,
                                     us, levels, step_cap, out_v, out_w, s)
    return out_v, out_w


def _run_sweep(walk: AveragedWalk, levels: np.ndarray, n_samples: int,
               blocks: Sequence[np.random.Generator], step_cap: int,
               workers: int) -> tuple[np.ndarray, np.ndarray]:
    sizes = _block_sizes(n_samples)
    payloads = [(walk, levels, sz, child, step_cap)
                for sz, child in zip(sizes, blocks)]
    parts = _map_ordered(_sweep_block, payloads, workers)
    out_v = np.concatenate([p[0] for p in parts])
    out_w = np.concatenate([p[1] for p in parts])
    return out_v, out_w


def ladder_estimate(walk: AveragedWalk, n_records: int,
                    rng: np.random.Generator, *,
                    step_cap: int = DEFAULT_STEP_CAP,
                    n_bins: int = GRID_BINS,
                    workers: int = 1,
                    cache_dir: str | Path | None = None,
                    cache_key: str | None = None) -> LadderTable:
    """Harvest record increments as repeated first passages over 0.

    A record taking more than step_cap steps is censored (counted, not
    binned); at the default cap that is a few-per-10^4 event. With cache_dir
    and cache_key set (the key should carry the seed), the raw increments
    are stored on disk keyed by walk fingerprint, grid, count and key.
    """
    if n_records < 10_000:
        raise ValueError("need at least 1e4 records for a usable table")
    edges = grid_edges(walk.step_rms, n_bins)
    cache_file = None
    if cache_dir is not None and cache_key is not None:
        meta = {"walk": walk.fingerprint(), "n_records": n_records,
                "step_cap": step_cap, "n_bins": n_bins,
                "span": GRID_SPAN, "key": str(cache_key)}
        tag = hashlib.sha1(json.dumps(meta, sort_keys=True).encode()).hexdigest()[:20]
        cache_file = Path(cache_dir) / f"ladder-{tag}.npz"
        if cache_file.exists():
            data = np.load(cache_file)
            return _ladder_from_raw(data["inc_v"], data["inc_w"],
                                    int(data["n_censored"]), edges, step_cap)
    _lad, _boot, blocks = _spawn_layout(rng)
    out_v, out_w = _run_sweep(walk, np.array([0.0]), n_records, blocks,
                              step_cap, workers)
    table = _ladder_from_raw(out_v[:, 0], out_w[:, 0], -1, edges, step_cap)
    if cache_file is not None:
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        np.savez(cache_file, inc_v=table.inc_v, inc_w=table.inc_w,
                 n_censored=table.n_censored)
    return table


def _ladder_from_raw(raw_v: np.ndarray, raw_w: np.ndarray, n_censored: int,
                     edges: np.ndarray, step_cap: int) -> LadderTable:
    good = ~np.isnan(raw_v)
    if n_censored < 0:
        n_censored = int((~good).sum())
        raw_v, raw_w = raw_v[good], raw_w[good]
    if len(raw_v) == 0:
        raise RecordsError("every record attempt hit the step cap")
    counts, folded = _bin2d(raw_v, raw_w, edges, edges)
    return LadderTable(v_edges=edges, w_edges=edges,
                       mass=counts / counts.sum(),
                       inc_v=raw_v, inc_w=raw_w,
                       n_records=len(raw_v), n_censored=n_censored,
                       folded=folded, step_cap=step_cap)


def pi_infinity(ladder: LadderTable) -> np.ndarray:
    """Limit overshoot law on the ladder's grid: the integrated v-tail of
    D(v, w), renormalized (the mean-height denominator drops out under
    renormalization, which also absorbs the binning of the tail)."""
    if ladder.n_records == 0:
        raise DegenerateTableError("empty ladder table")
    if ladder.mean_height <= 0.0:
        raise DegenerateTableError("ladder mean height is not positive")
    tail = np.cumsum(ladder.mass[::-1], axis=0)[::-1]
    z = tail.sum()
    if z <= 0.0:
        raise DegenerateTableError("ladder table has no positive mass")
    return tail / z


# ---------------------------------------------------------------------------
# level overshoot scans


@dataclass(frozen=True)
class OvershootTable:
    level: float
    v_edges: np.ndarray
    w_edges: np.ndarray
    empirical: np.ndarray      # (n_v, n_w) mass
    reference: np.ndarray      # pi_inf on the same grid
    l1: float                  # distance on the DISTANCE_FOLD-aggregated view
    l1_se: float
    n_samples: int
    n_censored: int
    folded: float


@dataclass(frozen=True)
class OvershootScanResult(Sequence):
    """Per-level overshoot tables plus the cross-level trend statistics.

    Indexable like the list of tables. diff_se[i] is the bootstrap SE of
    l1[i+1] - l1[i] (levels share samples, so differences are tighter than
    the individual distances). SEs cover scan sampling only, not the
    reference ladder's own noise.
    """

    tables: list[OvershootTable]
    l1: np.ndarray
    l1_se: np.ndarray
    diff_se: np.ndarray

    def __len__(self):
        return len(self.tables)

    def __getitem__(self, i):
        return self.tables[i]

    @property
    def levels(self) -> np.ndarray:
        return np.array([t.level for t in self.tables])

    @property
    def monotone_ok(self) -> bool:
        d = np.diff(self.l1)
        return bool(np.all(d <= 2.0 * self.diff_se))


def overshoot_scan(walk: AveragedWalk, levels: Sequence[float],
                   n_samples: int, rng: np.random.Generator, *,
                   ladder: LadderTable | None = None,
                   n_records: int = 1_000_000,
                   step_cap: int = DEFAULT_STEP_CAP,
                   n_bins: int = GRID_BINS,
                   workers: int = 1,
                   n_boot: int = 100) -> OvershootScanResult:
    """Empirical pi_L for each level, against pi_inf from a ladder table.

    One walk per sample sweeps through all levels (its first passage over
    each is recorded in one pass), so per-level laws are exact marginals and
    cross-level differences share randomness. With ladder=None a reference
    ladder is built from a dedicated child stream, leaving the sample
    streams untouched: a scan at levels=[0] consumes randomness identically
    to ladder_estimate, which is the shared-seed identity pinning pi_0 = D.
    Distances (and their bootstrap SEs) are evaluated on the aggregated
    distance grid; see the module docstring.
    """
    lv = np.asarray(levels, dtype=float)
    if len(lv) == 0 or np.any(np.diff(lv) <= 0) or lv[0] < 0:
        raise ValueError("levels must be strictly increasing and nonnegative")
    lad_rng, boot_rng, blocks = _spawn_layout(rng)
    if ladder is None:
        lad_blocks = lad_rng.spawn(N_BLOCKS)
        lv0, lw0 = _run_sweep(walk, np.array([0.0]), n_records, lad_blocks,
                              step_cap, workers)
        edges = grid_edges(walk.step_rms, n_bins)
        ladder = _ladder_from_raw(lv0[:, 0], lw0[:, 0], -1, edges, step_cap)
    ref = pi_infinity(ladder)
    v_edges, w_edges = ladder.v_edges, ladder.w_edges
    out_v, out_w = _run_sweep(walk, lv, n_samples, blocks, step_cap, workers)

    cv_edges = v_edges[::DISTANCE_FOLD]
    cw_edges = w_edges[::DISTANCE_FOLD]
    n_cells = (len(cv_edges) - 1) * (len(cw_edges) - 1)
    ref_c = _coarsen(ref)
    refflat = ref_c.ravel()
    ids = np.full((n_samples, len(lv)), -1, dtype=np.int64)
    tables: list[OvershootTable] = []
    l1 = np.empty(len(lv))
    for j, level in enumerate(lv):
        good = ~np.isnan(out_v[:, j])
        v, w = out_v[good, j], out_w[good, j]
        if len(v) == 0:
            raise RecordsError(f"all samples censored before level {level}")
        counts, folded = _bin2d(v, w, v_edges, w_edges)
        mass = counts / counts.sum()
        ids[good, j] = _flat_ids(v, w, cv_edges, cw_edges)
        l1[j] = _l1(_coarsen(mass), ref_c)
        tables.append(OvershootTable(
            level=float(level), v_edges=v_edges, w_edges=w_edges,
            empirical=mass, reference=ref, l1=float(l1[j]), l1_se=np.nan,
            n_samples=int(good.sum()), n_censored=int((~good).sum()),
            folded=folded))

    # joint Poisson bootstrap over samples: one weight per walk, reused at
    # every level, so difference SEs see the shared randomness
    reps = np.empty((n_boot, len(lv)))
    for b in range(n_boot):
        wts = boot_rng.poisson(1.0, n_samples).astype(float)
        for j in range(len(lv)):
            sel = ids[:, j] >= 0
            tot = wts[sel].sum()
            hist = np.bincount(ids[sel, j], weights=wts[sel],
                               minlength=n_cells)
            reps[b, j] = np.abs(hist / tot - refflat).sum()
    l1_se = reps.std(axis=0, ddof=1)
    diff_se = np.diff(reps, axis=1).std(axis=0, ddof=1)
    tables = [OvershootTable(**{**t.__dict__, "l1_se": float(se)})
              for t, se in zip(tables, l1_se)]
    return OvershootScanResult(tables=tables, l1=l1, l1_se=l1_se,
                               diff_se=diff_se)


def renewal_overshoot(ladder: LadderTable, level: float, n_samples: int,
                      rng: np.random.Generator) -> OvershootTable:
    """pi_L via the renewal view: resample ladder increments until the
    running sum of heights clears the level. Distribution-identical to the
    walk's first passage (records are where passages happen), so this
    cross-checks the two engines against each other."""
    if ladder.n_records == 0 or ladder.mean_height <= 0:
        raise DegenerateTableError("cannot resample a degenerate ladder")
    out_v = np.empty(n_samples)
    out_w = np.empty(n_samples)
    n_inc = len(ladder.inc_v)
    pool_n = max(64 * (int(level / ladder.mean_height) + 2), 4096)
    s = 0
    while s < n_samples:
        idx = rng.integers(0, n_inc, size=pool_n)
        s, _used = renewal_overshoot_kernel(ladder.inc_v, ladder.inc_w, idx,
                                            level, out_v, out_w, s)
    counts, folded = _bin2d(out_v, out_w, ladder.v_edges, ladder.w_edges)
    mass = counts / counts.sum()
    ref = pi_infinity(ladder)
    return OvershootTable(level=float(level), v_edges=ladder.v_edges,
                          w_edges=ladder.w_edges, empirical=mass,
                          reference=ref, l1=_l1(_coarsen(mass), _coarsen(ref)),
                          l1_se=np.nan, n_samples=n_samples, n_censored=0,
                          folded=folded)


# ---------------------------------------------------------------------------
# torus-decorated crossings under the full dynamics


@dataclass(frozen=True)
class TorusCrossingTable:
    level: float
    a_edges: np.ndarray
    v_edges: np.ndarray
    empirical: np.ndarray      # (n_a, n_v) mass
    reference: np.ndarray
    l1_joint: float            # on the v-aggregated distance grid
    l1_a: float
    chi2_p_uniform_a: float    # a-marginal vs uniform, diagnostic
    n_samples: int
    n_censored: int
    n_failed: int


def _jazz_reference(model: ModelSpec, tables: KickTables, pi_inf: np.ndarray,
                    w_edges: np.ndarray, n_a_bins: int) -> np.ndarray:
    """Reference crossing law: pi_inf's (v, w) mass redistributed over the
    torus by the position-weighted kick kernel, column-normalized per w so
    the result is a probability table by construction."""
    n_cells = tables.n_cells
    if n_cells % n_a_bins:
        raise ValueError("a-bin count must divide the table cell count")
    centers = (np.arange(n_cells) + 0.5) / n_cells
    kappa = np.asarray(model.kicks.coin(centers), dtype=float)
    cdf = np.empty((n_cells, len(w_edges)))
    for c in range(n_cells):
        cdf[c] = np.interp(w_edges, tables.quantiles[c], tables.knot_u)
    mass = np.diff(cdf, axis=1)
    mass[:, -1] += 1.0 - cdf[:, -1]            # fold tail like the histograms
    numer = kappa[:, None] * mass
    col = numer.sum(axis=0)
    kernel = np.where(col > 0, numer / np.where(col > 0, col, 1.0),
                      1.0 / n_cells)
    kb = kernel.reshape(n_a_bins, n_cells // n_a_bins, -1).sum(axis=1)
    phi = np.einsum("vw,aw->av", pi_inf, kb)
    return phi / phi.sum()


def _torus_block(args):
    (model, levels, n, child, t_cap, pad, h, eps_e, max_halvings,
     n_a_bins, v_edges) = args
    tables = build_tables_for(model)
    code, amp, tab = pack_potential(model.potential)
    n_levels = len(levels)
    n_v = len(v_edges) - 1
    dv = v_edges[1] - v_edges[0]
    hist = np.zeros((n_levels, n_a_bins, n_v))
    done = np.zeros(n_levels, dtype=np.int64)
    folded = np.zeros(n_levels, dtype=np.int64)
    n_failed = 0
    k0 = levels[0] + pad
    n_rows = int(tables.rate * t_cap + 10.0 * math.sqrt(tables.rate * t_cap)) + 20
    out_a = np.empty(n_levels)
    out_v = np.empty(n_levels)
    out_w = np.empty(n_levels)
    out_t = np.empty(n_levels)
    for _ in range(n):
        x0 = child.random()
        u_blocks = child.random((n_rows, 3))
        lvl, used = crossing_scan_kernel(
            x0, k0, levels, t_cap, code, amp, tab,
            tables.coin_kind, tables.coin_base, tables.coin_amp,
            tables.knot_u, tables.quantiles, tables.m2_rate_cell,
            tables.m2_rate_prefix, tables.rate, h, eps_e, max_halvings,
            u_blocks, out_a, out_v, out_w, out_t)
        if lvl < 0:
            n_failed += 1
            continue
        if lvl < n_levels and used >= n_rows:
            raise RecordsError("alarm pool exhausted below the time cap; "
                               "this should be a <1e-12 event")
        for j in range(lvl):
            ia = min(int(out_a[j] * n_a_bins), n_a_bins - 1)
            iv = int(out_v[j] / dv)
            if iv >= n_v:
                iv = n_v - 1
                folded[j] += 1
            hist[j, ia, iv] += 1.0
            done[j] += 1
    return hist, done, folded, n_failed


def torus_crossing_scan(model: ModelSpec, levels: Sequence[float],
                        n_samples: int, rng: np.random.Generator, *,
                        t_cap: float = 10_000.0, pad: float = 2.0,
                        n_a_bins: int = 64, h: float = 2.5e-3,
                        eps_e: float = 1e-5, max_halvings: int = 20,
                        workers: int = 1,
                        ladder: LadderTable | None = None,
                        n_records: int = 1_000_000,
                        step_cap: int = DEFAULT_STEP_CAP,
                        ) -> list[TorusCrossingTable]:
    """Crossing laws of the full dynamics at high momentum levels.

    Each sample starts at (x0 ~ uniform, k0 = max level + pad) and runs the
    jump chain down through every level (sorted descending); a sample not
    crossing a level by t_cap is censored there. Levels must sit far above
    the potential scale (level^2 > 100 * sup V) so the chain is
    walk-like; the reference is the averaged walk's pi_inf dressed with the
    position kernel.
    """
    lv = np.sort(np.asarray(levels, dtype=float))[::-1].copy()
    if len(lv) == 0 or len(np.unique(lv)) != len(lv):
        raise ValueError("levels must be distinct")
    vbar = model.potential.vbar
    if np.any(lv * lv <= 100.0 * vbar):
        raise ValueError(
            f"levels too low for the high-momentum regime: need "
            f"level^2 > {100.0 * vbar:g}")
    tables = build_tables_for(model)
    lad_rng, _boot, blocks = _spawn_layout(rng)
    if ladder is None:
        walk = averaged_walk(model)
        lad_blocks = lad_rng.spawn(N_BLOCKS)
        lv0, lw0 = _run_sweep(walk, np.array([0.0]), n_records, lad_blocks,
                              step_cap, workers)
        edges = grid_edges(walk.step_rms)
        ladder = _ladder_from_raw(lv0[:, 0], lw0[:, 0], -1, edges, step_cap)
    pi_inf = pi_infinity(ladder)
    v_edges = ladder.v_edges
    ref = _jazz_reference(model, tables, pi_inf, ladder.w_edges, n_a_bins)
    ref_a = ref.sum(axis=1)

    sizes = _block_sizes(n_samples)
    payloads = [(model, lv, sz, child, t_cap, pad, h, eps_e, max_halvings,
                 n_a_bins, v_edges) for sz, child in zip(sizes, blocks)]
    parts = _map_ordered(_torus_block, payloads, workers)
    hist = sum(p[0] for p in parts)
    done = sum(p[1] for p in parts)
    folded = sum(p[2] for p in parts)
    n_failed = int(sum(p[3] for p in parts))
    if n_failed > max(1, n_samples // 1000):
        raise RecordsError(f"{n_failed} of {n_samples} scans failed to "
                           "integrate within the energy budget")
    a_edges = np.linspace(0.0, 1.0, n_a_bins + 1)
    n_v = len(v_edges) - 1
    fold_v = (lambda m: m.reshape(n_a_bins, n_v // DISTANCE_FOLD,
                                  DISTANCE_FOLD).sum(axis=2))
    ref_cv = fold_v(ref)
    out: list[TorusCrossingTable] = []
    for j, level in enumerate(lv):
        if done[j] == 0:
            raise RecordsError(f"no sample crossed level {level} by t={t_cap}")
        mass = hist[j] / hist[j].sum()
        a_counts = hist[j].sum(axis=1)
        expect = done[j] / n_a_bins
        chi2 = float(((a_counts - expect) ** 2 / expect).sum())
        out.append(TorusCrossingTable(
            level=float(level), a_edges=a_edges, v_edges=v_edges,
            empirical=mass, reference=ref,
            l1_joint=_l1(fold_v(mass), ref_cv),
            l1_a=_l1(mass.sum(axis=1), ref_a),
            chi2_p_uniform_a=float(stats.chi2.sf(chi2, n_a_bins - 1)),
            n_samples=int(done[j]), n_censored=int(n_samples - done[j] - n_failed),
            n_failed=n_failed))
    return out


# ---------------------------------------------------------------------------
# first-jump position flattening


@dataclass(frozen=True)
class FlatteningRow:
    k: float
    n_samples: int
    sup_dev: float             # sup over bins of |density - 1|
    envelope: float            # 2 * rate / |k|
    ratio: float
    chi2_p: float              # uniformity test, meaningful once dev ~ 0


@dataclass(frozen=True)
class FlatteningReport:
    rows: list[FlatteningRow]
    slope: float               # d log sup_dev / d log k
    n_bins: int
    x0: float

    def as_dict(self) -> dict:
        return {"slope": self.slope, "n_bins": self.n_bins, "x0": self.x0,
                "rows": [row.__dict__ for row in self.rows]}


def _time_profile(potential, energy: float, mirrored: bool,
                  n_quad: int) -> tuple[np.ndarray, np.ndarray]:
    """Traversal-time profile tau(x) of the frozen-energy flow over one
    period: exact quadrature of dx / speed, valid when the energy clears
    the potential everywhere (no turning points)."""
    xg = np.linspace(0.0, 1.0, n_quad)
    vx = potential.value(1.0 - xg if mirrored else xg)
    gap = 2.0 * (energy - vx)
    if np.min(gap) <= 0.0:
        raise ValueError("energy does not clear the potential; "
                         "no free-running orbit")
    inv = 1.0 / np.sqrt(gap)
    tau = np.concatenate(
        ([0.0], np.cumsum(0.5 * np.diff(xg) * (inv[1:] + inv[:-1]))))
    return xg, tau


def _first_jump_positions(model: ModelSpec, k: float, n: int,
                          rng: np.random.Generator, x0: float,
                          n_quad: int, chunk: int) -> np.ndarray:
    """Torus positions at the first alarm, chunk generator."""
    rate = model.kicks.rate
    pot = model.potential
    if pot.kind == "zero":
        while n > 0:
            m = min(n, chunk)
            t = rng.standard_exponential(m) / rate
            yield (x0 + k * t) % 1.0
            n -= m
        return
    mirrored = k < 0
    y0 = (1.0 - x0) % 1.0 if mirrored else x0
    energy = 0.5 * k * k + pot.value(x0)
    xg, tau = _time_profile(pot, energy, mirrored, n_quad)
    period = tau[-1]
    tau0 = float(np.interp(y0, xg, tau))
    while n > 0:
        m = min(n, chunk)
        t = rng.standard_exponential(m) / rate
        theta = (tau0 + t) % period
        y = np.interp(theta, tau, xg)
        yield (1.0 - y) % 1.0 if mirrored else y
        n -= m


def first_jump_flattening(model: ModelSpec, ks: Sequence[float],
                          n_samples: int | Sequence[int],
                          rng: np.random.Generator, *,
                          n_bins: int = 16, x0: float = 0.25,
                          n_quad: int = 8193,
                          chunk: int = 1 << 23) -> FlatteningReport:
    """Deviation of the first-alarm torus position from uniform, per |k|.

    The flow between alarms conserves energy, so the position at time t is
    computed from the exact traversal-time quadrature of the orbit (no
    integrator error at any k); sampling cost is an interpolation per draw.
    The deviation envelope 2R/|k| shrinks linearly in momentum and the
    fitted log-log slope across ks tracks that decay.
    """
    ks = list(ks)
    vbar = model.potential.vbar
    ns = list(n_samples) if not np.isscalar(n_samples) else [int(n_samples)] * len(ks)
    if len(ns) != len(ks):
        raise ValueError("one sample count per momentum required")
    rows: list[FlatteningRow] = []
    for k, n in zip(ks, ns):
        if abs(k) <= 2.0 * math.sqrt(vbar):
            raise ValueError(f"|k|={abs(k):g} too small; need > 2 sqrt(vbar)")
        counts = np.zeros(n_bins)
        for a in _first_jump_positions(model, float(k), int(n), rng, x0,
                                       n_quad, chunk):
            idx = np.minimum((a * n_bins).astype(np.int64), n_bins - 1)
            counts += np.bincount(idx, minlength=n_bins)
        density = counts / n * n_bins
        sup_dev = float(np.max(np.abs(density - 1.0)))
        expect = n / n_bins
        chi2 = float(((counts - expect) ** 2 / expect).sum())
        envelope = 2.0 * model.kicks.rate / abs(k)
        rows.append(FlatteningRow(
            k=float(k), n_samples=int(n), sup_dev=sup_dev, envelope=envelope,
            ratio=sup_dev / envelope,
            chi2_p=float(stats.chi2.sf(chi2, n_bins - 1))))
    if len(rows) >= 2:
        slope = float(np.polyfit(np.log10(np.abs(np.asarray(ks, float))),
                                 np.log10([r.sup_dev for r in rows]), 1)[0])
    else:
        slope = math.nan
    return FlatteningReport(rows=rows, slope=slope, n_bins=n_bins, x0=x0)


def first_jump_verlet(model: ModelSpec, k: float, n_samples: int,
                      rng: np.random.Generator, *, n_bins: int = 16,
                      x0: float = 0.25, h: float | None = None
                      ) -> tuple[np.ndarray, float]:
    """Same density by brute-force time stepping; returns (density, worst
    absolute energy drift). Cross-validates the quadrature sampler."""
    if h is None:
        h = min(1e-3, 0.05 / abs(k))  # resolve the potential along the orbit
    dts = rng.standard_exponential(n_samples) / model.kicks.rate
    code, amp, tab = pack_potential(model.potential)
    pos, worst = flatten_kernel(x0, k, dts, code, amp, tab, h)
    idx = np.minimum((pos * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(float)
    return counts / n_samples * n_bins, float(worst)


# ---------------------------------------------------------------------------
# CSV emission


def grid_csv(matrix: np.ndarray, meta: dict) -> str:
    """Matrix as CSV with a single '#' header line of key=value metadata."""
    head = "# " + " ".join(f"{k}={v!r}" if isinstance(v, str) else f"{k}={v}"
                           for k, v in meta.items())
    lines = [head]
    for row in np.atleast_2d(matrix):
        lines.append(",".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def _grid_meta(v_edges: np.ndarray, w_edges: np.ndarray, axes: str) -> dict:
    return {"axes": axes,
            "v_max": float(v_edges[-1]), "n_v": len(v_edges) - 1,
            "w_max": float(w_edges[-1]), "n_w": len(w_edges) - 1}


def ladder_to_csv(table: LadderTable) -> str:
    meta = {"kind": "ladder", **_grid_meta(table.v_edges, table.w_edges, "v,w"),
            "n_records": table.n_records, "n_censored": table.n_censored,
            "folded": table.folded, "mean_height": table.mean_height}
    return grid_csv(table.mass, meta)


def overshoot_to_csv(table: OvershootTable) -> str:
    meta = {"kind": "overshoot", "level": table.level,
            **_grid_meta(table.v_edges, table.w_edges, "v,w"),
            "n_samples": table.n_samples, "n_censored": table.n_censored,
            "folded": table.folded, "l1": table.l1, "l1_se": table.l1_se}
    return grid_csv(table.empirical, meta)


def torus_to_csv(table: TorusCrossingTable) -> str:
    meta = {"kind": "torus_crossing", "level": table.level,
            "n_a": len(table.a_edges) - 1,
            "v_max": float(table.v_edges[-1]), "n_v": len(table.v_edges) - 1,
            "axes": "a,v", "n_samples": table.n_samples,
            "n_censored": table.n_censored, "n_failed": table.n_failed,
            "l1_joint": table.l1_joint, "l1_a": table.l1_a}
    return grid_csv(table.empirical, meta)


def flattening_to_csv(report: FlatteningReport) -> str:
    lines = [f"# kind=flattening n_bins={report.n_bins} x0={report.x0} "
             f"slope={report.slope!r}",
             "k,n,sup_dev,envelope,ratio,chi2_p"]
    for r in report.rows:
        lines.append(f"{r.k!r},{r.n_samples},{r.sup_dev!r},{r.envelope!r},"
                     f"{r.ratio!r},{r.chi2_p!r}")
    return "\n".join(lines) + "\n"
