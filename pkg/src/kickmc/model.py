"""Model layer: periodic potential, spatially modulated kick field, derived
constants, and numeric validation of the standing assumptions.

The physical setup is a particle on the line with Hamiltonian
H(x, k) = k^2/2 + V(x), V periodic with period 1, subjected to a Poisson
alarm clock of rate R. At an alarm at torus position a, a coin with success
probability kappa(a) decides whether the momentum receives a random kick w
drawn from the symmetric density P_a. The local jump rate density is

    j_a(v) = R * kappa(a) * P_a(v)

and the diffusion constant of the momentum's scaling limit is

    sigma = int_0^1 da int dv j_a(v) v^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

TWO_PI = 2.0 * math.pi

# Nearly all validation quadratures are over one torus period; smooth periodic
# integrands make the trapezoid rule spectrally accurate, so a fixed dense
# grid is enough everywhere.
_A_GRID = 1024


class InvalidModelError(ValueError):
    """Raised when a model violates a hard precondition (bad coin range,
    non-normalizable or degenerate jump density)."""


# ---------------------------------------------------------------------------
# spatial modulations


@dataclass(frozen=True)
class Modulation:
    """Periodic scalar field on the torus, f(a) with period 1.

    kinds:
      constant: f(a) = base
      cosine:   f(a) = base + amp * cos(2 pi a)
      twostep:  f(a) = base on [0, 1/2), amp on [1/2, 1)
    All three are symmetric under a -> -a (mod 1), i.e. reflection about 0.
    """

    kind: str = "constant"
    base: float = 1.0
    amp: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "cosine", "twostep"):
            raise InvalidModelError(f"unknown modulation kind {self.kind!r}")

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        if self.kind == "constant":
            return np.broadcast_to(np.float64(self.base), a.shape).copy()
        if self.kind == "cosine":
            return self.base + self.amp * np.cos(TWO_PI * a)
        frac = a - np.floor(a)
        return np.where(frac < 0.5, self.base, self.amp)

    def bounds(self) -> tuple[float, float]:
        """Exact (min, max) over the torus."""
        if self.kind == "constant":
            return (self.base, self.base)
        if self.kind == "cosine":
            return (self.base - abs(self.amp), self.base + abs(self.amp))
        return (min(self.base, self.amp), max(self.base, self.amp))

    def mean(self) -> float:
        """Exact torus average."""
        if self.kind == "twostep":
            return 0.5 * (self.base + self.amp)
        return self.base


def constant(value: float) -> Modulation:
    return Modulation("constant", float(value), 0.0)


# ---------------------------------------------------------------------------
# potential


@dataclass(frozen=True)
class Potential:
    """Periodic potential V with period 1 and 0 <= V <= vbar.

    kinds:
      zero:      V = 0
      cosine:    V(x) = amplitude * (1 + cos(2 pi x)) / 2, range [0, amplitude]
      tabulated: piecewise-linear interpolation of `table` on a uniform grid
                 over [0, 1); the force is the (piecewise-constant) exact
                 derivative of that interpolant, so energy bookkeeping is
                 consistent with the evaluated V.
    reflection_point r, when set, declares V(2r - x) = V(x).
    """

    kind: str = "zero"
    amplitude: float = 0.0
    table: tuple[float, ...] | None = None
    reflection_point: float | None = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "cosine", "tabulated"):
            raise InvalidModelError(f"unknown potential kind {self.kind!r}")
        if self.kind == "cosine" and not (0.0 <= self.amplitude < math.inf):
            raise InvalidModelError("cosine amplitude must be finite and >= 0")
        if self.kind == "tabulated":
            if self.table is None or len(self.table) < 8:
                raise InvalidModelError("tabulated potential needs >= 8 points")
            tab = np.asarray(self.table, dtype=float)
            if not np.all(np.isfinite(tab)) or tab.min() < 0.0:
                raise InvalidModelError("tabulated potential must be finite and >= 0")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "cosine":
            return 0.5 * self.amplitude * (1.0 + np.cos(TWO_PI * x))
        tab = np.asarray(self.table, dtype=float)
        n = len(tab)
        pos = (x - np.floor(x)) * n
        i0 = np.minimum(pos.astype(np.int64), n - 1)
        frac = pos - i0
        i1 = (i0 + 1) % n
        return tab[i0] * (1.0 - frac) + tab[i1] * frac

    def force(self, x):
        """-dV/dx, the force entering the Hamiltonian flow."""
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "cosine":
            return 0.5 * self.amplitude * TWO_PI * np.sin(TWO_PI * x)
        tab = np.asarray(self.table, dtype=float)
        n = len(tab)
        pos = (x - np.floor(x)) * n
        i0 = np.minimum(pos.astype(np.int64), n - 1)
        i1 = (i0 + 1) % n
        return -(tab[i1] - tab[i0]) * n

    @property
    def vbar(self) -> float:
        """sup V; for the analytic kinds exact, for tables the max knot."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "cosine":
            return float(self.amplitude)
        return float(max(self.table))

    @property
    def dv_bound(self) -> float:
        """sup |dV/dx| (bounded-derivative assumption)."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "cosine":
            return 0.5 * self.amplitude * TWO_PI
        tab = np.asarray(self.table, dtype=float)
        n = len(tab)
        return float(np.max(np.abs(np.diff(np.append(tab, tab[0])) * n)))


# ---------------------------------------------------------------------------
# jump families


@dataclass(frozen=True)
class JumpFamily:
    """Symmetric kick density P_a(v), one of:

      laplace:       P_a(v) = exp(-|v| / b(a)) / (2 b(a)), b = scale modulation
      gauss_mixture: P_a(v) = sum_i weights[i] * N(v; 0, (sds[i] * s(a))^2)
      tabulated:     base table q on a uniform symmetric v-grid, scaled as
                     P_a(v) = q(v / s(a)) / s(a); q is symmetrized and
                     renormalized at construction.
    """

    kind: str = "laplace"
    scale: Modulation = field(default_factory=lambda: constant(1.0))
    weights: tuple[float, ...] | None = None
    sds: tuple[float, ...] | None = None
    v_grid: tuple[float, ...] | None = None
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("laplace", "gauss_mixture", "tabulated"):
            raise InvalidModelError(f"unknown jump family {self.kind!r}")
        if self.kind == "gauss_mixture":
            if not self.weights or not self.sds or len(self.weights) != len(self.sds):
                raise InvalidModelError("gauss_mixture needs matching weights and sds")
            w = np.asarray(self.weights, dtype=float)
            if abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
                raise InvalidModelError("mixture weights must be >= 0 and sum to 1")
            if np.any(np.asarray(self.sds) <= 0):
                raise InvalidModelError("mixture sds must be > 0")
        if self.kind == "tabulated":
            if self.v_grid is None or self.values is None:
                raise InvalidModelError("tabulated family needs v_grid and values")
            v = np.asarray(self.v_grid, dtype=float)
            q = np.asarray(self.values, dtype=float)
            if len(v) != len(q) or len(v) < 9:
                raise InvalidModelError("tabulated family needs >= 9 matching points")
            if abs(v[0] + v[-1]) > 1e-12 or np.any(np.diff(v) <= 0):
                raise InvalidModelError("v_grid must be symmetric and increasing")
            if np.any(q < 0) or not np.all(np.isfinite(q)):
                raise InvalidModelError("tabulated density must be finite and >= 0")
            # symmetrize and renormalize once; downstream code may assume both
            q = 0.5 * (q + q[::-1])
            z = np.trapezoid(q, v)
            if z <= 0:
                raise InvalidModelError("tabulated density is not normalizable")
            object.__setattr__(self, "values", tuple(q / z))

    def _base_density(self, u):
        """Density at unit scale, q(u)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "laplace":
            return 0.5 * np.exp(-np.abs(u))
        if self.kind == "gauss_mixture":
            out = np.zeros_like(u)
            for w, sd in zip(self.weights, self.sds):
                out += w * np.exp(-0.5 * (u / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
            return out
        return np.interp(u, np.asarray(self.v_grid), np.asarray(self.values),
                         left=0.0, right=0.0)

    def density(self, a, v):
        """P_a(v); broadcasts over v for scalar a."""
        s = float(self.scale(a))
        if s <= 0:
            raise InvalidModelError("jump scale must be > 0")
        if self.kind == "laplace":
            return 0.5 * np.exp(-np.abs(np.asarray(v, dtype=float)) / s) / s
        return self._base_density(np.asarray(v, dtype=float) / s) / s

    def _base_moment(self, power: int) -> float:
        """E|u|^power at unit scale."""
        if self.kind == "laplace":
            return float(math.factorial(power))
        if self.kind == "gauss_mixture":
            w = np.asarray(self.weights)
            sd = np.asarray(self.sds)
            if power == 2:
                return float(np.sum(w * sd**2))
            if power == 4:
                return float(np.sum(w * 3.0 * sd**4))
        v = np.asarray(self.v_grid, dtype=float)
        q = np.asarray(self.values, dtype=float)
        return float(np.trapezoid(q * np.abs(v) ** power, v))

    def second_moment(self, a):
        return self._base_moment(2) * np.asarray(self.scale(a), dtype=float) ** 2

    def fourth_moment(self, a):
        return self._base_moment(4) * np.asarray(self.scale(a), dtype=float) ** 4

    def quantile(self, a, u):
        """Inverse CDF of P_a, used to build the sampling tables."""
        s = float(self.scale(a))
        u = np.asarray(u, dtype=float)
        if self.kind == "laplace":
            # two-sided exponential quantile, exact
            p = 2.0 * u - 1.0
            return -s * np.sign(p) * np.log1p(-np.abs(p))
        # numeric inversion of the base CDF on a dense grid
        if self.kind == "gauss_mixture":
            hi = 10.0 * max(self.sds)
            grid = np.linspace(-hi, hi, 200001)
        else:
            grid = np.asarray(self.v_grid, dtype=float)
        pdf = self._base_density(grid)
        cdf = np.concatenate(([0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5 * np.diff(grid))))
        cdf /= cdf[-1]
        # make the CDF strictly increasing for interpolation
        keep = np.concatenate(([True], np.diff(cdf) > 0))
        return s * np.interp(u, cdf[keep], grid[keep])


# ---------------------------------------------------------------------------
# kick field and model


@dataclass(frozen=True)
class KickField:
    """Poisson alarm rate R, coin kappa(a), and kick density family P_a."""

    rate: float = 1.0
    coin: Modulation = field(default_factory=lambda: constant(1.0))
    jump: JumpFamily = field(default_factory=JumpFamily)

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise InvalidModelError("alarm rate must be finite and > 0")

    def rate_density_moment(self, a, power: int = 2):
        """int j_a(v) v^power dv with j_a = R kappa(a) P_a(v)."""
        mom = {2: self.jump.second_moment, 4: self.jump.fourth_moment}[power]
        return self.rate * np.asarray(self.coin(a), dtype=float) * mom(a)


@dataclass(frozen=True)
class ModelSpec:
    """A potential plus a kick field, with cached derived constants.

    derived keys: vbar, r1, r2, nu, rho, sigma. r1/r2 are the extremes of
    int j_a v^2 over the torus, nu = inf kappa, rho = sup fourth moment.
    """

    potential: Potential
    kicks: KickField
    derived: dict[str, float] = field(default_factory=dict)

    @classmethod
    def build(cls, potential: Potential, kicks: KickField) -> "ModelSpec":
        m = cls(potential=potential, kicks=kicks, derived={})
        m.derived.update(m.compute_derived())
        return m

    def compute_derived(self) -> dict[str, float]:
        a = np.arange(_A_GRID) / _A_GRID
        m2 = self.kicks.rate_density_moment(a, 2)
        m4 = self.kicks.jump.fourth_moment(a)
        lo, hi = _moment_extremes(self.kicks)
        return {
            "vbar": self.potential.vbar,
            "r1": lo,
            "r2": hi,
            "nu": self.kicks.coin.bounds()[0],
            "rho": float(np.max(m4)),
            "sigma": sigma(self),
            "_grid_r1": float(np.min(m2)),
            "_grid_r2": float(np.max(m2)),
        }

    @property
    def sigma(self) -> float:
        return self.derived["sigma"]


def _moment_extremes(kicks: KickField) -> tuple[float, float]:
    """Extremes of int j_a v^2 dv over the torus.

    For the built-in modulations the product kappa(a) * scale(a)^2 is either
    monotone in cos(2 pi a) or piecewise constant, so a dense grid plus the
    exact modulation endpoints is reliable.
    """
    a = np.linspace(0.0, 1.0, 4 * _A_GRID, endpoint=False)
    vals = kicks.rate_density_moment(a, 2)
    return float(np.min(vals)), float(np.max(vals))


def sigma(model: ModelSpec) -> float:
    """Diffusion constant sigma = int_0^1 da int dv j_a(v) v^2.

    Adaptive quadrature over the torus; the v-integral is the analytic (or
    tabulated) second moment of P_a.
    """
    m2 = model.kicks.jump._base_moment(2)
    if not math.isfinite(m2) or m2 <= 0:
        raise InvalidModelError("jump density has degenerate second moment")

    def integrand(a):
        return float(model.kicks.rate_density_moment(a, 2))

    pts = (0.5,) if model.kicks.jump.scale.kind == "twostep" or \
        model.kicks.coin.kind == "twostep" else ()
    val, err = integrate.quad(integrand, 0.0, 1.0, points=pts or None,
                              epsabs=0.0, epsrel=1e-10, limit=200)
    if not math.isfinite(val) or val <= 0:
        raise InvalidModelError("sigma quadrature degenerate (is r1 > 0?)")
    return float(val)


@dataclass(frozen=True)
class AveragedKick:
    """Spatially averaged kick law: density p on v_grid, effective rate."""

    v_grid: np.ndarray
    density: np.ndarray
    rate: float  # R * int kappa

    def normalization(self) -> float:
        return float(integrate.simpson(self.density, x=self.v_grid))

    def second_moment(self) -> float:
        return float(integrate.simpson(self.density * self.v_grid**2, x=self.v_grid))

    def fourth_moment(self) -> float:
        return float(integrate.simpson(self.density * self.v_grid**4, x=self.v_grid))


def averaged_kick(model: ModelSpec, v_max: float | None = None,
                  n_v: int = 4097) -> AveragedKick:
    """Torus average of the kick noise.

    Returns ptilde(v) = int kappa(a) P_a(v) da / int kappa da on a symmetric
    v-grid, and the averaged rate Rtilde = R * int kappa da.
    """
    kicks = model.kicks
    if v_max is None:
        hi = kicks.jump.scale.bounds()[1]
        base_span = {"laplace": 40.0, "gauss_mixture": 12.0, "tabulated": 1.0}[kicks.jump.kind]
        if kicks.jump.kind == "tabulated":
            base_span = float(np.max(np.abs(kicks.jump.v_grid)))
        v_max = base_span * hi
    v = np.linspace(-v_max, v_max, n_v)
    a = (np.arange(_A_GRID) + 0.5) / _A_GRID
    kap = kicks.coin(a)
    dens = np.zeros_like(v)
    for ai, ki in zip(a, kap):
        dens += ki * kicks.jump.density(ai, v)
    kbar = kicks.coin.mean()
    dens /= kbar * _A_GRID
    z = float(integrate.simpson(dens, x=v))
    if abs(z - 1.0) > 1e-4:
        raise InvalidModelError(f"averaged density normalizes to {z}, grid too narrow")
    # renormalize so the emitted table integrates to 1 under its own rule
    return AveragedKick(v_grid=v, density=dens / z, rate=kicks.rate * kbar)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    """Pure-data record of the assumption checks.

    flags: pass/fail per check; constants: measured values; worst: largest
    violation magnitudes; advisories: non-fatal notes (e.g. light tails).
    """

    flags: dict[str, bool] = field(default_factory=dict)
    constants: dict[str, float] = field(default_factory=dict)
    worst: dict[str, float] = field(default_factory=dict)
    advisories: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.flags.values())

    def as_dict(self) -> dict:
        return {
            "flags": dict(self.flags),
            "constants": dict(self.constants),
            "worst": dict(self.worst),
            "advisories": list(self.advisories),
            "ok": self.ok,
        }


def validate(model: ModelSpec, grid_resolution: int = 256) -> ValidationReport:
    """Numeric check of the standing assumptions.

    Checks, on an a-grid of the stated resolution:
      second_moment_bounds: 0 < r1 <= int j_a v^2 <= r2 (finite)
      fourth_moment_bound:  int P_a v^4 <= rho finite
      kick_symmetry:        P_a(v) = P_a(-v)
      potential_bounded:    0 <= V <= vbar with bounded derivative
      tail_exponential:     log-density slope beyond the 99th percentile is
                            <= -eta for a fitted eta > 0
      derivative_ratio:     |d log P_a / dv| bounded (constant mu, report only)
      reflection:           declared reflection maps V and j into themselves

    Raises InvalidModelError if the coin leaves (0, 1] or the density fails
    to normalize; everything else lands in the report flags.
    """
    if grid_resolution < 64:
        raise ValueError("grid_resolution must be >= 64")
    r = ValidationReport()
    kicks = model.kicks
    pot = model.potential
    a_grid = (np.arange(grid_resolution) + 0.5) / grid_resolution

    coin_lo, coin_hi = kicks.coin.bounds()
    if coin_lo <= 0.0 or coin_hi > 1.0 + 1e-15:
        raise InvalidModelError(
            f"coin range [{coin_lo}, {coin_hi}] leaves (0, 1]")

    s_lo = kicks.jump.scale.bounds()[0]
    if s_lo <= 0:
        raise InvalidModelError("jump scale modulation reaches <= 0")

    # normalization on a wide grid, per torus point
    span = {"laplace": 45.0, "gauss_mixture": 12.0}.get(kicks.jump.kind)
    if span is None:
        span = float(np.max(np.abs(kicks.jump.v_grid)))
    worst_norm = 0.0
    v_probe = np.linspace(-span * kicks.jump.scale.bounds()[1], span * kicks.jump.scale.bounds()[1], 16385)
    for a in a_grid[:: max(1, grid_resolution // 32)]:
        z = float(integrate.simpson(kicks.jump.density(a, v_probe), x=v_probe))
        worst_norm = max(worst_norm, abs(z - 1.0))
    if worst_norm > 1e-4:
        raise InvalidModelError(f"kick density off normalization by {worst_norm:.2e}")
    r.worst["normalization"] = worst_norm

    # assumption: second moment bounds, strictly positive below
    m2 = kicks.rate_density_moment(a_grid, 2)
    r1g, r2g = float(np.min(m2)), float(np.max(m2))
    r.constants["r1"] = r1g
    r.constants["r2"] = r2g
    r.flags["second_moment_bounds"] = bool(r1g > 0 and np.isfinite(r2g))

    # assumption: fourth moment bound
    m4 = kicks.jump.fourth_moment(a_grid)
    r.constants["rho"] = float(np.max(m4))
    r.flags["fourth_moment_bound"] = bool(np.all(np.isfinite(m4)))

    # coin lower bound
    r.constants["nu"] = coin_lo
    r.flags["coin_positive"] = True

    # assumption: kick symmetry in v
    v_sym = np.linspace(0.125, 6.0 * kicks.jump.scale.bounds()[1], 257)
    worst_sym = 0.0
    for a in a_grid[:: max(1, grid_resolution // 16)]:
        d = kicks.jump.density(a, v_sym) - kicks.jump.density(a, -v_sym)
        worst_sym = max(worst_sym, float(np.max(np.abs(d))))
    r.worst["kick_symmetry"] = worst_sym
    r.flags["kick_symmetry"] = worst_sym <= 1e-12

    # assumption: bounded potential with bounded derivative
    x = np.linspace(0.0, 1.0, 2049)
    vx = pot.value(x)
    r.constants["vbar"] = pot.vbar
    r.constants["dv_bound"] = pot.dv_bound
    r.flags["potential_bounded"] = bool(
        np.all(vx >= -1e-15) and np.all(vx <= pot.vbar + 1e-12)
        and math.isfinite(pot.dv_bound))
    per = float(np.max(np.abs(pot.value(x + 1.0) - vx)))
    r.worst["periodicity"] = per
    r.flags["potential_periodic"] = per <= 1e-12

    # assumption: exponential tail bound (fitted decay rate)
    eta, cc = _tail_fit(kicks.jump)
    r.constants["eta"] = eta
    r.constants["C"] = cc
    r.flags["tail_exponential"] = eta > 0
    if kicks.jump.kind == "gauss_mixture":
        r.advisories.append(
            "gauss_mixture tails decay faster than exponential; the "
            "exponential-tail comparison constant degrades with range")

    # derivative-ratio constant, report only
    r.constants["mu"] = _derivative_ratio(kicks.jump)

    # assumption: declared reflection symmetry
    if pot.reflection_point is not None:
        rp = pot.reflection_point
        worst_refl = float(np.max(np.abs(pot.value(2 * rp - x) - vx)))
        a_refl = np.linspace(0.0, 1.0, 257)
        worst_refl = max(worst_refl, float(np.max(np.abs(
            kicks.coin(2 * rp - a_refl) - kicks.coin(a_refl)))))
        v_r = np.linspace(-5.0, 5.0, 33)
        for a in a_refl[::16]:
            d = kicks.jump.density((2 * rp - a) % 1.0, v_r) - kicks.jump.density(a, v_r)
            worst_refl = max(worst_refl, float(np.max(np.abs(d))))
        r.worst["reflection"] = worst_refl
        r.flags["reflection"] = worst_refl <= 1e-12

    return r


def _tail_fit(jump: JumpFamily) -> tuple[float, float]:
    """Fit log P(v) ~ log C - eta v beyond the 99th percentile at unit scale.

    Returns (eta, C); eta > 0 certifies an at-least-exponential tail decay.
    """
    q99 = float(jump.quantile(0.0, np.asarray([0.995]))[0] / jump.scale(0.0))
    hi = q99 * 4.0 if jump.kind != "tabulated" else float(np.max(jump.v_grid))
    if hi <= q99:
        q99, hi = 0.5 * hi, hi
    v = np.linspace(q99, hi, 257)
    p = jump._base_density(v)
    good = p > 0
    if good.sum() < 8:
        return (0.0, 0.0)
    slope, intercept = np.polyfit(v[good], np.log(p[good]), 1)
    return (float(-slope), float(math.exp(intercept)))


def _derivative_ratio(jump: JumpFamily) -> float:
    """sup |P'(v)/P(v)| over the bulk of the support, by finite differences."""
    q999 = float(jump.quantile(0.0, np.asarray([0.9995]))[0] / jump.scale(0.0))
    v = np.linspace(-q999, q999, 4097)
    p = jump._base_density(v)
    good = p > 1e-300
    logp = np.log(p[good])
    dv = v[1] - v[0]
    return float(np.max(np.abs(np.gradient(logp, dv))))


# ---------------------------------------------------------------------------
# built-in fixtures


def homogeneous_model(rate: float = 1.0, kappa: float = 0.5,
                      b: float = 1.0) -> ModelSpec:
    """Zero potential, constant coin, constant Laplace scale. sigma = R*kappa*2b^2."""
    return ModelSpec.build(
        Potential(kind="zero"),
        KickField(rate=rate, coin=constant(kappa),
                  jump=JumpFamily(kind="laplace", scale=constant(b))))


def standard_cosine_model(amplitude: float = 0.5) -> ModelSpec:
    """The reflection-symmetric inhomogeneous fixture used across the
    statistical suites: cosine potential, modulated coin and kick scale."""
    return ModelSpec.build(
        Potential(kind="cosine", amplitude=amplitude, reflection_point=0.0),
        KickField(rate=1.0,
                  coin=Modulation("cosine", 0.5, 0.1),
                  jump=JumpFamily(kind="laplace",
                                  scale=Modulation("cosine", 1.0, 0.25))))
