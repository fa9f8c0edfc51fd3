"""
Weights on H^n and the conditions imposed on them.

Every weight here is radial, w(x) = w(d(0, x)):

    power_volume  w_theta(x) = [1 + mu(B(0, d(0,x)))]^(-theta/q)
    radial_table  a RadialProfile (values >= 0)
    constant      c > 0

Checks return a ConditionReport. "bounded" means the empirical sup ratio
stabilised (< 5% growth) when the sampled parameter set was doubled;
"diverging" means an infinite ratio or monotone growth; anything else is
"inconclusive".
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from funcops import EngineError, RadialProfile, SetSpec, profile_ball_mass
from hypgeo import (
    BallSpec,
    Dimension,
    HPoint,
    axis_point,
    ball_volume,
    ball_volumes,
    distance_to_origin,
    minkowski_dot,
    origin_distance,
    sphere_area,
)
from integrate import (
    McConfig,
    McEstimate,
    NumericalError,
    mc_integrate_ball,
    quad_radial_ball,
)

log = logging.getLogger(__name__)

STABILITY_GROWTH = 0.05
GLOBAL_GROWTH_FACTOR = 1.5
EXP_TOL = 1e-12
OUTER_NODES = 8
SHELL_LATTICE = 0.5
TABLE_STEP = 0.02
BALL_EVERY = 5
SWEEP_MC_SAMPLES = 20_000

_GL_OUTER = np.polynomial.legendre.leggauss(OUTER_NODES)


class PreconditionError(ValueError):
    """A parameter lies outside the range where the condition is stated."""


# ---------------------------------------------------------------------------
# Exponents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentTriple:
    n: int
    alpha: float
    p: float
    q: float

    def __post_init__(self):
        if self.n < 2:
            raise PreconditionError(f"n must be >= 2, got {self.n!r}")
        if not 0 < self.alpha < self.n:
            raise PreconditionError(f"alpha must lie in (0, n), got {self.alpha!r}")
        if not 1 <= self.p < self.n / self.alpha:
            raise PreconditionError(f"p must lie in [1, n/alpha), got {self.p!r}")
        if abs(1.0 / self.q - (1.0 / self.p - self.alpha / self.n)) > EXP_TOL or self.q <= self.p:
            raise PreconditionError(f"q={self.q!r} does not satisfy 1/q = 1/p - alpha/n")

    @classmethod
    def from_p(cls, n: int, alpha: float, p: float) -> "ExponentTriple":
        if not 1 <= p < n / alpha:
            raise PreconditionError(f"p must lie in [1, n/alpha), got {p!r}")
        return cls(int(n), float(alpha), float(p), 1.0 / (1.0 / p - alpha / n))

    @property
    def p_prime(self) -> float:
        return math.inf if self.p == 1 else self.p / (self.p - 1.0)

    @property
    def dim(self) -> Dimension:
        return Dimension(self.n)

    @property
    def theta_weak_endpoint(self) -> float:
        """-q/p', the weight exponent of the weak-type example."""
        return -self.q / self.p_prime


def strong_delta_bound(triple: ExponentTriple) -> float:
    """min{p, q/p + p - p/(1 - alpha/n)}."""
    a = triple.alpha / triple.n
    return min(triple.p, triple.q / triple.p + triple.p - triple.p / (1.0 - a))


@dataclass(frozen=True)
class BetaGamma:
    beta: float
    gamma: float

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise PreconditionError(f"beta must lie in (0, 1), got {self.beta!r}")
        if self.gamma < self.beta - EXP_TOL:
            raise PreconditionError(f"gamma={self.gamma!r} must be >= beta={self.beta!r}")


def params_from_delta(triple: ExponentTriple, delta: float) -> BetaGamma:
    bound = strong_delta_bound(triple)
    if not delta < bound:
        raise PreconditionError(f"delta={delta!r} must be < {bound!r}")
    denom = triple.q / triple.p + triple.p - delta
    beta = triple.p / ((1.0 - triple.alpha / triple.n) * denom)
    gamma = triple.q / denom
    if not gamma < triple.p:
        raise PreconditionError(f"gamma={gamma!r} must be < p={triple.p!r}")
    return BetaGamma(beta, gamma)


def params_weak_only(triple: ExponentTriple, delta: float) -> BetaGamma:
    if not delta < 1:
        raise PreconditionError(f"delta={delta!r} must be < 1")
    value = triple.q / (triple.q + 1.0 - delta)
    return BetaGamma(value, value)


class Window(NamedTuple):
    """Half-open interval [lo, hi)."""

    lo: float
    hi: float

    def contains(self, x: float) -> bool:
        return self.lo <= x < self.hi

    @property
    def is_empty(self) -> bool:
        return not self.lo < self.hi


def theta_windows(triple: ExponentTriple) -> tuple[Window, Window]:
    """(strong window, weak window) of admissible theta for w_theta."""
    strong = Window(1.0 - triple.p, strong_delta_bound(triple))
    weak = Window(triple.theta_weak_endpoint + 0.0, 1.0)
    return strong, weak


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

WEIGHT_KINDS = ("power_volume", "radial_table", "constant")


@dataclass(frozen=True)
class WeightSpec:
    kind: str
    theta: float = 0.0
    q: float = 1.0
    table: RadialProfile | None = None
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind == "power_volume" and not self.q > 0:
            raise ValueError(f"power_volume needs q > 0, got {self.q!r}")
        if self.kind == "radial_table":
            if self.table is None:
                raise ValueError("radial_table needs a profile")
            if min(self.table.values) < 0:
                raise ValueError("weight values must be >= 0")
        if self.kind == "constant" and not self.c > 0:
            raise ValueError(f"constant weight must be positive, got {self.c!r}")

    @classmethod
    def power_volume(cls, theta: float, q: float) -> "WeightSpec":
        return cls("power_volume", theta=float(theta), q=float(q))

    @classmethod
    def radial_table(cls, profile: RadialProfile) -> "WeightSpec":
        return cls("radial_table", table=profile)

    @classmethod
    def constant(cls, c: float = 1.0) -> "WeightSpec":
        return cls("constant", c=float(c))

    @property
    def knots(self) -> tuple[float, ...]:
        return self.table.knots if self.kind == "radial_table" else ()

    @property
    def support_radius(self) -> float:
        return self.table.support_radius if self.kind == "radial_table" else math.inf

    def radial_values(self, dim: Dimension, t):
        t_arr = np.asarray(t, dtype=float)
        if self.kind == "power_volume":
            out = (1.0 + ball_volumes(dim, t_arr)) ** (-self.theta / self.q)
        elif self.kind == "radial_table":
            out = np.asarray(self.table(t_arr), dtype=float)
        else:
            out = np.full(t_arr.shape, self.c)
        if np.ndim(t) == 0:
            return float(out)
        return out

    def power(self, dim: Dimension, exponent: float) -> "WeightPower":
        return WeightPower(self, dim, float(exponent))

    def extrema(self, dim: Dimension, lo: float, hi: float) -> tuple[float, float]:
        """(inf, sup) of w over lo < d(0, x) < hi."""
        if self.kind == "constant":
            return self.c, self.c
        if self.kind == "power_volume":
            ends = self.radial_values(dim, np.array([lo, hi]))
            return float(ends.min()), float(ends.max())
        inner = [k for k in self.table.breakpoints + (self.table.support_radius,) if lo < k < hi]
        pts = np.unique(np.concatenate(([lo, hi], inner)))
        mids = 0.5 * (pts[:-1] + pts[1:])
        if self.table.interpolation == "linear":
            mids = np.concatenate((mids, pts))
        vals = self.table(mids)
        return float(np.min(vals)), float(np.max(vals))


@dataclass(frozen=True)
class WeightPower:
    """s -> w(s)^exponent, shaped for the radial quadrature helpers."""

    weight: WeightSpec
    dim: Dimension
    exponent: float

    def __call__(self, s):
        base = self.weight.radial_values(self.dim, s)
        with np.errstate(divide="ignore"):
            return np.power(base, self.exponent)

    @property
    def knots(self) -> tuple[float, ...]:
        return self.weight.knots

    @property
    def support_radius(self) -> float:
        return self.weight.support_radius if self.exponent > 0 else math.inf


def weight_eval(w: WeightSpec, x: HPoint) -> float:
    return w.radial_values(Dimension(x.n), distance_to_origin(x))


def weight_profile(dim: Dimension, w: WeightSpec, t) -> np.ndarray:
    return np.asarray(w.radial_values(dim, np.asarray(t, dtype=float)), dtype=float)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionReport:
    sup_ratio: float
    argmax_witness: tuple
    samples: int
    verdict: str
    coarse_ratio: float = math.nan
    stderr: float = 0.0
    details: dict = field(default_factory=dict, compare=False)


def stabilization_verdict(coarse: float, full: float, growth: float = STABILITY_GROWTH) -> str:
    if not math.isfinite(full):
        return "diverging"
    if full <= coarse * (1.0 + growth) or full == 0.0:
        return "bounded"
    return "inconclusive"


# ---------------------------------------------------------------------------
# A_{p,q} conditions
# ---------------------------------------------------------------------------


def local_ball_family(dim: Dimension, t_max: float = 8.0, t_count: int = 17,
                      radii=(0.25, 0.5, 1.0, 1.5, 2.0)) -> list[BallSpec]:
    """Balls B(x, r) with x on the e1 axis; every other center comes first."""
    ts = np.linspace(0.0, t_max, t_count)
    order = list(range(0, t_count, 2)) + list(range(1, t_count, 2))
    return [BallSpec(axis_point(dim, float(ts[i])), float(r)) for i in order for r in radii]


def _apq_product(dim: Dimension, w: WeightSpec, triple: ExponentTriple, t: float, r: float) -> float:
    """(avg w^q)(avg w^-p')^{q/p'} over B(x, r), d(0,x) = t; p = 1 uses ess sup w^-1."""
    if w.kind == "constant":
        return 1.0
    w_min, _ = w.extrema(dim, max(0.0, t - r), t + r)
    if w_min <= 0.0:
        return math.inf
    vol = ball_volume(dim, r)
    avg_q = quad_radial_ball(dim, t, r, w.power(dim, triple.q)) / vol
    if triple.p == 1:
        return avg_q * w_min ** (-triple.q)
    pp = triple.p_prime
    avg_dual = quad_radial_ball(dim, t, r, w.power(dim, -pp)) / vol
    return avg_q * avg_dual ** (triple.q / pp)


def apq_loc_sup(dim: Dimension, w: WeightSpec, triple: ExponentTriple,
                balls: list[BallSpec] | None = None) -> ConditionReport:
    """Local A_{p,q} (A_{1,q} when p = 1) over balls of radius <= 2.

    The first half of `balls` is the undoubled sample set.
    """
    balls = balls if balls is not None else local_ball_family(dim)
    if not balls:
        raise PreconditionError("apq_loc_sup needs at least one ball")
    for b in balls:
        if not 0 < b.radius <= 2:
            raise PreconditionError(f"local balls need radius in (0, 2], got {b.radius!r}")
    ratios = []
    for b in balls:
        t = distance_to_origin(b.center)
        ratios.append(_apq_product(dim, w, triple, t, b.radius))
        if not math.isfinite(ratios[-1]):
            log.info("w^-p' not integrable on B(t=%.4g, r=%.4g)", t, b.radius)
            break
    ratios = np.asarray(ratios)
    k = int(np.argmax(ratios))
    witness = (distance_to_origin(balls[k].center), balls[k].radius)
    half = max(1, len(balls) // 2)
    coarse = float(np.max(ratios[:half])) if len(ratios) >= half else float(ratios.max())
    verdict = stabilization_verdict(coarse, float(ratios[k]))
    return ConditionReport(float(ratios[k]), witness, len(ratios), verdict, coarse)


def apq_global_scan(dim: Dimension, w: WeightSpec, triple: ExponentTriple, R_list,
                    placement: str = "centered") -> list[tuple[float, float]]:
    """A_{p,q} products on large balls: B(0,R) or, through_origin, B(x_R, R) with d(0,x_R) = R."""
    if placement not in ("centered", "through_origin"):
        raise ValueError(f"unknown placement {placement!r}")
    R_list = [float(R) for R in R_list]
    if any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise PreconditionError("R_list must be increasing")
    rows = []
    for R in R_list:
        t = 0.0 if placement == "centered" else R
        rows.append((R, _apq_product(dim, w, triple, t, R)))
    log.debug("apq global scan %s: %s", placement, rows)
    return rows


def global_scan_verdict(rows: list[tuple[float, float]], factor: float = GLOBAL_GROWTH_FACTOR) -> str:
    values = np.array([v for _, v in rows])
    if values.size == 0:
        return "inconclusive"
    if not np.all(np.isfinite(values)):
        return "diverging"
    if values.size > 1 and np.all(np.diff(values) > 0) and values[-1] > factor * values[0]:
        return "diverging"
    if values.max() <= (1.0 + STABILITY_GROWTH) * values.min():
        return "bounded"
    return "inconclusive"


# ---------------------------------------------------------------------------
# Annulus conditions
# ---------------------------------------------------------------------------


def _annulus_estimate(dim, w, triple, exponent, delta, j, l, r, t, engine, mc) -> McEstimate:
    n1 = dim.n - 1
    rhs = math.exp(n1 * (r + l - j) / 2.0 * exponent + n1 * r * delta) \
        * w.radial_values(dim, t) ** triple.q
    if engine == "quad":
        lhs = McEstimate.exact(quad_radial_ball(dim, t, float(r), w.power(dim, triple.q),
                                                s_min=l - 1.0, s_max=float(l)))
    elif engine == "mc":
        if mc is None:
            raise EngineError("the mc engine needs an McConfig")
        wq = w.power(dim, triple.q)

        def _integrand(coords):
            d0 = origin_distance(coords)
            return np.where((d0 > l - 1) & (d0 <= l), wq(d0), 0.0)

        lhs = mc_integrate_ball(dim, axis_point(dim, t), float(r), _integrand, mc)
    else:
        raise EngineError(f"unknown engine {engine!r}")
    if rhs == 0.0:
        return McEstimate(math.inf if lhs.value > 0 else 0.0, 0.0, lhs.samples)
    return McEstimate(lhs.value / rhs, lhs.stderr / rhs, lhs.samples)


def _cj_exponent(triple: ExponentTriple, delta: float) -> float:
    bound = strong_delta_bound(triple)
    if not delta < bound:
        raise PreconditionError(f"delta={delta!r} must be < {bound!r}")
    return triple.p - delta


def _cj2_exponent(triple: ExponentTriple, delta: float) -> float:
    if not delta < 1:
        raise PreconditionError(f"delta={delta!r} must be < 1")
    return triple.q * (1.0 - triple.alpha / triple.n) - delta


def cond_cj_ratio(dim: Dimension, w: WeightSpec, triple: ExponentTriple, delta: float,
                  j: int, l: int, r: int, t: float, engine: str = "quad",
                  mc: McConfig | None = None) -> McEstimate:
    """w^q(C_l & B(x,r)) / [e^{(n-1)((r+l-j)/2)(p-delta)} e^{(n-1)r delta} w(x)^q], d(0,x) = t."""
    return _annulus_estimate(dim, w, triple, _cj_exponent(triple, delta), delta, j, l, r, t,
                             engine, mc)


def cond_cj2_ratio(dim: Dimension, w: WeightSpec, triple: ExponentTriple, delta: float,
                   j: int, l: int, r: int, t: float, engine: str = "quad",
                   mc: McConfig | None = None) -> McEstimate:
    """As cond_cj_ratio with the exponent q(1 - alpha/n) - delta."""
    return _annulus_estimate(dim, w, triple, _cj2_exponent(triple, delta), delta, j, l, r, t,
                             engine, mc)


def _cells(J: int, R: int, samples_per_cell: int):
    for j in range(1, J + 1):
        ts = [j - 1 + (k + 0.5) / samples_per_cell for k in range(samples_per_cell)]
        for r in range(1, R + 1):
            for l in range(max(1, j - r), min(J, j + r) + 1):
                for t in ts:
                    yield j, l, r, t


def _annulus_sweep(dim, w, triple, exponent, delta, J, R, samples_per_cell, stabilize,
                   name) -> ConditionReport:
    """One pass over the doubled grid; the (J, R) sub-grid gives the coarse sup."""
    if J < 1 or R < 1 or samples_per_cell < 1:
        raise PreconditionError("J, R and samples_per_cell must be >= 1")
    scale = 2 if stabilize else 1
    coarse, full = -math.inf, -math.inf
    coarse_witness = witness = None
    count = 0
    for cell in _cells(scale * J, scale * R, samples_per_cell):
        j, l, r, _ = cell
        value = _annulus_estimate(dim, w, triple, exponent, delta, *cell, "quad", None).value
        count += 1
        if value > full:
            full, witness = value, cell
        if j <= J and l <= J and r <= R and value > coarse:
            coarse, coarse_witness = value, cell
    if full <= coarse:
        witness = coarse_witness
    if stabilize:
        verdict = stabilization_verdict(coarse, full)
    else:
        verdict = "bounded" if math.isfinite(full) else "diverging"
    if verdict == "inconclusive":
        log.warning("%s sweep did not stabilise: %.6g -> %.6g (delta=%s)", name, coarse, full, delta)
    return ConditionReport(full, witness, count, verdict, coarse)


def cond_cj_check(dim: Dimension, w: WeightSpec, triple: ExponentTriple, delta: float,
                  J: int = 12, R: int = 12, samples_per_cell: int = 5,
                  stabilize: bool = True) -> ConditionReport:
    """Sup of cond_cj_ratio over j, l <= J, r <= R with |l - j| <= r."""
    exponent = _cj_exponent(triple, delta)
    return _annulus_sweep(dim, w, triple, exponent, delta, J, R, samples_per_cell, stabilize, "cj")


def cond_cj2_check(dim: Dimension, w: WeightSpec, triple: ExponentTriple, delta: float,
                   J: int = 12, R: int = 12, samples_per_cell: int = 5,
                   stabilize: bool = True) -> ConditionReport:
    exponent = _cj2_exponent(triple, delta)
    return _annulus_sweep(dim, w, triple, exponent, delta, J, R, samples_per_cell, stabilize, "cj2")


# ---------------------------------------------------------------------------
# Testing condition
# ---------------------------------------------------------------------------


def _positive_intervals(profile: RadialProfile) -> list[tuple[float, float]]:
    lo, hi, g_lo, g_hi = profile.pieces()
    return [(float(a), float(b)) for a, b, u, v in zip(lo, hi, g_lo, g_hi) if u > 0 or v > 0]


def _mass_in_shells(dim: Dimension, shells, s: float, r: float) -> float:
    """mu(E & B(y, r)) for E a union of shells (a, b], d(0,y) = s."""
    total = 0.0
    for a, b in shells:
        total += profile_ball_mass(dim, RadialProfile.indicator(b), s, r)
        if a > 0:
            total -= profile_ball_mass(dim, RadialProfile.indicator(a), s, r)
    return total


def _outer_nodes(intervals, lattice: float = SHELL_LATTICE):
    """Gauss-Legendre nodes on lattice-aligned panels covering the intervals."""
    x, wts = _GL_OUTER
    nodes, weights = [], []
    for a, b in intervals:
        cuts = np.unique(np.concatenate(([a, b], lattice * np.arange(math.ceil(a / lattice),
                                                                     math.floor(b / lattice) + 1))))
        cuts = cuts[(cuts >= a) & (cuts <= b)]
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            nodes.append(0.5 * (hi - lo) * (x + 1.0) + lo)
            weights.append(0.5 * (hi - lo) * wts)
    if not nodes:
        return np.empty(0), np.empty(0)
    return np.concatenate(nodes), np.concatenate(weights)


def _lhs_quad(dim, w, triple, E_shells, F_shells, r) -> float:
    s, ws = _outer_nodes(F_shells)
    if s.size == 0 or not E_shells:
        return 0.0
    scale = ball_volume(dim, r) ** (triple.alpha / dim.n - 1.0)
    mass = np.array([_mass_in_shells(dim, E_shells, float(si), r) for si in s])
    dens = w.power(dim, triple.q)(s) * sphere_area(dim, s)
    return float(scale * np.sum(ws * mass * dens))


def _mass_table(dim: Dimension, E: SetSpec, r: float, d_max: float) -> RadialProfile:
    """mu(E & B(y, r)) tabulated against d(0,y) (radial E) or d(z,y) (E = B(z, rho))."""
    grid = np.arange(0.0, d_max + TABLE_STEP, TABLE_STEP)
    if E.kind == "ball_at":
        shells = [(0.0, E.radius)]
    else:
        shells = _positive_intervals(E.profile())
    values = [_mass_in_shells(dim, shells, float(d), r) for d in grid]
    return RadialProfile(tuple(grid), tuple(values), "linear", math.inf)


def _lhs_mc(dim, w, triple, E: SetSpec, F: SetSpec, r: float, mc: McConfig) -> McEstimate:
    if mc is None:
        raise EngineError("the mc engine needs an McConfig")
    if E.profile() is None and E.kind != "ball_at":
        raise EngineError(f"testing condition cannot integrate against a non-radial {E.kind}")
    reach = F.outer_radius()
    if reach <= 0:
        return McEstimate.exact(0.0)
    scale = ball_volume(dim, r) ** (triple.alpha / dim.n - 1.0)
    chi_F = F.indicator(dim)
    wq = w.power(dim, triple.q)
    if E.kind == "ball_at" and E.profile() is None:
        z = axis_point(dim, E.offset).coords
        table = _mass_table(dim, E, r, reach + E.offset)

        def _distance(coords):
            return np.arccosh(np.maximum(minkowski_dot(coords, z), 1.0))
    else:
        table = _mass_table(dim, E, r, reach)
        _distance = origin_distance

    def _integrand(coords):
        return chi_F(coords) * wq(origin_distance(coords)) * scale * table(_distance(coords))

    return mc_integrate_ball(dim, axis_point(dim, 0.0), reach, _integrand, mc)


def testing_condition_check(dim: Dimension, w: WeightSpec, triple: ExponentTriple, bg: BetaGamma,
                            E: SetSpec, F: SetSpec, r: float, engine: str = "quad",
                            mc: McConfig | None = None) -> ConditionReport:
    """int_F A_{r,alpha}(chi_E) w^q dmu over e^{(n-1)r(1-alpha/n)(beta-1)} w^p(E)^{gamma/p} w^q(F)^{1-gamma/q}."""
    if not r >= 1:
        raise PreconditionError(f"testing radius must be >= 1, got {r!r}")
    witness = (float(r),)
    if E.is_empty or F.is_empty:
        return ConditionReport(0.0, witness, 0, "bounded", 0.0)
    if engine == "quad":
        E_prof, F_prof = E.profile(), F.profile()
        if E_prof is None or F_prof is None:
            raise EngineError("the quad engine needs radial E and F; use engine='mc'")
        lhs = McEstimate.exact(_lhs_quad(dim, w, triple, _positive_intervals(E_prof),
                                         _positive_intervals(F_prof), float(r)))
    elif engine == "mc":
        lhs = _lhs_mc(dim, w, triple, E, F, float(r), mc)
    else:
        raise EngineError(f"unknown engine {engine!r}")
    wp_E = E.weighted_measure(dim, w, triple.p)
    wq_F = F.weighted_measure(dim, w, triple.q)
    a = triple.alpha / dim.n
    rhs = math.exp((dim.n - 1) * r * (1.0 - a) * (bg.beta - 1.0)) \
        * wp_E ** (bg.gamma / triple.p) * wq_F ** (1.0 - bg.gamma / triple.q)
    if rhs == 0.0:
        if lhs.value > 0:
            raise NumericalError(f"testing condition: zero right side with lhs={lhs.value!r}")
        return ConditionReport(0.0, witness, lhs.samples, "bounded", 0.0)
    ratio = lhs.value / rhs
    verdict = "bounded" if math.isfinite(ratio) else "diverging"
    return ConditionReport(ratio, witness, lhs.samples, verdict, ratio, lhs.stderr / rhs,
                           {"lhs": lhs.value, "wp_E": wp_E, "wq_F": wq_F})


def _random_shells(rng: np.random.Generator, cells: int, lattice: float) -> SetSpec:
    k = int(rng.integers(1, 5))
    picks = np.sort(rng.choice(cells, size=min(k, cells), replace=False))
    return SetSpec.radial_union([(lattice * c, lattice * (c + 1)) for c in picks])


def _random_ball(rng: np.random.Generator, cells: int, lattice: float) -> SetSpec:
    """B(z, rho) on the e1 axis with lattice offset and radius, inside B(0, cells * lattice)."""
    offset = int(rng.integers(1, cells))
    radius = int(rng.integers(1, cells - offset + 1))
    return SetSpec.ball_at(lattice * offset, lattice * radius)


def shell_family(seed: int, count: int = 50, lattice: float = SHELL_LATTICE,
                 max_radius: float = 4.0, ball_every: int = BALL_EVERY) -> list[tuple[SetSpec, SetSpec]]:
    """Seeded (E, F) pairs inside B(0, max_radius); member 0 is (B(0,R), B(0,R)).

    Most members pair unions of at most four lattice shells. Every
    `ball_every`-th member takes an off-center ball for E instead, which the
    sweep integrates by Monte Carlo. Member i depends only on the seed and i,
    so a longer family extends a shorter one.
    """
    cells = int(round(max_radius / lattice))
    if cells < 1 or count < 1:
        raise PreconditionError("shell_family needs count >= 1 and max_radius >= lattice")
    if ball_every < 1:
        raise PreconditionError(f"ball_every must be >= 1, got {ball_every!r}")
    full = SetSpec.radial_union([(0.0, cells * lattice)])
    family = [(full, full)]
    rng = np.random.default_rng(seed)
    while len(family) < count:
        if cells >= 2 and len(family) % ball_every == ball_every - 1:
            E = _random_ball(rng, cells, lattice)
        else:
            E = _random_shells(rng, cells, lattice)
        F = _random_shells(rng, cells, lattice)
        family.append((E, F))
    return family


def _needs_mc(E: SetSpec, F: SetSpec) -> bool:
    return E.profile() is None or F.profile() is None


def testing_condition_sweep(dim: Dimension, w: WeightSpec, triple: ExponentTriple, bg: BetaGamma,
                            family: list[tuple[SetSpec, SetSpec]] | None = None,
                            r_values=range(1, 11), seed: int = 0, count: int = 50,
                            max_radius: float = 4.0, mc: McConfig | None = None) -> ConditionReport:
    """Sup of the testing ratio over a set family and radii.

    Radial pairs go through quadrature, off-center members through Monte
    Carlo with `mc` (seeded from `seed` when omitted). The first half of the
    family is the undoubled sample set.
    """
    family = family if family is not None else shell_family(seed, count, max_radius=max_radius)
    mc = mc if mc is not None else McConfig(seed, SWEEP_MC_SAMPLES)
    ratios = np.zeros((len(family), len(r_values)))
    for i, (E, F) in enumerate(family):
        engine = "mc" if _needs_mc(E, F) else "quad"
        for k, r in enumerate(r_values):
            ratios[i, k] = testing_condition_check(dim, w, triple, bg, E, F, float(r),
                                                   engine=engine, mc=mc).sup_ratio
    i, k = np.unravel_index(int(np.argmax(ratios)), ratios.shape)
    half = max(1, len(family) // 2)
    coarse = float(ratios[:half].max())
    full = float(ratios[i, k])
    verdict = stabilization_verdict(coarse, full)
    if verdict == "inconclusive":
        log.warning("testing condition sweep did not stabilise: %.6g -> %.6g", coarse, full)
    return ConditionReport(full, (int(i), float(r_values[k])), ratios.size, verdict, coarse)


# ---------------------------------------------------------------------------
# Combined sufficient conditions
# ---------------------------------------------------------------------------


class CorollaryReport(NamedTuple):
    apq_loc: ConditionReport
    condition: ConditionReport
    params: BetaGamma
    verdict: str


def corollary_check(dim: Dimension, w: WeightSpec, triple: ExponentTriple, kind: str = "strong",
                    delta: float | None = None, J: int = 12, R: int = 12,
                    stabilize: bool = True) -> CorollaryReport:
    """Local A_{p,q} plus the strong (cj) or weak (cj2) annulus condition."""
    if kind not in ("strong", "weak"):
        raise ValueError(f"kind must be 'strong' or 'weak', got {kind!r}")
    if delta is None:
        delta = w.theta if w.kind == "power_volume" else 0.0
    loc = apq_loc_sup(dim, w, triple)
    if kind == "strong":
        cond = cond_cj_check(dim, w, triple, delta, J, R, stabilize=stabilize)
        params = params_from_delta(triple, delta)
    else:
        cond = cond_cj2_check(dim, w, triple, delta, J, R, stabilize=stabilize)
        params = params_weak_only(triple, delta)
    verdicts = {loc.verdict, cond.verdict}
    if "diverging" in verdicts:
        verdict = "diverging"
    elif verdicts == {"bounded"}:
        verdict = "bounded"
    else:
        verdict = "inconclusive"
    return CorollaryReport(loc, cond, params, verdict)
