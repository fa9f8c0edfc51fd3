"""
Weighted norms on truncated domains B(0, R), Riesz-quotient scans and the
distributional diagnostic for A_{r,alpha}(A_1 f).

Radial inputs go through one-dimensional quadrature against
Omega_n sinh^{n-1}(s) ds; anything else goes through Monte Carlo on B(0, R).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from funcops import (
    EngineError,
    RadialProfile,
    RadiusGrid,
    ScalarField,
    average_profile,
    maximal_profile,
)
from hypgeo import Dimension, DomainError, ball_volume, origin, origin_distance
from integrate import (
    McConfig,
    mc_integrate_ball,
    radial_integral,
    radial_integral_many,
    sample_ball_array,
)
from weights import BetaGamma, ExponentTriple, WeightSpec

log = logging.getLogger(__name__)

LAMBDA_SPAN = (1e-6, 1e2)
LAMBDA_POINTS = 200
PROFILE_STEP = 0.05
STRONG_GROWTH = 1.3
STRONG_STABLE = 1.2
WEAK_STABLE = 2.0


@dataclass(frozen=True)
class TruncatedDomain:
    R: float

    def __post_init__(self):
        if not self.R > 0:
            raise DomainError(f"domain radius must be positive, got {self.R!r}")
        object.__setattr__(self, "R", float(self.R))


class NormResult(NamedTuple):
    value: float
    R: float
    method: str
    stderr: float = 0.0


@dataclass(frozen=True)
class _WeightedPower:
    """s -> |g(s)|^e w(s)^e."""

    profile: RadialProfile
    weight: WeightSpec
    dim: Dimension
    exponent: float

    def __call__(self, s):
        return np.abs(self.profile(s)) ** self.exponent * self.weight.power(self.dim, self.exponent)(s)

    @property
    def knots(self) -> tuple[float, ...]:
        return tuple(sorted(set(self.profile.knots) | set(self.weight.knots)))


def _check_exponent(e: float) -> None:
    if not e >= 1:
        raise DomainError(f"norm exponent must be >= 1, got {e!r}")


# ---------------------------------------------------------------------------
# Strong and weak norms
# ---------------------------------------------------------------------------


def lp_weighted_norm(dim: Dimension, g: ScalarField, w: WeightSpec, p_exp: float,
                     dom: TruncatedDomain, engine: str = "quad",
                     mc: McConfig | None = None) -> NormResult:
    """(int_{B(0,R)} |g|^p w^p dmu)^{1/p}."""
    _check_exponent(p_exp)
    if engine == "quad":
        if g.radial_hint is None:
            raise EngineError("the quad engine needs a radial g; use engine='mc'")
        upper = min(dom.R, g.radial_hint.support_radius)
        total = radial_integral(dim, _WeightedPower(g.radial_hint, w, dim, p_exp), 0.0, upper)
        return NormResult(total ** (1.0 / p_exp), dom.R, "quad")
    if engine != "mc":
        raise EngineError(f"unknown engine {engine!r}")
    if mc is None:
        raise EngineError("the mc engine needs an McConfig")
    wp = w.power(dim, p_exp)

    def _integrand(coords):
        return np.abs(g(coords)) ** p_exp * wp(origin_distance(coords))

    est = mc_integrate_ball(dim, origin(dim), dom.R, _integrand, mc)
    value = max(est.value, 0.0) ** (1.0 / p_exp)
    stderr = value / (p_exp * est.value) * est.stderr if est.value > 0 else 0.0
    return NormResult(value, dom.R, "mc", stderr)


def _split_at(lo: np.ndarray, hi: np.ndarray, knots) -> tuple[np.ndarray, np.ndarray]:
    if not knots:
        return lo, hi
    out_lo, out_hi = [], []
    for a, b in zip(lo, hi):
        cuts = [a] + [k for k in knots if a < k < b] + [b]
        out_lo.extend(cuts[:-1])
        out_hi.extend(cuts[1:])
    return np.asarray(out_lo), np.asarray(out_hi)


def level_set_measure(dim: Dimension, g: RadialProfile, w: WeightSpec, power: float, R: float,
                      lam: float) -> float:
    """w^power-measure of {x in B(0,R) : |g(d(0,x))| >= lam}.

    Exact on step pieces; on linear pieces the crossing point is solved for.
    """
    g = g.absolute()
    lo, hi, u, v = g.pieces()
    hi = np.minimum(hi, R)
    keep = hi > lo
    lo, hi, u, v = lo[keep], hi[keep], u[keep], v[keep]
    if lo.size == 0:
        return 0.0
    if g.interpolation == "linear":
        v = np.asarray(g(hi), dtype=float)
    both = (u >= lam) & (v >= lam)
    one = (u >= lam) ^ (v >= lam)
    a, b = lo[both], hi[both]
    if np.any(one):
        lo1, hi1, u1, v1 = lo[one], hi[one], u[one], v[one]
        cross = lo1 + (lam - u1) / (v1 - u1) * (hi1 - lo1)
        a = np.concatenate((a, np.where(u1 >= lam, lo1, cross)))
        b = np.concatenate((b, np.where(u1 >= lam, cross, hi1)))
    a, b = _split_at(a, b, w.knots)
    return radial_integral_many(dim, w.power(dim, power), a, b)


def default_lambda_grid(g: RadialProfile) -> np.ndarray:
    """Geometric grid over [1e-6, 1e2] * peak, plus the values a step profile attains."""
    peak = g.peak
    if peak == 0:
        return np.empty(0)
    grid = np.geomspace(*LAMBDA_SPAN, LAMBDA_POINTS) * peak
    if g.interpolation == "step":
        extra = [abs(v) for v in g.values if v != 0]
    else:
        extra = [peak]
    return np.unique(np.concatenate((grid, extra)))


def weak_lq_norm(dim: Dimension, g: ScalarField, w: WeightSpec, q_exp: float,
                 dom: TruncatedDomain, lambda_grid=None, engine: str = "quad",
                 mc: McConfig | None = None) -> NormResult:
    """sup over lambda of lambda * w^q({x in B(0,R) : |g| >= lambda})^{1/q}."""
    _check_exponent(q_exp)
    if engine == "quad":
        if g.radial_hint is None:
            raise EngineError("the quad engine needs a radial g; use engine='mc'")
        profile = g.radial_hint.absolute()
        grid = default_lambda_grid(profile) if lambda_grid is None else np.asarray(lambda_grid, float)
        if np.any(grid <= 0):
            raise DomainError("lambda grid must be positive")
        best = 0.0
        for lam in grid:
            m = level_set_measure(dim, profile, w, q_exp, dom.R, float(lam))
            best = max(best, float(lam) * m ** (1.0 / q_exp))
        return NormResult(best, dom.R, "quad")
    if engine != "mc":
        raise EngineError(f"unknown engine {engine!r}")
    if mc is None:
        raise EngineError("the mc engine needs an McConfig")
    coords = sample_ball_array(dim, origin(dim), dom.R, mc)
    values = np.abs(g(coords))
    weights = w.power(dim, q_exp)(origin_distance(coords))
    peak = float(values.max()) if values.size else 0.0
    if peak == 0:
        return NormResult(0.0, dom.R, "mc")
    grid = np.geomspace(*LAMBDA_SPAN, LAMBDA_POINTS) * peak if lambda_grid is None \
        else np.asarray(lambda_grid, float)
    vol = ball_volume(dim, dom.R)
    best, best_err = 0.0, 0.0
    for lam in grid:
        contrib = weights * (values >= lam)
        m = vol * float(contrib.mean())
        cand = float(lam) * m ** (1.0 / q_exp)
        if cand > best:
            if contrib.size > 1:
                m_err = vol * float(contrib.std(ddof=1)) / math.sqrt(contrib.size)
            else:
                m_err = 0.0
            best, best_err = cand, cand / (q_exp * m) * m_err
    return NormResult(best, dom.R, "mc", best_err)


# ---------------------------------------------------------------------------
# Riesz scans
# ---------------------------------------------------------------------------


class ScanRow(NamedTuple):
    R: float
    strong: float
    weak: float
    input: float


def _profile_grid(top: float, step: float = PROFILE_STEP) -> np.ndarray:
    k = int(math.ceil(top / step - 1e-9))
    return np.round(step * np.arange(k + 1), 12)


def riesz_divergence_scan(dim: Dimension, f: ScalarField, w: WeightSpec, triple: ExponentTriple,
                          R_list, grid: RadiusGrid | None = None,
                          engine: str = "quad") -> list[ScanRow]:
    """Per R: ||M_alpha f||_{L^q(w^q)}, its weak counterpart on B(0,R), and ||f||_{L^p(w^p)}."""
    if not math.isfinite(f.support_radius):
        raise EngineError("riesz_divergence_scan needs a compactly supported f")
    R_list = [float(R) for R in R_list]
    if not R_list or any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise DomainError("R_list must be non-empty and increasing")
    grid = grid or RadiusGrid.for_domain(f.support_radius, R_list[-1])
    t_grid = _profile_grid(R_list[-1])
    log.info("tabulating M_alpha f on %d radii up to R=%.4g", t_grid.size, R_list[-1])
    mf = ScalarField.radial(maximal_profile(dim, triple.alpha, f, t_grid, grid, engine))
    input_norm = lp_weighted_norm(dim, f, w, triple.p, TruncatedDomain(max(f.support_radius, 1e-12)))
    rows = []
    for R in R_list:
        dom = TruncatedDomain(R)
        strong = lp_weighted_norm(dim, mf, w, triple.q, dom).value
        weak = weak_lq_norm(dim, mf, w, triple.q, dom).value
        rows.append(ScanRow(R, strong, weak, input_norm.value))
        log.debug("R=%.4g strong=%.6g weak=%.6g", R, strong, weak)
    return rows


def divergence_verdict(rows: list[ScanRow]) -> dict:
    """Growth statistics of a Riesz scan.

    exponent is the least-squares slope of log(strong) against log(R).
    """
    R = np.array([row.R for row in rows])
    strong = np.array([row.strong for row in rows])
    weak = np.array([row.weak for row in rows])
    increasing = bool(np.all(np.diff(strong) > 0))
    exponent = float(np.polyfit(np.log(R), np.log(strong), 1)[0]) if R.size > 1 and np.all(strong > 0) \
        else math.nan
    return {
        "strong_diverges": increasing and strong[-1] >= STRONG_GROWTH * strong[0],
        "strong_stable": bool(strong.max() < STRONG_STABLE * strong.min()),
        "weak_stable": bool(weak.max() < WEAK_STABLE * weak.min()),
        "exponent": exponent,
        "strong_growth": float(strong[-1] / strong[0]) if strong[0] > 0 else math.nan,
    }


def pointwise_exponent(dim: Dimension, g: RadialProfile, w: WeightSpec, t_range=(5.0, 30.0),
                       count: int = 26) -> float:
    """Least-squares slope of log g(t) against log w(t); nan when w is flat."""
    t = np.linspace(t_range[0], t_range[1], count)
    gv = np.asarray(g(t), dtype=float)
    wv = w.radial_values(dim, t)
    if np.any(gv <= 0) or np.ptp(np.log(wv)) < 1e-12:
        return math.nan
    return float(np.polyfit(np.log(wv), np.log(gv), 1)[0])


def averages_sum(dim: Dimension, f: ScalarField, w: WeightSpec, triple: ExponentTriple,
                 delta: float, J: int, dom: TruncatedDomain) -> float:
    """sum_{j=1}^J j^delta ||A_{j,alpha} f||_{L^q(w^q)} on B(0, R)."""
    if f.radial_hint is None or not math.isfinite(f.support_radius):
        raise EngineError("averages_sum needs a radial, compactly supported f")
    total = 0.0
    for j in range(1, J + 1):
        t_grid = _profile_grid(min(dom.R, f.support_radius + j))
        avg = average_profile(dim, triple.alpha, f.radial_hint.absolute(), float(j), t_grid)
        total += j ** delta * lp_weighted_norm(dim, ScalarField.radial(avg), w, triple.q, dom).value
    return total


# ---------------------------------------------------------------------------
# Distributional diagnostic
# ---------------------------------------------------------------------------


class LemmaResult(NamedTuple):
    lhs: float
    rhs_sum: float
    min_constant: float
    failure: bool


class LemmaSweep(NamedTuple):
    rows: list
    per_r: dict
    min_constant: float
    failures: int


def default_eta(dim: Dimension) -> float:
    return ball_volume(dim, 1.0) / ball_volume(dim, 2.0) / math.exp(dim.n - 1)


@lru_cache(maxsize=64)
def _plain_average(n: int, g: RadialProfile, radius: float, step: float) -> RadialProfile:
    return average_profile(Dimension(n), 0.0, g, radius, _profile_grid(g.support_radius + radius, step))


@lru_cache(maxsize=64)
def _nested_average(n: int, alpha: float, g: RadialProfile, r: float, step: float) -> RadialProfile:
    a1 = _plain_average(n, g, 1.0, step)
    return average_profile(Dimension(n), alpha, a1, r, _profile_grid(a1.support_radius + r, step))


def _lemma_profile(f: ScalarField) -> RadialProfile:
    if f.radial_hint is None or not math.isfinite(f.support_radius):
        raise EngineError("the distributional diagnostic needs a radial, compactly supported f")
    return f.radial_hint.absolute()


def lemma21_diagnostic(dim: Dimension, f: ScalarField, w: WeightSpec, triple: ExponentTriple,
                       bg: BetaGamma, r: int, lam: float, epsilon: float = 0.5,
                       eta: float | None = None, step: float = PROFILE_STEP) -> LemmaResult:
    """w^q({A_{r,alpha}(A_1 f) >= lam}) against the sum over k = 0..r of

        e^{(n-1)kq/gamma} e^{(n-1)(r-k)(q/gamma)eps} e^{(n-1)r(q/gamma)(beta-1-beta alpha/n)}
        * w^p({A_2 f >= eta e^{(n-1)(k-1)} lam / e^{(n-1)r alpha/n}})^{q/p}
    """
    if r < 1:
        raise DomainError(f"r must be >= 1, got {r!r}")
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam!r}")
    eta = default_eta(dim) if eta is None else eta
    g = _lemma_profile(f)
    if g.peak == 0:
        return LemmaResult(0.0, 0.0, 0.0, False)
    n1 = dim.n - 1
    q, p = triple.q, triple.p
    a = triple.alpha / dim.n
    nested = _nested_average(dim.n, triple.alpha, g, float(r), step)
    a2 = _plain_average(dim.n, g, 2.0, step)
    lhs = level_set_measure(dim, nested, w, q, nested.support_radius, lam)
    qg = q / bg.gamma
    rhs = 0.0
    for k in range(r + 1):
        coeff = math.exp(n1 * (k * qg + (r - k) * qg * epsilon + r * qg * (bg.beta - 1.0 - bg.beta * a)))
        threshold = eta * math.exp(n1 * (k - 1)) * lam / math.exp(n1 * r * a)
        rhs += coeff * level_set_measure(dim, a2, w, p, a2.support_radius, threshold) ** (q / p)
    if rhs == 0.0:
        if lhs > 0:
            log.warning("diagnostic failure at r=%d lambda=%.4g: empty right side (eta too large?)", r, lam)
            return LemmaResult(lhs, rhs, math.inf, True)
        return LemmaResult(lhs, rhs, 0.0, False)
    return LemmaResult(lhs, rhs, lhs / rhs, False)


def lemma21_sweep(dim: Dimension, f: ScalarField, w: WeightSpec, triple: ExponentTriple,
                  bg: BetaGamma, r_values=range(2, 9), lambda_fractions=(0.9, 0.5, 0.1, 0.01),
                  epsilon: float = 0.5, eta: float | None = None) -> LemmaSweep:
    """lemma21_diagnostic over r and lambda = fraction * sup A_{r,alpha}(A_1 f)."""
    g = _lemma_profile(f)
    rows, per_r, failures = [], {}, 0
    for r in r_values:
        peak = _nested_average(dim.n, triple.alpha, g, float(r), PROFILE_STEP).peak
        per_r[int(r)] = 0.0
        for frac in lambda_fractions:
            if peak == 0:
                res = LemmaResult(0.0, 0.0, 0.0, False)
                lam = 0.0
            else:
                lam = frac * peak
                res = lemma21_diagnostic(dim, f, w, triple, bg, int(r), lam, epsilon, eta)
            failures += int(res.failure)
            rows.append((int(r), lam, res.lhs, res.rhs_sum, res.min_constant, res.failure))
            per_r[int(r)] = max(per_r[int(r)], res.min_constant)
    overall = max(per_r.values()) if per_r else 0.0
    return LemmaSweep(rows, per_r, overall, failures)
