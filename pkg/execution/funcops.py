"""
Functions on H^n and the fractional averaging / maximal operators.

    A_{r,a} f(x) = mu(B(x,r))^{a/n - 1} * int_{B(x,r)} |f| dmu
    M_a^loc f(x) = max over radii r <= 2 of A_{r,a} f(x)
    M_a^far f(x) = max over radii r > 2  of A_{r,a} f(x)
    M_a f(x)     = max(M_a^loc f(x), M_a^far f(x))

Suprema over r are grid maxima over a RadiusGrid. a = 0 gives the plain
averages and the Hardy-Littlewood operator M.

Two engines evaluate the ball integrals: "quad" (radial f only, through the
cap reduction in integrate.quad_radial_ball) and "mc" (any field, seeded
Monte Carlo).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from hypgeo import (
    AnnulusIndex,
    BallSpec,
    Dimension,
    DomainError,
    HPoint,
    annulus_bounds,
    axis_point,
    ball_volume,
    distance_to_origin,
    hdist,
    minkowski_dot,
    origin_distance,
)
from integrate import (
    McConfig,
    McEstimate,
    mc_integrate_ball,
    quad_radial_ball,
    radial_integral,
)

log = logging.getLogger(__name__)

DEFAULT_LOCAL_STEP = 0.05
DEFAULT_FAR_STEP = 0.1
LOCAL_RADIUS = 2.0


class EngineError(ValueError):
    """The requested engine cannot evaluate this input."""


# ---------------------------------------------------------------------------
# Radial profiles and fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialProfile:
    """A radial function g(t), t = d(0, x).

    step:   g = values[i] on (breakpoints[i], breakpoints[i+1]],
            len(values) == len(breakpoints) - 1
    linear: g interpolates (breakpoints[i], values[i])
    Past the last breakpoint the last value is held up to support_radius;
    beyond support_radius g is 0.
    """

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]
    interpolation: str = "step"
    support_radius: float = math.inf
    _bp: np.ndarray = field(default=None, init=False, repr=False, compare=False, hash=False)
    _vals: np.ndarray = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        if self.interpolation not in ("step", "linear"):
            raise ValueError(f"interpolation must be 'step' or 'linear', got {self.interpolation!r}")
        if not bp or bp[0] < 0:
            raise ValueError("breakpoints must be non-empty and start at t >= 0")
        if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        expected = len(bp) - 1 if self.interpolation == "step" else len(bp)
        if len(vals) != expected or not vals:
            raise ValueError(f"{self.interpolation} profile needs {expected} values, got {len(vals)}")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("profile values must be finite")
        if not self.support_radius >= 0:
            raise ValueError(f"support_radius must be >= 0, got {self.support_radius!r}")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "support_radius", float(self.support_radius))
        object.__setattr__(self, "_bp", np.asarray(bp))
        object.__setattr__(self, "_vals", np.asarray(vals))

    # -- constructors -------------------------------------------------------

    @classmethod
    def indicator(cls, rho: float) -> "RadialProfile":
        """chi of the closed ball B(0, rho)."""
        if not rho > 0:
            raise ValueError(f"indicator radius must be positive, got {rho!r}")
        return cls((0.0, float(rho)), (1.0,), "step", float(rho))

    @classmethod
    def shells(cls, pairs) -> "RadialProfile":
        """chi of a disjoint union of shells (a, b]."""
        merged: list[list[float]] = []
        for a, b in sorted((float(a), float(b)) for a, b in pairs):
            if a < 0 or b <= a:
                raise ValueError(f"shell ({a}, {b}] is not a valid interval")
            if merged and a < merged[-1][1]:
                raise ValueError("shells must be disjoint")
            if merged and a == merged[-1][1]:
                merged[-1][1] = b
            else:
                merged.append([a, b])
        if not merged:
            return cls((0.0, 1.0), (0.0,), "step", 0.0)
        bp, vals = [0.0], []
        for a, b in merged:
            if a > bp[-1]:
                bp.append(a)
                vals.append(0.0)
            bp.append(b)
            vals.append(1.0)
        return cls(tuple(bp), tuple(vals), "step", merged[-1][1])

    @classmethod
    def constant(cls, c: float, support_radius: float = math.inf) -> "RadialProfile":
        return cls((0.0, 1.0), (float(c),), "step", support_radius)

    @classmethod
    def zero(cls) -> "RadialProfile":
        return cls.shells(())

    @classmethod
    def tabulate(cls, func: Callable, grid, support_radius: float | None = None) -> "RadialProfile":
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(func(grid), dtype=float)
        if support_radius is None:
            support_radius = float(grid[-1])
        return cls(tuple(grid), tuple(values), "linear", support_radius)

    # -- evaluation ---------------------------------------------------------

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if self.interpolation == "step":
            idx = np.clip(np.searchsorted(self._bp, t_arr, side="left") - 1, 0, self._vals.size - 1)
            out = self._vals[idx]
        else:
            out = np.interp(t_arr, self._bp, self._vals)
        out = np.where(t_arr > self.support_radius, 0.0, out)
        if np.ndim(t) == 0:
            return float(out)
        return out

    @property
    def knots(self) -> tuple[float, ...]:
        """Points where g may fail to be smooth."""
        pts = self.breakpoints[1:] if self.interpolation == "step" else self.breakpoints
        if math.isfinite(self.support_radius):
            pts = pts + (self.support_radius,)
        return tuple(sorted(set(p for p in pts if p <= self.support_radius)))

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self._vals))) if self.support_radius > 0 else 0.0

    def absolute(self) -> "RadialProfile":
        if all(v >= 0 for v in self.values):
            return self
        return RadialProfile(self.breakpoints, tuple(abs(v) for v in self.values),
                             self.interpolation, self.support_radius)

    def scaled(self, c: float) -> "RadialProfile":
        return RadialProfile(self.breakpoints, tuple(c * v for v in self.values),
                             self.interpolation, self.support_radius)

    def pieces(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(lo, hi, g(lo+), g(hi-)) for the smooth pieces inside [0, support]."""
        S = self.support_radius
        edges = np.concatenate(([0.0], self._bp[self._bp > 0]))
        if S > edges[-1]:
            edges = np.append(edges, S)
        lo, hi = edges[:-1], np.minimum(edges[1:], S)
        keep = hi > lo
        lo, hi = lo[keep], hi[keep]
        if self.interpolation == "step":
            idx = np.clip(np.searchsorted(self._bp, hi, side="left") - 1, 0, self._vals.size - 1)
            return lo, hi, self._vals[idx], self._vals[idx]
        return lo, hi, np.interp(lo, self._bp, self._vals), np.interp(hi, self._bp, self._vals)


@dataclass(frozen=True)
class _RadialEvaluator:
    profile: RadialProfile

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        return self.profile(origin_distance(coords))


@dataclass(frozen=True)
class ScalarField:
    """A pointwise-evaluable function on H^n.

    `evaluator` maps an (m, n+1) coordinate array to m values. When
    radial_hint is set the field equals radial_hint(d(0, x)).
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    radial_hint: RadialProfile | None = None
    support_radius: float = math.inf

    @classmethod
    def radial(cls, profile: RadialProfile) -> "ScalarField":
        return cls(_RadialEvaluator(profile), profile, profile.support_radius)

    def __call__(self, x):
        if isinstance(x, HPoint):
            return float(np.asarray(self.evaluator(x.coords[None, :]), dtype=float)[0])
        return np.asarray(self.evaluator(np.atleast_2d(x)), dtype=float)

    def absolute(self) -> Callable[[np.ndarray], np.ndarray]:
        return lambda coords: np.abs(self(coords))


def _ones(s):
    return np.ones_like(np.asarray(s, dtype=float))


# ---------------------------------------------------------------------------
# Constructible sets
# ---------------------------------------------------------------------------

SET_KINDS = ("radial_union", "ball_at", "annulus_cap")


@dataclass(frozen=True, eq=False)
class SetSpec:
    """Sets E, F built from radial shells, off-center balls and annulus caps.

    radial_union: disjoint shells (a, b] around the origin
    ball_at:      B(z, radius) with z on the e1 axis at distance `offset`
    annulus_cap:  C_l intersected with a ball
    """

    kind: str
    shells: tuple[tuple[float, float], ...] = ()
    offset: float = 0.0
    radius: float = 0.0
    annulus: AnnulusIndex | None = None
    ball: BallSpec | None = None

    def __post_init__(self):
        if self.kind not in SET_KINDS:
            raise ValueError(f"unknown set kind {self.kind!r}")
        if self.kind == "radial_union":
            shells = tuple((float(a), float(b)) for a, b in self.shells)
            RadialProfile.shells(shells)  # validates disjointness
            object.__setattr__(self, "shells", tuple(sorted(shells)))
        elif self.kind == "ball_at":
            if self.offset < 0 or not self.radius > 0:
                raise ValueError("ball_at needs offset >= 0 and radius > 0")
        elif self.annulus is None or self.ball is None:
            raise ValueError("annulus_cap needs an annulus index and a ball")

    @classmethod
    def radial_union(cls, shells) -> "SetSpec":
        return cls("radial_union", shells=tuple(shells))

    @classmethod
    def empty(cls) -> "SetSpec":
        return cls("radial_union")

    @classmethod
    def ball_at(cls, offset: float, radius: float) -> "SetSpec":
        return cls("ball_at", offset=float(offset), radius=float(radius))

    @classmethod
    def annulus_cap(cls, l: int, ball: BallSpec) -> "SetSpec":
        return cls("annulus_cap", annulus=AnnulusIndex(l), ball=ball)

    @property
    def is_empty(self) -> bool:
        return self.kind == "radial_union" and not self.shells

    def profile(self) -> RadialProfile | None:
        """The set's indicator as a radial profile, when it is radial."""
        if self.kind == "radial_union":
            return RadialProfile.shells(self.shells)
        if self.kind == "ball_at" and self.offset == 0.0:
            return RadialProfile.indicator(self.radius)
        if self.kind == "annulus_cap" and distance_to_origin(self.ball.center) == 0.0:
            lo, hi = annulus_bounds(self.annulus)
            top = min(hi, self.ball.radius)
            return RadialProfile.shells([(lo, top)] if top > lo else [])
        return None

    def outer_radius(self) -> float:
        """Radius of the smallest centered ball containing the set."""
        if self.kind == "radial_union":
            return self.shells[-1][1] if self.shells else 0.0
        if self.kind == "ball_at":
            return self.offset + self.radius
        return min(float(self.annulus.j), distance_to_origin(self.ball.center) + self.ball.radius)

    def indicator(self, dim: Dimension) -> ScalarField:
        prof = self.profile()
        if prof is not None:
            return ScalarField.radial(prof)
        if self.kind == "ball_at":
            z = axis_point(dim, self.offset).coords
            threshold = math.cosh(self.radius)
            return ScalarField(lambda c: (minkowski_dot(c, z) <= threshold).astype(float),
                               None, self.outer_radius())
        lo, hi = annulus_bounds(self.annulus)
        center = self.ball.center.coords
        threshold = math.cosh(self.ball.radius)

        def _member(c):
            d0 = origin_distance(c)
            return ((d0 > lo) & (d0 <= hi) & (minkowski_dot(c, center) <= threshold)).astype(float)

        return ScalarField(_member, None, self.outer_radius())

    def measure(self, dim: Dimension, density=None) -> float:
        """int_E density(d(0, y)) dmu(y); density defaults to 1."""
        density = density if density is not None else _ones
        if self.kind == "radial_union":
            return sum(radial_integral(dim, density, a, b) for a, b in self.shells)
        if self.kind == "ball_at":
            return quad_radial_ball(dim, self.offset, self.radius, density)
        lo, hi = annulus_bounds(self.annulus)
        t = distance_to_origin(self.ball.center)
        return quad_radial_ball(dim, t, self.ball.radius, density, s_min=lo, s_max=hi)

    def weighted_measure(self, dim: Dimension, w, power: float) -> float:
        """w^power(E) for a radial weight exposing power(dim, exponent)."""
        return self.measure(dim, w.power(dim, power))


# ---------------------------------------------------------------------------
# Radius grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadiusGrid:
    local_step: float = DEFAULT_LOCAL_STEP
    far_step: float = DEFAULT_FAR_STEP
    r_max: float = 12.0

    def __post_init__(self):
        if not 0 < self.local_step <= 0.1:
            raise ValueError(f"local_step must lie in (0, 0.1], got {self.local_step!r}")
        if not 0 < self.far_step <= 0.25:
            raise ValueError(f"far_step must lie in (0, 0.25], got {self.far_step!r}")
        if not self.r_max >= LOCAL_RADIUS:
            raise ValueError(f"r_max must be >= 2, got {self.r_max!r}")

    @classmethod
    def for_domain(cls, support_radius: float, R: float, local_step: float = DEFAULT_LOCAL_STEP,
                   far_step: float = DEFAULT_FAR_STEP) -> "RadiusGrid":
        return cls(local_step, far_step, max(LOCAL_RADIUS, support_radius + R + 1.0))

    @property
    def local_radii(self) -> np.ndarray:
        k = int(math.floor(LOCAL_RADIUS / self.local_step + 1e-9))
        radii = np.round(self.local_step * np.arange(1, k + 1), 12)
        if radii[-1] < LOCAL_RADIUS:
            radii = np.append(radii, LOCAL_RADIUS)
        return radii

    @property
    def far_radii(self) -> np.ndarray:
        k = int(math.floor((self.r_max - LOCAL_RADIUS) / self.far_step + 1e-9))
        return np.round(LOCAL_RADIUS + self.far_step * np.arange(1, k + 1), 12)

    def refined(self) -> "RadiusGrid":
        return RadiusGrid(self.local_step / 2, self.far_step / 2, self.r_max)


class MaximalResult(NamedTuple):
    value: float
    radius: float
    boundary_attained: bool


# ---------------------------------------------------------------------------
# Averages
# ---------------------------------------------------------------------------


def _check_alpha(dim: Dimension, alpha: float) -> None:
    if not 0 <= alpha < dim.n:
        raise DomainError(f"alpha must lie in [0, n) = [0, {dim.n}), got {alpha!r}")


@lru_cache(maxsize=262144)
def _profile_mass(n: int, profile: RadialProfile, t: float, r: float) -> float:
    return quad_radial_ball(Dimension(n), t, r, profile)


def profile_ball_mass(dim: Dimension, profile: RadialProfile, t: float, r: float) -> float:
    """int_{B(x,r)} |g|(d(0,y)) dmu(y) with d(0, x) = t (memoised)."""
    return _profile_mass(dim.n, profile.absolute(), float(t), float(r))


def _ball_mass(dim: Dimension, f: ScalarField, x: HPoint, r: float, engine: str,
               mc: McConfig | None) -> McEstimate:
    if engine == "quad":
        if f.radial_hint is None:
            raise EngineError("the quad engine needs a radial_hint; use engine='mc'")
        return McEstimate.exact(profile_ball_mass(dim, f.radial_hint, distance_to_origin(x), r))
    if engine == "mc":
        if mc is None:
            raise EngineError("the mc engine needs an McConfig")
        return mc_integrate_ball(dim, x, r, f.absolute(), mc)
    raise EngineError(f"unknown engine {engine!r}")


def average_estimate(dim: Dimension, alpha: float, f: ScalarField, x: HPoint, r: float,
                     engine: str = "quad", mc: McConfig | None = None) -> McEstimate:
    """A_{r,alpha} f(x) with its Monte Carlo standard error (0 for quad)."""
    _check_alpha(dim, alpha)
    if not r > 0:
        raise DomainError(f"averaging radius must be positive, got {r!r}")
    scale = ball_volume(dim, float(r)) ** (alpha / dim.n - 1.0)
    mass = _ball_mass(dim, f, x, float(r), engine, mc)
    return McEstimate(mass.value * scale, mass.stderr * scale, mass.samples)


def avg_fractional(dim: Dimension, alpha: float, f: ScalarField, x: HPoint, r: float,
                   engine: str = "quad", mc: McConfig | None = None) -> float:
    return average_estimate(dim, alpha, f, x, r, engine, mc).value


def avg_plain(dim: Dimension, f: ScalarField, x: HPoint, r: float, engine: str = "quad",
              mc: McConfig | None = None) -> float:
    """Plain average of |f| over B(x, r) (exponent 0 in place of alpha/n)."""
    return avg_fractional(dim, 0.0, f, x, r, engine, mc)


def avg_indicator(dim: Dimension, alpha: float, E: SetSpec, x: HPoint, r: float,
                  engine: str = "quad", mc: McConfig | None = None) -> float:
    """A_{r,alpha}(chi_E)(x)."""
    _check_alpha(dim, alpha)
    if engine == "quad":
        prof = E.profile()
        if prof is not None:
            return avg_fractional(dim, alpha, ScalarField.radial(prof), x, r, "quad")
        if E.kind == "ball_at":
            # isometry: measure B(x,r) & B(z,rho) around z instead of the origin
            d = hdist(x, axis_point(dim, E.offset))
            mass = profile_ball_mass(dim, RadialProfile.indicator(E.radius), d, r)
            return mass * ball_volume(dim, float(r)) ** (alpha / dim.n - 1.0)
        raise EngineError(f"quad engine cannot average over a non-radial {E.kind}; use engine='mc'")
    return avg_fractional(dim, alpha, E.indicator(dim), x, r, engine, mc)


# ---------------------------------------------------------------------------
# Maximal operators
# ---------------------------------------------------------------------------


def _candidate_radii(radii: np.ndarray, t: float, support: float) -> np.ndarray:
    """Grid radii that can carry the maximum for f supported in B(0, support).

    Balls with r <= t - support miss the support; once r >= t + support the
    mass is complete and the average decreases, so only the first such radius
    competes.
    """
    if not math.isfinite(support):
        return radii
    keep = radii[radii > t - support]
    covering = keep >= t + support
    if np.count_nonzero(covering) > 1:
        keep = keep[: int(np.argmax(covering)) + 1]
    return keep


def _scan(dim, alpha, f, x, radii, engine, mc) -> MaximalResult:
    if radii.size == 0:
        return MaximalResult(0.0, math.nan, False)
    values = np.array([avg_fractional(dim, alpha, f, x, float(r), engine, mc) for r in radii])
    k = int(np.argmax(values))
    return MaximalResult(float(values[k]), float(radii[k]), False)


def maximal_local(dim: Dimension, alpha: float, f: ScalarField, x: HPoint, grid: RadiusGrid,
                  engine: str = "quad", mc: McConfig | None = None) -> MaximalResult:
    _check_alpha(dim, alpha)
    t = distance_to_origin(x)
    return _scan(dim, alpha, f, x, _candidate_radii(grid.local_radii, t, f.support_radius),
                 engine, mc)


def maximal_far(dim: Dimension, alpha: float, f: ScalarField, x: HPoint, grid: RadiusGrid,
                engine: str = "quad", mc: McConfig | None = None) -> MaximalResult:
    _check_alpha(dim, alpha)
    if not math.isfinite(f.support_radius):
        raise EngineError("the far maximal operator needs a compactly supported f")
    radii = grid.far_radii
    t = distance_to_origin(x)
    res = _scan(dim, alpha, f, x, _candidate_radii(radii, t, f.support_radius), engine, mc)
    if res.value > 0 and res.radius == radii[-1]:
        log.warning("far supremum attained at r_max=%.4g for t=%.4g; grid too short", radii[-1], t)
        return res._replace(boundary_attained=True)
    return res


def maximal(dim: Dimension, alpha: float, f: ScalarField, x: HPoint, grid: RadiusGrid,
            engine: str = "quad", mc: McConfig | None = None) -> MaximalResult:
    loc = maximal_local(dim, alpha, f, x, grid, engine, mc)
    far = maximal_far(dim, alpha, f, x, grid, engine, mc)
    return far if far.value > loc.value else loc


def maximal_profile(dim: Dimension, alpha: float, f: ScalarField, t_grid, grid: RadiusGrid,
                    engine: str = "quad", mc: McConfig | None = None) -> RadialProfile:
    """t -> M_alpha f at distance t from the origin, tabulated on t_grid.

    The profile is the restriction to B(0, t_grid[-1]).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    values = [maximal(dim, alpha, f, axis_point(dim, float(t)), grid, engine, mc).value
              for t in t_grid]
    log.debug("maximal profile alpha=%s on %d radii up to %.3g", alpha, t_grid.size, t_grid[-1])
    return RadialProfile(tuple(t_grid), tuple(values), "linear", float(t_grid[-1]))


def average_profile(dim: Dimension, alpha: float, profile: RadialProfile, r: float,
                    t_grid) -> RadialProfile:
    """t -> A_{r,alpha} g at distance t, tabulated on t_grid (linear)."""
    _check_alpha(dim, alpha)
    t_grid = np.asarray(t_grid, dtype=float)
    scale = ball_volume(dim, float(r)) ** (alpha / dim.n - 1.0)
    values = [scale * profile_ball_mass(dim, profile, float(t), float(r)) for t in t_grid]
    support = min(float(t_grid[-1]), profile.support_radius + r)
    return RadialProfile(tuple(t_grid), tuple(values), "linear", support)


def interpolation_bound(dim: Dimension, alpha: float, f: ScalarField, x: HPoint,
                        grid: RadiusGrid) -> tuple[float, float]:
    """(M_alpha f(x), ||f||_1^{alpha/n} (M f(x))^{1 - alpha/n}).

    A_{r,alpha} f = (int_B |f|)^{alpha/n} (average of |f|)^{1-alpha/n}, so the
    first entry never exceeds the second on a shared grid.
    """
    if f.radial_hint is None:
        raise EngineError("interpolation_bound needs a radial f")
    m_alpha = maximal(dim, alpha, f, x, grid).value
    m_plain = maximal(dim, 0.0, f, x, grid).value
    prof = f.radial_hint.absolute()
    l1 = radial_integral(dim, prof, 0.0, prof.support_radius)
    return m_alpha, l1 ** (alpha / dim.n) * m_plain ** (1.0 - alpha / dim.n)
