"""
Seeded Monte Carlo sampling on H^n and the radial quadrature kernels.

Sampling:
    Uniform points of B(center, r) are drawn at the origin (radius by inverse
    CDF of sinh^{n-1}, direction uniform on S^{n-1}) and boosted onto the
    center. Random numbers come from a Philox generator keyed by
    (seed, chunk index) with a fixed chunk size, so sample i always sees the
    same draws no matter how many workers split the chunks.

Quadrature:
    radial_integral   Omega_n * int_a^b g(s) sinh^{n-1}(s) ds
    quad_radial_ball  int_{B(x,r)} g(d(0,y)) dmu(y), reduced to one dimension
                      through cap_fraction
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator

import numpy as np

from hypgeo import (
    Dimension,
    DomainError,
    HPoint,
    ball_volume,
    boost_from_origin,
    cap_fraction,
)

log = logging.getLogger(__name__)

CHUNK_SIZE = 8192
CDF_TABLE_NODES = 2049
CDF_NEWTON_STEPS = 4
PANEL_WIDTH = 0.5
QUAD_REL_TOL = 1e-8  # reported failure threshold
PANEL_REL_TOL = 1e-10  # per-panel acceptance between rule orders
MAX_BISECTIONS = 12
DEFAULT_WORKERS = 1

_GL = {k: np.polynomial.legendre.leggauss(k) for k in (8, 16, 24)}


class NumericalError(RuntimeError):
    """A numerical kernel could not deliver a trustworthy value."""


class QuadratureError(NumericalError):
    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved relative tolerance {achieved:.3e})")
        self.achieved = achieved


class NonFiniteIntegrandError(NumericalError):
    def __init__(self, point, value):
        super().__init__(f"integrand returned {value!r} at {point!r}")
        self.point = point
        self.value = value


# ---------------------------------------------------------------------------
# Config / results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McConfig:
    seed: int
    samples: int = 100_000
    workers: int = DEFAULT_WORKERS

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if int(self.samples) < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples!r}")
        if int(self.workers) < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers!r}")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "samples", int(self.samples))
        object.__setattr__(self, "workers", int(self.workers))


@dataclass(frozen=True)
class McEstimate:
    value: float
    stderr: float
    samples: int

    def agrees_with(self, reference: float, sigmas: float = 3.0) -> bool:
        slack = sigmas * self.stderr + 1e-9 * max(1.0, abs(reference))
        return abs(self.value - reference) <= slack

    @classmethod
    def exact(cls, value: float) -> "McEstimate":
        return cls(float(value), 0.0, 0)


def resolve_workers(requested: int) -> int:
    """Cap a worker request by HYPMAX_THREADS and the machine's CPU count."""
    cap = os.cpu_count() or 1
    env = os.getenv("HYPMAX_THREADS")
    if env:
        try:
            cap = min(cap, max(1, int(env)))
        except ValueError:
            log.warning("Ignoring non-integer HYPMAX_THREADS=%r", env)
    return max(1, min(int(requested), cap))


# ---------------------------------------------------------------------------
# Radial sampling
# ---------------------------------------------------------------------------


def _scaled_density(m: int, r: float, s: np.ndarray) -> np.ndarray:
    """sinh^m(s) * e^{-m r}; bounded by 1 on [0, r]."""
    return (-0.5 * np.expm1(-2.0 * s)) ** m * np.exp(m * (s - r))


@lru_cache(maxsize=64)
def _radial_cdf_table(n: int, r: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Normalised CDF of the radius on a uniform grid over [0, r]; read-only."""
    m = n - 1
    x, w = _GL[16]
    grid = np.linspace(0.0, r, CDF_TABLE_NODES)
    a, b = grid[:-1, None], grid[1:, None]
    nodes = 0.5 * (b - a) * x[None, :] + 0.5 * (a + b)
    panel = 0.5 * (b[:, 0] - a[:, 0]) * (_scaled_density(m, r, nodes) @ w)
    cdf = np.concatenate(([0.0], np.cumsum(panel)))
    total = cdf[-1]
    cdf /= total
    cdf[-1] = 1.0
    grid.setflags(write=False)
    cdf.setflags(write=False)
    return grid, cdf, float(total)


def _radial_quantiles(dim: Dimension, r: float, u: np.ndarray) -> np.ndarray:
    if dim.n == 2:
        # (cosh rho - 1) = u (cosh r - 1), written with half-angle sinh
        return 2.0 * np.arcsinh(np.sqrt(u) * math.sinh(0.5 * r))
    m = dim.n - 1
    grid, cdf, total = _radial_cdf_table(dim.n, float(r))
    x, w = _GL[8]
    rho = np.interp(u, cdf, grid)
    for _ in range(CDF_NEWTON_STEPS):
        i = np.clip(np.searchsorted(grid, rho, side="right") - 1, 0, grid.size - 2)
        a = grid[i]
        half = 0.5 * (rho - a)
        nodes = half[:, None] * (x[None, :] + 1.0) + a[:, None]
        F = cdf[i] + half * (_scaled_density(m, r, nodes) @ w) / total
        f = _scaled_density(m, r, rho) / total
        step = np.where(f > 1e-300, (F - u) / np.maximum(f, 1e-300), 0.0)
        rho = np.clip(rho - step, grid[i], grid[i + 1])
    return rho


def _chunk_generator(seed: int, chunk: int) -> np.random.Generator:
    key = np.array([seed, chunk], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw_chunk(dim: Dimension, center: HPoint | None, r: float, seed: int,
                chunk: int, count: int) -> np.ndarray:
    gen = _chunk_generator(seed, chunk)
    u = gen.random(CHUNK_SIZE)[:count]
    normals = gen.standard_normal((CHUNK_SIZE, dim.n))[:count]
    directions = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    rho = _radial_quantiles(dim, r, u)
    coords = np.empty((count, dim.n + 1))
    coords[:, 0] = np.cosh(rho)
    coords[:, 1:] = np.sinh(rho)[:, None] * directions
    if center is None:
        return coords
    return boost_from_origin(center, coords)


def _chunk_plan(samples: int) -> list[tuple[int, int]]:
    full, rest = divmod(samples, CHUNK_SIZE)
    plan = [(c, CHUNK_SIZE) for c in range(full)]
    if rest:
        plan.append((full, rest))
    return plan


def _map_chunks(fn: Callable[[tuple[int, int]], np.ndarray], plan, workers: int) -> list:
    if workers <= 1 or len(plan) <= 1:
        return [fn(item) for item in plan]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, plan))


def _is_origin(center: HPoint) -> bool:
    return center.coords[0] == 1.0 and not np.any(center.coords[1:])


def sample_ball_array(dim: Dimension, center: HPoint, r: float, mc: McConfig) -> np.ndarray:
    """mc.samples uniform points of B(center, r) as a (samples, n+1) array."""
    if not r > 0:
        raise DomainError(f"sampling radius must be positive, got {r!r}")
    target = None if _is_origin(center) else center
    plan = _chunk_plan(mc.samples)
    workers = resolve_workers(mc.workers)
    parts = _map_chunks(
        lambda item: _draw_chunk(dim, target, float(r), mc.seed, item[0], item[1]),
        plan, workers,
    )
    return np.concatenate(parts, axis=0)


def sample_ball_uniform(dim: Dimension, center: HPoint, r: float, mc: McConfig) -> Iterator[HPoint]:
    for row in sample_ball_array(dim, center, r, mc):
        yield HPoint(row)


def mc_integrate_ball(dim: Dimension, center: HPoint, r: float, integrand, mc: McConfig) -> McEstimate:
    """Estimate int_{B(center, r)} integrand dmu as mean * V(r).

    `integrand` maps an (m, n+1) coordinate array to m values; ScalarField
    instances qualify.
    """
    if not r > 0:
        raise DomainError(f"integration radius must be positive, got {r!r}")
    target = None if _is_origin(center) else center
    plan = _chunk_plan(mc.samples)
    workers = resolve_workers(mc.workers)

    def _evaluate(item):
        coords = _draw_chunk(dim, target, float(r), mc.seed, item[0], item[1])
        values = np.asarray(integrand(coords), dtype=float)
        bad = ~np.isfinite(values)
        if np.any(bad):
            k = int(np.argmax(bad))
            raise NonFiniteIntegrandError(HPoint(coords[k]), float(values[k]))
        return values

    values = np.concatenate(_map_chunks(_evaluate, plan, workers))
    volume = ball_volume(dim, float(r))
    mean = float(np.mean(values))
    if values.size > 1:
        stderr = volume * float(np.std(values, ddof=1)) / math.sqrt(values.size)
    else:
        stderr = 0.0
    return McEstimate(volume * mean, stderr, int(values.size))


# ---------------------------------------------------------------------------
# Radial quadrature
# ---------------------------------------------------------------------------


def _knots_of(g) -> tuple[float, ...]:
    return tuple(getattr(g, "knots", ()) or ())


def _panel_edges(a: float, b: float, knots, width: float = PANEL_WIDTH) -> np.ndarray:
    cuts = [a, b] + [k for k in knots if a < k < b]
    cuts = np.unique(np.asarray(cuts, dtype=float))
    edges = [cuts[0]]
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        pieces = max(1, int(math.ceil((hi - lo) / width - 1e-12)))
        edges.extend(lo + (hi - lo) * np.arange(1, pieces + 1) / pieces)
    return np.asarray(edges)


def _evaluate_radial(g, s: np.ndarray) -> np.ndarray:
    values = np.asarray(g(s), dtype=float)
    if values.shape != s.shape:
        values = np.broadcast_to(values, s.shape)
    bad = ~np.isfinite(values)
    if np.any(bad):
        k = np.unravel_index(int(np.argmax(bad)), s.shape)
        raise NonFiniteIntegrandError(f"s={s[k]!r}", float(values[k]))
    return values


def radial_integral_many(dim: Dimension, g, lo, hi, order: int = 16) -> float:
    """Sum over intervals [lo_i, hi_i] of Omega_n int g(s) sinh^{n-1}(s) ds.

    Each interval is cut into equal panels no wider than PANEL_WIDTH; g must
    be smooth inside each interval.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    if lo.size == 0:
        return 0.0
    counts = np.maximum(1, np.ceil((hi - lo) / PANEL_WIDTH - 1e-12).astype(int))
    owner = np.repeat(np.arange(lo.size), counts)
    offset = np.arange(owner.size) - np.repeat(np.cumsum(counts) - counts, counts)
    width = (hi - lo)[owner] / counts[owner]
    a = lo[owner] + offset * width
    x, w = _GL[order]
    nodes = a[:, None] + 0.5 * width[:, None] * (x[None, :] + 1.0)
    f = _evaluate_radial(g, nodes) * np.sinh(nodes) ** (dim.n - 1)
    return float(dim.omega_n * np.sum(0.5 * width * (f @ w)))


def radial_integral(dim: Dimension, g, a: float, b: float, knots=None) -> float:
    """Omega_n int_a^b g(s) sinh^{n-1}(s) ds, split at the knots of g."""
    if b <= a:
        return 0.0
    if knots is None:
        knots = _knots_of(g)
    edges = _panel_edges(a, b, knots, width=np.inf)
    return radial_integral_many(dim, g, edges[:-1], edges[1:])


def _cosine_rule(dim: Dimension, t: float, r: float, g, lo: np.ndarray, hi: np.ndarray,
                 order: int) -> np.ndarray:
    """Gauss-Legendre after s = lo + (hi-lo)(1-cos(pi u))/2 on each panel.

    The map flattens the square-root behaviour of the cap fraction at the
    ends of its support.
    """
    x, w = _GL[order]
    u = 0.5 * (x + 1.0)
    span = (hi - lo)[:, None]
    s = lo[:, None] + span * 0.5 * (1.0 - np.cos(math.pi * u))[None, :]
    jac = span * (0.5 * math.pi) * np.sin(math.pi * u)[None, :]
    f = _evaluate_radial(g, s) * np.sinh(s) ** (dim.n - 1) * cap_fraction(dim, s, t, r)
    return 0.5 * (f * jac) @ w


def _cap_integral(dim: Dimension, t: float, r: float, g, a: float, b: float, knots) -> float:
    edges = _panel_edges(a, b, knots)
    lo, hi = edges[:-1], edges[1:]
    total = 0.0
    error = 0.0
    floor = None
    exhausted = False
    for depth in range(MAX_BISECTIONS + 1):
        coarse = _cosine_rule(dim, t, r, g, lo, hi, 16)
        fine = _cosine_rule(dim, t, r, g, lo, hi, 24)
        diff = np.abs(fine - coarse)
        if floor is None:
            floor = 1e-14 * max(float(np.sum(np.abs(fine))), 1e-300)
        ok = diff <= PANEL_REL_TOL * np.abs(fine) + floor
        total += float(np.sum(fine[ok]))
        error += float(np.sum(diff[ok]))
        if np.all(ok):
            break
        if depth == MAX_BISECTIONS:
            total += float(np.sum(fine[~ok]))
            error += float(np.sum(diff[~ok]))
            exhausted = True
            break
        mid = 0.5 * (lo[~ok] + hi[~ok])
        lo, hi = np.concatenate((lo[~ok], mid)), np.concatenate((mid, hi[~ok]))
    achieved = error / max(abs(total), 1e-300)
    if total != 0.0 and achieved > QUAD_REL_TOL:
        raise QuadratureError(f"cap quadrature t={t!r} r={r!r} did not converge", achieved)
    if exhausted:
        log.warning("cap quadrature t=%.4g r=%.4g used all %d bisections; accepted at %.2e",
                    t, r, MAX_BISECTIONS, achieved)
    elif error > 0 and achieved > PANEL_REL_TOL:
        log.debug("cap quadrature t=%.4g r=%.4g accepted at %.2e", t, r, achieved)
    return total


def quad_radial_ball(dim: Dimension, t: float, r: float, g, s_min: float = 0.0,
                     s_max: float = math.inf) -> float:
    """int_{B(x,r)} g(d(0,y)) dmu(y) for d(0,x) = t.

    Equals Omega_n int g(s) sinh^{n-1}(s) cap_fraction(s,t,r) ds over
    [max(0, t-r), t+r], restricted to [s_min, s_max] where g is known to vanish
    outside. Splits at |t-r| (cap kink) and at g's knots.
    """
    if not r > 0:
        raise DomainError(f"ball radius must be positive, got {r!r}")
    if t < 0:
        raise DomainError(f"center offset must be >= 0, got {t!r}")
    support = getattr(g, "support_radius", math.inf)
    upper = min(t + r, s_max, support)
    knots = _knots_of(g)
    total = 0.0
    if r > t:
        # the whole sphere S(0, s) lies in the ball for s <= r - t
        a, b = max(0.0, s_min), min(r - t, upper)
        if b > a:
            total += radial_integral(dim, g, a, b, knots)
    a, b = max(abs(t - r), s_min), upper
    if b > a:
        total += dim.omega_n * _cap_integral(dim, t, r, g, a, b, knots)
    return total
