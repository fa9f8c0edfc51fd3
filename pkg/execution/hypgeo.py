"""
Geometry and measure kernel for hyperbolic space H^n.

Points live on the upper sheet of the hyperboloid x0^2 - |x|^2 = 1 in R^{n+1}.
Every measure computation in the package reduces to a one-dimensional integral
in the distance s from a center, against the volume element
Omega_n * sinh^{n-1}(s) ds.

Typical flow:
    dim = Dimension(2)
    x = axis_point(dim, 3.0)
    hdist(origin(dim), x)             # 3.0
    ball_volume(dim, 1.0)             # 2*pi*(cosh 1 - 1)
    cap_fraction(dim, s=1, t=1, r=1)  # share of S(0,1) inside B(x,1)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate as sp_integrate
from scipy import special

log = logging.getLogger(__name__)

POINT_TOL = 1e-10
QUAD_ABS_TOL = 1e-10
QUAD_REL_TOL = 1e-9
LOG_SPACE_RADIUS = 25.0  # radii above this integrate sinh^{n-1} scaled by e^{-(n-1)r}
VOLUME_PANEL = 0.5
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)

# Frozen (c1, c2) with c1 <= V(r) / [(r^n/(1+r^n)) e^{(n-1)r}] <= c2 on r in [0.01, 25].
GROWTH_BRACKETS = {
    2: (1.0, 5.0),
    3: (1.0, 5.0),
}

# Frozen bound on mu(B(x,r) & B(y,s)) / e^{(n-1)(r+s-d)/2} found by seeded sweeps.
INTERSECTION_CONSTANTS = {
    2: 10.0,
    3: 10.0,
}


class InvalidPointError(ValueError):
    """Coordinates that do not describe a point of the hyperboloid."""


class DomainError(ValueError):
    """Argument outside the domain of a geometric quantity."""


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _omega(n: int) -> float:
    return 2.0 * math.pi ** (n / 2.0) / special.gamma(n / 2.0)


@dataclass(frozen=True)
class Dimension:
    """Dimension n >= 2 together with the area of the unit sphere S^{n-1}."""

    n: int
    omega_n: float = field(init=False, repr=False)

    def __post_init__(self):
        if isinstance(self.n, bool) or not isinstance(self.n, (int, np.integer)) or self.n < 2:
            raise DomainError(f"dimension must be an integer >= 2, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "omega_n", _omega(int(self.n)))


@dataclass(frozen=True, eq=False)
class HPoint:
    """A point in hyperboloid coordinates (x0, x1, ..., xn)."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        if c.ndim != 1 or c.size < 3:
            raise InvalidPointError(f"expected n+1 >= 3 coordinates, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InvalidPointError("coordinates must be finite")
        norm = c[0] * c[0] - float(c[1:] @ c[1:])
        if c[0] < 1.0 - POINT_TOL or abs(norm - 1.0) > POINT_TOL * max(1.0, c[0] * c[0]):
            raise InvalidPointError(f"not on the hyperboloid: x0={c[0]!r}, <x,x>={norm!r}")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def n(self) -> int:
        return self.coords.size - 1

    def __repr__(self) -> str:
        return f"HPoint({np.array2string(self.coords, precision=6)})"


@dataclass(frozen=True, eq=False)
class BallSpec:
    center: HPoint
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"ball radius must be positive, got {self.radius!r}")
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True)
class AnnulusIndex:
    """C_j = {x : j-1 < d(0,x) <= j}; C_1 is the unit ball without the origin."""

    j: int

    def __post_init__(self):
        if isinstance(self.j, bool) or not isinstance(self.j, (int, np.integer)) or self.j < 1:
            raise DomainError(f"annulus index must be an integer >= 1, got {self.j!r}")
        object.__setattr__(self, "j", int(self.j))

    @property
    def bounds(self) -> tuple[float, float]:
        return float(self.j - 1), float(self.j)


# ---------------------------------------------------------------------------
# Points and distances
# ---------------------------------------------------------------------------


def origin(dim: Dimension) -> HPoint:
    coords = np.zeros(dim.n + 1)
    coords[0] = 1.0
    return HPoint(coords)


def minkowski_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray | float:
    """a0*b0 - sum(ai*bi), broadcasting over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 0] - np.sum(a[..., 1:] * b[..., 1:], axis=-1)


def hdist(x: HPoint, y: HPoint) -> float:
    """Geodesic distance arccosh(<x,y>) evaluated in the half-angle form.

    2*asinh(sqrt((<x,y> - 1)/2)) keeps full relative precision for nearby
    points, where arccosh is badly conditioned.
    """
    if x.n != y.n:
        raise InvalidPointError(f"dimension mismatch: {x.n} vs {y.n}")
    inner = float(minkowski_dot(x.coords, y.coords))
    if inner < 1.0 - POINT_TOL * max(1.0, x.coords[0] * y.coords[0]):
        raise InvalidPointError(f"Minkowski product {inner!r} < 1")
    diff = x.coords - y.coords
    gap = 0.5 * (float(diff[1:] @ diff[1:]) - diff[0] * diff[0])  # = <x,y> - 1
    if gap <= 0.0:
        return 0.0
    return 2.0 * math.asinh(math.sqrt(0.5 * gap))


def origin_distance(coords: np.ndarray) -> np.ndarray:
    """d(0, x) for an array of coordinates, from sinh d = |spatial part|."""
    coords = np.asarray(coords, dtype=float)
    return np.arcsinh(np.linalg.norm(coords[..., 1:], axis=-1))


def distance_to_origin(x: HPoint) -> float:
    return float(origin_distance(x.coords))


def radial_point(t: float, direction) -> HPoint:
    """The point at distance t from the origin along a unit direction of R^n."""
    if t < 0:
        raise DomainError(f"radial distance must be >= 0, got {t!r}")
    u = np.asarray(direction, dtype=float)
    if u.ndim != 1 or u.size < 2:
        raise DomainError(f"direction must be a vector in R^n with n >= 2, got shape {u.shape}")
    if abs(float(np.linalg.norm(u)) - 1.0) > POINT_TOL:
        raise DomainError(f"direction must be a unit vector, |u| = {np.linalg.norm(u)!r}")
    coords = np.empty(u.size + 1)
    coords[0] = math.cosh(t)
    coords[1:] = math.sinh(t) * u
    return HPoint(coords)


def axis_point(dim: Dimension, t: float) -> HPoint:
    """radial_point along e1."""
    e1 = np.zeros(dim.n)
    e1[0] = 1.0
    return radial_point(t, e1)


def boost_from_origin(center: HPoint, coords: np.ndarray) -> np.ndarray:
    """Apply the Lorentz boost taking the origin to `center`, row-wise.

    The boost fixes the plane orthogonal to the center's spatial direction,
    so it is an exact isometry carrying B(0, r) onto B(center, r).
    """
    c0 = center.coords[0]
    cv = center.coords[1:]
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    x0 = coords[:, 0]
    xv = coords[:, 1:]
    proj = xv @ cv
    out = np.empty_like(coords)
    out[:, 0] = c0 * x0 + proj
    out[:, 1:] = xv + np.outer(x0 + proj / (1.0 + c0), cv)
    return out


def annulus_of(x: HPoint) -> AnnulusIndex:
    d = distance_to_origin(x)
    if d <= 0.0:
        raise DomainError("the origin belongs to no annulus")
    # Points on a sphere of integer radius j belong to C_j; absorb rounding.
    return AnnulusIndex(max(1, math.ceil(d - POINT_TOL)))


def annulus_bounds(index: AnnulusIndex) -> tuple[float, float]:
    return index.bounds


# ---------------------------------------------------------------------------
# Volumes
# ---------------------------------------------------------------------------


def sphere_area(dim: Dimension, s):
    """Area of the geodesic sphere S(0, s)."""
    return dim.omega_n * np.sinh(s) ** (dim.n - 1)


@lru_cache(maxsize=65536)
def _ball_volume(n: int, r: float) -> float:
    m = n - 1
    omega = _omega(n)
    if r <= LOG_SPACE_RADIUS:
        val, err = sp_integrate.quad(
            lambda s: math.sinh(s) ** m, 0.0, r,
            epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL, limit=200,
        )
        return omega * val
    # sinh^m(s) = e^{ms} ((1 - e^{-2s})/2)^m, integrated against e^{-mr}
    val, err = sp_integrate.quad(
        lambda s: (-0.5 * math.expm1(-2.0 * s)) ** m * math.exp(m * (s - r)), 0.0, r,
        epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL, limit=200,
    )
    return omega * val * math.exp(m * r)


def ball_volume(dim: Dimension, r: float) -> float:
    """mu_n(B(x, r)) = Omega_n * int_0^r sinh^{n-1}(t) dt by adaptive quadrature."""
    if r < 0:
        raise DomainError(f"radius must be >= 0, got {r!r}")
    if r == 0:
        return 0.0
    return _ball_volume(dim.n, float(r))


def ball_volumes(dim: Dimension, radii) -> np.ndarray:
    """Vectorised ball_volume on composite Gauss-Legendre panels of width 0.5."""
    r = np.asarray(radii, dtype=float)
    if np.any(r < 0):
        raise DomainError("radii must be >= 0")
    flat = r.ravel()
    if flat.size == 0:
        return np.zeros_like(r)
    m = dim.n - 1
    top = float(flat.max())
    n_panels = int(math.ceil(top / VOLUME_PANEL)) + 1
    edges = VOLUME_PANEL * np.arange(n_panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (b - a) * _GL_X[None, :] + 0.5 * (a + b)
    panel = 0.5 * (b[:, 0] - a[:, 0]) * (np.sinh(nodes) ** m @ _GL_W)
    cumulative = np.concatenate(([0.0], np.cumsum(panel)))

    k = np.minimum(np.floor(flat / VOLUME_PANEL).astype(int), n_panels - 1)
    lo = edges[k]
    half = 0.5 * (flat - lo)
    part_nodes = half[:, None] * (_GL_X[None, :] + 1.0) + lo[:, None]
    partial = half * (np.sinh(part_nodes) ** m @ _GL_W)
    return (dim.omega_n * (cumulative[k] + partial)).reshape(r.shape)


def growth_bracket(dim: Dimension, r_grid) -> list[float]:
    """V(r) / [(r^n/(1+r^n)) e^{(n-1)r}] for each radius."""
    out = []
    for r in r_grid:
        if not r > 0:
            raise DomainError(f"growth_bracket radii must be positive, got {r!r}")
        rn = float(r) ** dim.n
        comparator = rn / (1.0 + rn) * math.exp((dim.n - 1) * float(r))
        out.append(ball_volume(dim, float(r)) / comparator)
    return out


# ---------------------------------------------------------------------------
# Spherical caps
# ---------------------------------------------------------------------------


def _cap_measure(n: int, phi: np.ndarray, sin_sq: np.ndarray) -> np.ndarray:
    """Normalised area of a cap of angular radius phi on S^{n-1}."""
    if n == 2:
        return phi / math.pi
    half = 0.5 * special.betainc(0.5 * (n - 1), 0.5, np.clip(sin_sq, 0.0, 1.0))
    return np.where(phi <= 0.5 * math.pi, half, 1.0 - half)


def cap_fraction(dim: Dimension, s, t: float, r: float):
    """Fraction of the sphere S(0, s) lying inside B(x, r), where d(0, x) = t.

    The cap half-angle comes from the hyperbolic law of cosines. 1 - cos and
    1 + cos are formed as sinh products so neither side cancels.
    """
    s_arr = np.asarray(s, dtype=float)
    out = np.zeros(s_arr.shape)
    inside = r >= t + s_arr
    outside = ~inside & (r <= np.abs(t - s_arr))
    out[inside] = 1.0
    mid = ~(inside | outside)
    if np.any(mid):
        sm = s_arr[mid]
        denom = math.sinh(t) * np.sinh(sm)
        one_minus = 2.0 * np.sinh(0.5 * (r + t - sm)) * np.sinh(0.5 * (r - t + sm)) / denom
        one_plus = 2.0 * np.sinh(0.5 * (t + sm + r)) * np.sinh(0.5 * (t + sm - r)) / denom
        one_minus = np.clip(one_minus, 0.0, 2.0)
        one_plus = np.clip(one_plus, 0.0, 2.0)
        phi = 2.0 * np.arctan2(np.sqrt(one_minus), np.sqrt(one_plus))
        out[mid] = _cap_measure(dim.n, phi, one_minus * one_plus)
    if np.ndim(s) == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Ball intersections
# ---------------------------------------------------------------------------


def intersection_bound_ratio(dim: Dimension, x: HPoint, r: float, y: HPoint, s: float, mc,
                             tol: float | None = None):
    """mu(B(x,r) & B(y,s)) / e^{(n-1)(r+s-d(x,y))/2} as an McEstimate.

    Samples the smaller ball and counts hits in the larger one. Disjoint balls
    give an exact 0. A standard error above `tol` is logged, and always
    travels in the estimate.
    """
    from integrate import McEstimate, mc_integrate_ball

    if not (r > 0 and s > 0):
        raise DomainError(f"ball radii must be positive, got r={r!r}, s={s!r}")
    if x.n != dim.n or y.n != dim.n:
        raise InvalidPointError(f"points must lie in H^{dim.n}")
    d = hdist(x, y)
    if d >= r + s:
        return McEstimate.exact(0.0)
    (center, radius), (other, other_r) = sorted(((x, r), (y, s)), key=lambda b: b[1])
    threshold = math.cosh(other_r)
    other_coords = other.coords

    def _inside(coords):
        return (minkowski_dot(coords, other_coords) <= threshold).astype(float)

    est = mc_integrate_ball(dim, center, float(radius), _inside, mc)
    scale = math.exp((dim.n - 1) * (r + s - d) / 2.0)
    ratio = McEstimate(est.value / scale, est.stderr / scale, est.samples)
    if tol is not None and ratio.stderr > tol:
        log.warning("intersection ratio stderr %.3g above tolerance %.3g (samples=%d)",
                    ratio.stderr, tol, ratio.samples)
    return ratio
