import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypgeo import (
    GROWTH_BRACKETS,
    INTERSECTION_CONSTANTS,
    AnnulusIndex,
    BallSpec,
    Dimension,
    DomainError,
    HPoint,
    InvalidPointError,
    annulus_bounds,
    annulus_of,
    axis_point,
    ball_volume,
    ball_volumes,
    boost_from_origin,
    cap_fraction,
    distance_to_origin,
    growth_bracket,
    hdist,
    intersection_bound_ratio,
    origin,
    radial_point,
    sphere_area,
)
from integrate import McConfig

D2 = Dimension(2)
D3 = Dimension(3)


def _direction(n, seed):
    v = np.random.default_rng(seed).normal(size=n)
    return v / np.linalg.norm(v)


points = st.builds(
    lambda t, seed: radial_point(t, _direction(2, seed)),
    st.floats(0.0, 6.0),
    st.integers(0, 2**32 - 1),
)


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("n", [0, 1, 2.5, True])
def test_dimension_rejects_bad_n(n):
    with pytest.raises(DomainError):
        Dimension(n)


def test_omega_matches_circle_and_sphere():
    assert D2.omega_n == pytest.approx(2 * math.pi)
    assert D3.omega_n == pytest.approx(4 * math.pi)


def test_point_off_hyperboloid_rejected():
    with pytest.raises(InvalidPointError):
        HPoint([1.0, 1.0, 0.0])
    with pytest.raises(InvalidPointError):
        HPoint([-1.0, 0.0, 0.0])
    with pytest.raises(InvalidPointError):
        HPoint([1.0, 0.0])


def test_ball_and_annulus_validation():
    with pytest.raises(DomainError):
        BallSpec(origin(D2), 0.0)
    with pytest.raises(DomainError):
        AnnulusIndex(0)
    assert AnnulusIndex(3).bounds == (2.0, 3.0)


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("t", [0.0, 1e-8, 0.5, 3.0, 20.0])
def test_axis_point_distance(t):
    assert hdist(origin(D2), axis_point(D2, t)) == pytest.approx(t, rel=1e-12, abs=1e-15)
    assert distance_to_origin(axis_point(D3, t)) == pytest.approx(t, rel=1e-12, abs=1e-15)


def test_nearby_points_keep_relative_precision():
    x = axis_point(D2, 5.0)
    y = axis_point(D2, 5.0 + 1e-9)
    assert hdist(x, y) == pytest.approx(1e-9, rel=1e-5)


def test_dimension_mismatch():
    with pytest.raises(InvalidPointError):
        hdist(origin(D2), origin(D3))


@settings(max_examples=60, deadline=None)
@given(points, points, points)
def test_metric_axioms(x, y, z):
    assert hdist(x, x) == 0.0
    assert hdist(x, y) == pytest.approx(hdist(y, x), rel=1e-12, abs=1e-12)
    assert hdist(x, z) <= hdist(x, y) + hdist(y, z) + 1e-9


def _poincare_distance(x, y):
    u = x.coords[1:] / (1.0 + x.coords[0])
    v = y.coords[1:] / (1.0 + y.coords[0])
    gap = float(np.sum((u - v) ** 2))
    return math.acosh(1.0 + 2.0 * gap / ((1.0 - float(u @ u)) * (1.0 - float(v @ v))))


@settings(max_examples=60, deadline=None)
@given(points, points)
def test_distance_matches_poincare_disk(x, y):
    assert hdist(x, y) == pytest.approx(_poincare_distance(x, y), rel=1e-7, abs=1e-6)


@pytest.mark.parametrize("direction", [[2.0, 0.0], [0.6, 0.8001], [0.0, 0.0], [0.5, 0.5, 0.5]])
def test_radial_point_needs_unit_direction(direction):
    with pytest.raises(DomainError):
        radial_point(1.0, direction)


@settings(max_examples=40, deadline=None)
@given(points, points, st.floats(0.0, 4.0), st.integers(0, 1000))
def test_boost_is_isometry(x, y, t, seed):
    c = radial_point(t, _direction(2, seed))
    moved = boost_from_origin(c, np.vstack([x.coords, y.coords]))
    assert hdist(HPoint(moved[0]), HPoint(moved[1])) == pytest.approx(hdist(x, y), rel=1e-8, abs=1e-8)


def test_boost_carries_origin_to_center():
    c = axis_point(D3, 2.5)
    image = boost_from_origin(c, origin(D3).coords)[0]
    assert np.allclose(image, c.coords)


def test_annulus_membership():
    assert annulus_of(axis_point(D2, 1.0)).j == 1
    assert annulus_of(axis_point(D2, 1.5)).j == 2
    assert annulus_of(axis_point(D2, 0.01)).j == 1
    with pytest.raises(DomainError):
        annulus_of(origin(D2))


def test_annulus_bounds_contain_member():
    for t in (0.3, 1.0, 2.5, 7.9):
        lo, hi = annulus_bounds(annulus_of(axis_point(D3, t)))
        assert lo < t <= hi
        assert hi - lo == 1.0


@pytest.mark.parametrize("s", [0.1, 1.0, 4.0])
def test_sphere_area_is_volume_derivative(s):
    assert sphere_area(D2, s) == pytest.approx(2 * math.pi * math.sinh(s), rel=1e-12)
    assert sphere_area(D3, s) == pytest.approx(4 * math.pi * math.sinh(s) ** 2, rel=1e-12)
    h = 1e-4
    for dim in (D2, D3):
        slope = (ball_volume(dim, s + h) - ball_volume(dim, s - h)) / (2 * h)
        assert slope == pytest.approx(sphere_area(dim, s), rel=1e-6)


# ---------------------------------------------------------------------------
# Volumes
# ---------------------------------------------------------------------------


def test_ball_volume_reference_values():
    assert ball_volume(D2, 1.0) == pytest.approx(3.41229, rel=1e-5)
    assert ball_volume(D2, 2.0) == pytest.approx(17.3559, rel=1e-5)
    assert ball_volume(D3, 1.0) == pytest.approx(5.1110, rel=1e-4)


@pytest.mark.parametrize("r", [0.01, 0.5, 1.0, 7.0, 24.0, 30.0, 60.0])
def test_closed_forms(r):
    assert ball_volume(D2, r) == pytest.approx(4 * math.pi * math.sinh(r / 2) ** 2, rel=1e-9)
    assert ball_volume(D3, r) == pytest.approx(math.pi * (math.sinh(2 * r) - 2 * r), rel=1e-9)


def test_vectorised_volumes_match_scalar():
    radii = np.array([[0.1, 1.0], [5.0, 26.0]])
    out = ball_volumes(D3, radii)
    assert out.shape == radii.shape
    for r, v in zip(radii.ravel(), out.ravel()):
        assert v == pytest.approx(ball_volume(D3, float(r)), rel=1e-10)


def test_volume_rejects_negative_radius():
    with pytest.raises(DomainError):
        ball_volume(D2, -1.0)


@pytest.mark.parametrize("dim", [D2, D3])
def test_growth_bracket(dim):
    lo, hi = GROWTH_BRACKETS[dim.n]
    ratios = growth_bracket(dim, np.linspace(0.01, 25.0, 100))
    assert all(lo <= x <= hi for x in ratios)


# ---------------------------------------------------------------------------
# Caps
# ---------------------------------------------------------------------------


def test_cap_fraction_extremes():
    assert cap_fraction(D2, 0.5, 1.0, 2.0) == 1.0
    assert cap_fraction(D2, 0.5, 3.0, 1.0) == 0.0
    assert cap_fraction(D3, 5.0, 1.0, 2.0) == 0.0


def test_cap_fraction_equal_radii():
    # cos(phi) = cosh(1) / (cosh(1) + 1)
    phi = math.acos(math.cosh(1.0) / (math.cosh(1.0) + 1.0))
    assert cap_fraction(D2, 1.0, 1.0, 1.0) == pytest.approx(phi / math.pi, rel=1e-12)
    assert cap_fraction(D2, 1.0, 1.0, 1.0) == pytest.approx(0.29244, abs=1e-5)


def test_cap_fraction_three_dims_matches_height_formula():
    # S^2 caps: fraction = (1 - cos(phi)) / 2
    s, t, r = 1.3, 0.8, 1.1
    cos_phi = (math.cosh(t) * math.cosh(s) - math.cosh(r)) / (math.sinh(t) * math.sinh(s))
    assert cap_fraction(D3, s, t, r) == pytest.approx(0.5 * (1 - cos_phi), rel=1e-10)


def test_cap_fraction_is_vectorised():
    s = np.linspace(0.0, 4.0, 9)
    out = cap_fraction(D2, s, 1.5, 1.0)
    assert out.shape == s.shape
    assert np.all((out >= 0) & (out <= 1))


# ---------------------------------------------------------------------------
# Intersections
# ---------------------------------------------------------------------------


def test_coincident_balls_ratio():
    x = axis_point(D2, 0.7)
    est = intersection_bound_ratio(D2, x, 1.0, x, 1.0, McConfig(seed=1, samples=5000))
    assert est.value == pytest.approx(ball_volume(D2, 1.0) / math.e, rel=1e-9)
    assert est.value == pytest.approx(1.2553, abs=1e-3)
    assert est.stderr == 0.0


def test_disjoint_balls_ratio_is_exact_zero():
    est = intersection_bound_ratio(D2, origin(D2), 1.0, axis_point(D2, 2.5), 1.0, McConfig(seed=1))
    assert est.value == 0.0 and est.stderr == 0.0


def test_intersection_ratio_validation():
    with pytest.raises(DomainError):
        intersection_bound_ratio(D2, origin(D2), 0.0, origin(D2), 1.0, McConfig(seed=1))
    with pytest.raises(InvalidPointError):
        intersection_bound_ratio(D2, origin(D3), 1.0, origin(D2), 1.0, McConfig(seed=1))


def test_intersection_ratio_below_frozen_constant():
    rng = np.random.default_rng(2024)
    for _ in range(10):
        r, s = rng.uniform(0.1, 4.0, size=2)
        d = rng.uniform(0.0, r + s)
        est = intersection_bound_ratio(D2, origin(D2), r, axis_point(D2, d), s,
                                       McConfig(seed=int(rng.integers(0, 2**32)), samples=4000))
        assert 0.0 <= est.value <= INTERSECTION_CONSTANTS[2] + 3 * est.stderr


def test_intersection_ratio_logs_large_stderr(caplog):
    with caplog.at_level("WARNING", logger="hypgeo"):
        intersection_bound_ratio(D2, origin(D2), 1.0, axis_point(D2, 1.0), 1.0,
                                 McConfig(seed=3, samples=50), tol=1e-6)
    assert "above tolerance" in caplog.text
