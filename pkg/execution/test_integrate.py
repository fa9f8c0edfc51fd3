import math
from itertools import islice

import numpy as np
import pytest
from scipy.stats import kstest

from funcops import RadialProfile
from hypgeo import (
    Dimension,
    DomainError,
    HPoint,
    axis_point,
    ball_volume,
    ball_volumes,
    hdist,
    minkowski_dot,
    origin,
    origin_distance,
)
from integrate import (
    CHUNK_SIZE,
    McConfig,
    McEstimate,
    NonFiniteIntegrandError,
    mc_integrate_ball,
    quad_radial_ball,
    radial_integral,
    radial_integral_many,
    resolve_workers,
    sample_ball_array,
    sample_ball_uniform,
)

D2 = Dimension(2)
D3 = Dimension(3)


def _ones(s):
    return np.ones_like(s)


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kwargs", [
    {"seed": -1},
    {"seed": 2**64},
    {"seed": 0, "samples": 0},
    {"seed": 0, "workers": 0},
])
def test_mc_config_validation(kwargs):
    with pytest.raises(ValueError):
        McConfig(**kwargs)


def test_resolve_workers_respects_env(monkeypatch):
    monkeypatch.setenv("HYPMAX_THREADS", "1")
    assert resolve_workers(8) == 1
    monkeypatch.setenv("HYPMAX_THREADS", "lots")
    assert resolve_workers(1) == 1


def test_estimate_agreement():
    est = McEstimate(10.0, 0.5, 100)
    assert est.agrees_with(11.0)
    assert not est.agrees_with(12.0)
    assert McEstimate.exact(2.0).agrees_with(2.0)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def test_samples_deterministic_and_worker_independent():
    a = sample_ball_array(D2, axis_point(D2, 1.0), 1.5, McConfig(seed=7, samples=20_000, workers=1))
    b = sample_ball_array(D2, axis_point(D2, 1.0), 1.5, McConfig(seed=7, samples=20_000, workers=4))
    assert np.array_equal(a, b)


def test_samples_prefix_stable():
    short = sample_ball_array(D3, origin(D3), 1.0, McConfig(seed=3, samples=100))
    long = sample_ball_array(D3, origin(D3), 1.0, McConfig(seed=3, samples=CHUNK_SIZE + 50))
    assert np.array_equal(short, long[:100])


def test_samples_lie_in_ball():
    center = axis_point(D3, 2.0)
    pts = sample_ball_array(D3, center, 1.25, McConfig(seed=1, samples=5_000))
    inner = minkowski_dot(pts, center.coords)
    assert np.all(inner <= math.cosh(1.25) * (1 + 1e-9))
    assert np.allclose(minkowski_dot(pts, pts), 1.0, rtol=0, atol=1e-8)


@pytest.mark.parametrize("dim", [D2, D3])
def test_radial_law_is_uniform(dim):
    n = 40_000
    pts = sample_ball_array(dim, origin(dim), 1.0, McConfig(seed=11, samples=n))
    frac = float(np.mean(origin_distance(pts) <= 0.5))
    expected = ball_volume(dim, 0.5) / ball_volume(dim, 1.0)
    assert abs(frac - expected) <= 4 * math.sqrt(expected * (1 - expected) / n)


@pytest.mark.parametrize("dim,t,r", [(D2, 0.0, 2.0), (D3, 0.0, 1.5), (D2, 3.0, 1.0)])
def test_radius_passes_ks_against_volume_law(dim, t, r):
    center = axis_point(dim, t)
    pts = sample_ball_array(dim, center, r, McConfig(seed=17, samples=100_000))
    radii = np.arccosh(np.maximum(minkowski_dot(pts, center.coords), 1.0))
    total = ball_volume(dim, r)
    result = kstest(radii, lambda rho: ball_volumes(dim, np.minimum(rho, r)) / total)
    assert result.pvalue > 0.01


def test_uniform_stream_matches_array():
    center = axis_point(D2, 1.0)
    mc = McConfig(seed=5, samples=300)
    head = list(islice(sample_ball_uniform(D2, center, 2.0, mc), 100))
    again = list(islice(sample_ball_uniform(D2, center, 2.0, mc), 100))
    assert len(head) == 100
    assert all(isinstance(p, HPoint) for p in head)
    assert [p.coords.tolist() for p in head] == [p.coords.tolist() for p in again]
    assert np.array_equal(np.array([p.coords for p in head]), sample_ball_array(D2, center, 2.0, mc)[:100])
    assert all(hdist(p, center) <= 2.0 + 1e-9 for p in head)


def test_sampling_rejects_bad_radius():
    with pytest.raises(DomainError):
        sample_ball_array(D2, origin(D2), 0.0, McConfig(seed=0, samples=10))


# ---------------------------------------------------------------------------
# Monte Carlo integration
# ---------------------------------------------------------------------------


def test_mc_constant_integrand_is_exact():
    est = mc_integrate_ball(D2, axis_point(D2, 3.0), 2.0, lambda c: np.ones(len(c)),
                            McConfig(seed=0, samples=1_000))
    assert est.value == pytest.approx(ball_volume(D2, 2.0), rel=1e-12)
    assert est.stderr == 0.0


def test_mc_matches_quadrature_on_intersection():
    ind = RadialProfile.indicator(1.0)
    exact = quad_radial_ball(D2, 1.5, 1.0, ind)
    est = mc_integrate_ball(D2, axis_point(D2, 1.5), 1.0,
                            lambda c: ind(origin_distance(c)), McConfig(seed=2, samples=40_000))
    assert est.agrees_with(exact, sigmas=4)


def test_mc_non_finite_integrand():
    with pytest.raises(NonFiniteIntegrandError):
        mc_integrate_ball(D2, origin(D2), 1.0, lambda c: np.full(len(c), np.inf),
                          McConfig(seed=0, samples=10))


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("dim", [D2, D3])
@pytest.mark.parametrize("r", [0.3, 1.0, 6.0])
def test_radial_integral_of_one_is_volume(dim, r):
    assert radial_integral(dim, _ones, 0.0, r) == pytest.approx(ball_volume(dim, r), rel=1e-10)


def test_radial_integral_many_sums_intervals():
    total = radial_integral_many(D2, _ones, [0.0, 2.0], [1.0, 3.0])
    expected = ball_volume(D2, 1.0) + ball_volume(D2, 3.0) - ball_volume(D2, 2.0)
    assert total == pytest.approx(expected, rel=1e-10)
    assert radial_integral_many(D2, _ones, [1.0], [0.5]) == 0.0


@pytest.mark.parametrize("dim", [D2, D3])
@pytest.mark.parametrize("t,r", [(0.0, 1.0), (0.5, 1.0), (1.0, 1.0), (4.0, 2.5), (10.0, 3.0)])
def test_ball_of_ones_has_full_volume(dim, t, r):
    assert quad_radial_ball(dim, t, r, _ones) == pytest.approx(ball_volume(dim, r), rel=1e-8)


@pytest.mark.parametrize("dim", [D2, D3])
@pytest.mark.parametrize("a,b,t", [(1.0, 1.0, 0.0), (1.0, 2.0, 1.5), (0.5, 3.0, 2.0), (2.0, 2.0, 3.5)])
def test_intersection_is_symmetric(dim, a, b, t):
    # mu(B(0,a) & B(x,b)) == mu(B(0,b) & B(x,a))
    lhs = quad_radial_ball(dim, t, b, RadialProfile.indicator(a))
    rhs = quad_radial_ball(dim, t, a, RadialProfile.indicator(b))
    assert lhs == pytest.approx(rhs, rel=1e-8)


def test_coincident_balls_ratio():
    mass = quad_radial_ball(D2, 0.0, 1.0, RadialProfile.indicator(1.0))
    assert mass / math.exp(1.0) == pytest.approx(1.2553, abs=1e-4)


def test_disjoint_balls_have_zero_mass():
    assert quad_radial_ball(D3, 5.0, 1.0, RadialProfile.indicator(2.0)) == 0.0


def test_shell_window_restricts_range():
    inner = quad_radial_ball(D2, 0.0, 2.0, _ones, s_min=1.0, s_max=1.5)
    assert inner == pytest.approx(ball_volume(D2, 1.5) - ball_volume(D2, 1.0), rel=1e-10)


def test_quadrature_non_finite_integrand():
    with pytest.raises(NonFiniteIntegrandError):
        quad_radial_ball(D2, 1.0, 1.0, lambda s: np.full_like(s, np.nan))


def test_quadrature_rejects_bad_geometry():
    with pytest.raises(DomainError):
        quad_radial_ball(D2, 1.0, 0.0, _ones)
    with pytest.raises(DomainError):
        quad_radial_ball(D2, -1.0, 1.0, _ones)


def _seeded_profile(rng):
    if rng.random() < 0.5:
        top = float(rng.uniform(0.5, 3.0))
        return RadialProfile((0.0, top), (float(rng.uniform(0.5, 3.0)), 0.0), "linear", top)
    cells = np.sort(rng.choice(6, size=int(rng.integers(1, 4)), replace=False))
    return RadialProfile.shells([(0.5 * c, 0.5 * (c + 1)) for c in cells])


def test_seeded_radial_integrands_quad_vs_mc():
    within, worst = 0, 0.0
    for seed in range(20):
        rng = np.random.default_rng(200 + seed)
        dim = D2 if seed % 2 == 0 else D3
        g = _seeded_profile(rng)
        t, r = float(rng.uniform(0.0, 3.0)), float(rng.uniform(0.5, 2.5))
        exact = quad_radial_ball(dim, t, r, g)
        est = mc_integrate_ball(dim, axis_point(dim, t), r, lambda c, g=g: g(origin_distance(c)),
                                McConfig(seed=seed, samples=20_000))
        within += int(est.agrees_with(exact, sigmas=3))
        if est.stderr:
            worst = max(worst, abs(est.value - exact) / est.stderr)
    assert within >= 18
    assert worst <= 5.0
