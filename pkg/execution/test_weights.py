import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from funcops import EngineError, RadialProfile, SetSpec
from hypgeo import BallSpec, Dimension, axis_point, ball_volume, origin
from integrate import McConfig
from weights import (
    ExponentTriple,
    PreconditionError,
    WeightSpec,
    apq_global_scan,
    apq_loc_sup,
    cond_cj2_check,
    cond_cj_check,
    cond_cj_ratio,
    corollary_check,
    global_scan_verdict,
    params_from_delta,
    params_weak_only,
    shell_family,
    stabilization_verdict,
    strong_delta_bound,
    testing_condition_check,
    testing_condition_sweep,
    theta_windows,
    weight_eval,
    weight_profile,
)

D2 = Dimension(2)
TRIPLE = ExponentTriple.from_p(2, 1.0, 4.0 / 3.0)
ONE = WeightSpec.constant()


# ---------------------------------------------------------------------------
# Exponents
# ---------------------------------------------------------------------------


def test_triple_from_p():
    assert TRIPLE.q == pytest.approx(4.0)
    assert TRIPLE.p_prime == pytest.approx(4.0)
    assert TRIPLE.theta_weak_endpoint == pytest.approx(-1.0)
    assert ExponentTriple.from_p(2, 1.0, 1.0).p_prime == math.inf


@pytest.mark.parametrize("n,alpha,p", [(2, 1.0, 2.0), (2, 1.0, 0.5), (2, 2.0, 1.0), (1, 0.5, 1.0)])
def test_triple_rejects_out_of_range(n, alpha, p):
    with pytest.raises(PreconditionError):
        ExponentTriple.from_p(n, alpha, p)


def test_triple_checks_sobolev_relation():
    with pytest.raises(PreconditionError):
        ExponentTriple(2, 1.0, 4.0 / 3.0, 3.0)


def test_beta_gamma_at_zero_delta():
    bg = params_from_delta(TRIPLE, 0.0)
    assert bg.beta == pytest.approx(8.0 / 13.0)
    assert bg.gamma == pytest.approx(12.0 / 13.0)


def test_delta_at_bound_rejected():
    assert strong_delta_bound(TRIPLE) == pytest.approx(4.0 / 3.0)
    with pytest.raises(PreconditionError):
        params_from_delta(TRIPLE, 4.0 / 3.0)


def test_weak_only_params():
    assert params_weak_only(TRIPLE, 0.0).beta == pytest.approx(0.8)
    assert params_weak_only(TRIPLE, -1.0).gamma == pytest.approx(2.0 / 3.0)
    with pytest.raises(PreconditionError):
        params_weak_only(TRIPLE, 1.0)


@settings(max_examples=200, deadline=None)
@given(
    st.sampled_from([2, 3]),
    st.floats(0.05, 0.95),
    st.floats(0.0, 0.95),
    st.floats(-5.0, 0.999),
)
def test_params_always_admissible(n, a_frac, p_frac, d_frac):
    alpha = a_frac * n
    p = 1.0 + p_frac * (n / alpha - 1.0)
    assume(p < 0.95 * n / alpha)
    triple = ExponentTriple.from_p(n, alpha, p)
    bound = strong_delta_bound(triple)
    delta = d_frac * abs(bound) if d_frac < 0 else d_frac * bound
    assume(delta < bound)
    bg = params_from_delta(triple, delta)
    assert 0 < bg.beta < 1
    assert bg.beta <= bg.gamma + 1e-12
    assert bg.gamma < p
    if p == 1.0:
        assert bg.beta == pytest.approx(bg.gamma)


def test_theta_windows():
    strong, weak = theta_windows(TRIPLE)
    assert strong.lo == pytest.approx(-1.0 / 3.0)
    assert strong.hi == pytest.approx(4.0 / 3.0)
    assert weak.contains(-1.0) and not weak.contains(1.0)
    assert strong.contains(1.0)
    assert theta_windows(ExponentTriple.from_p(2, 1.0, 1.0))[0].lo == 0.0


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


def test_power_volume_weight():
    w = WeightSpec.power_volume(1.0, 4.0)
    assert weight_eval(w, origin(D2)) == 1.0
    expected = (1.0 + ball_volume(D2, 1.0)) ** -0.25
    assert weight_eval(w, axis_point(D2, 1.0)) == pytest.approx(expected, rel=1e-10)
    assert expected == pytest.approx(0.690, abs=1e-3)


def test_weight_monotone_in_theta_sign():
    t = np.linspace(0.0, 10.0, 21)
    assert np.all(np.diff(weight_profile(D2, WeightSpec.power_volume(1.0, 4.0), t)) < 0)
    assert np.all(np.diff(weight_profile(D2, WeightSpec.power_volume(-1.0, 4.0), t)) > 0)
    assert np.all(weight_profile(D2, ONE, t) == 1.0)


def test_weight_validation():
    with pytest.raises(ValueError):
        WeightSpec.constant(0.0)
    with pytest.raises(ValueError):
        WeightSpec.radial_table(RadialProfile((0.0, 1.0), (-1.0,)))
    with pytest.raises(ValueError):
        WeightSpec("bumpy")


def test_weight_extrema_on_step_table():
    w = WeightSpec.radial_table(RadialProfile((0.0, 1.0, 2.0, 10.0), (1.0, 0.0, 3.0)))
    assert w.extrema(D2, 0.0, 1.5) == (0.0, 1.0)
    assert w.extrema(D2, 1.5, 4.0) == (0.0, 3.0)


# ---------------------------------------------------------------------------
# A_{p,q}
# ---------------------------------------------------------------------------


def test_stabilization_verdict():
    assert stabilization_verdict(1.0, 1.04) == "bounded"
    assert stabilization_verdict(1.0, 1.2) == "inconclusive"
    assert stabilization_verdict(1.0, math.inf) == "diverging"


def test_constant_weight_is_apq():
    rep = apq_loc_sup(D2, ONE, TRIPLE)
    assert rep.sup_ratio == 1.0
    assert rep.verdict == "bounded"


def test_power_weight_local_apq_is_finite():
    rep = apq_loc_sup(D2, WeightSpec.power_volume(1.0, 4.0), TRIPLE)
    assert 1.0 - 1e-9 <= rep.sup_ratio < math.inf
    assert rep.verdict != "diverging"


def test_vanishing_weight_diverges():
    w = WeightSpec.radial_table(RadialProfile((0.0, 1.0, 2.0, 10.0), (1.0, 0.0, 1.0)))
    rep = apq_loc_sup(D2, w, TRIPLE)
    assert rep.verdict == "diverging"
    assert rep.sup_ratio == math.inf


def test_local_family_rejects_large_balls():
    with pytest.raises(PreconditionError):
        apq_loc_sup(D2, ONE, TRIPLE, [BallSpec(origin(D2), 3.0)])


def test_global_scan_constant_weight():
    rows = apq_global_scan(D2, ONE, TRIPLE, [5, 10, 20])
    assert [v for _, v in rows] == [1.0, 1.0, 1.0]
    assert global_scan_verdict(rows) == "bounded"


def test_global_scan_through_origin_grows():
    rows = apq_global_scan(D2, WeightSpec.power_volume(1.0, 4.0), TRIPLE, [5, 10, 20, 30],
                           placement="through_origin")
    values = [v for _, v in rows]
    assert all(b > a for a, b in zip(values, values[1:]))
    assert values[-1] > 10 * values[0]
    assert global_scan_verdict(rows) == "diverging"


def test_global_scan_validation():
    with pytest.raises(PreconditionError):
        apq_global_scan(D2, ONE, TRIPLE, [10, 5])
    with pytest.raises(ValueError):
        apq_global_scan(D2, ONE, TRIPLE, [5], placement="sideways")


# ---------------------------------------------------------------------------
# Annulus conditions
# ---------------------------------------------------------------------------


def test_cj_constant_weight_bounded():
    rep = cond_cj_check(D2, ONE, TRIPLE, 0.0, J=3, R=3, samples_per_cell=2, stabilize=False)
    assert rep.verdict == "bounded"
    assert 0 < rep.sup_ratio < 20
    j, l, r, t = rep.argmax_witness
    again = cond_cj_ratio(D2, ONE, TRIPLE, 0.0, j, l, r, t)
    assert again.value == pytest.approx(rep.sup_ratio, rel=1e-12)


def test_cj_stabilized_sweep_reports_both_sups():
    rep = cond_cj_check(D2, ONE, TRIPLE, 0.0, J=2, R=2, samples_per_cell=1)
    assert rep.coarse_ratio <= rep.sup_ratio
    assert rep.verdict in ("bounded", "inconclusive")


def test_cj_preconditions():
    w = WeightSpec.power_volume(-1.0, 4.0)
    assert cond_cj_check(D2, w, TRIPLE, -1.0, J=2, R=2, samples_per_cell=1).samples > 0
    with pytest.raises(PreconditionError):
        cond_cj_check(D2, w, TRIPLE, 4.0 / 3.0, J=2, R=2)
    with pytest.raises(PreconditionError):
        cond_cj2_check(D2, w, TRIPLE, 1.0, J=2, R=2)
    with pytest.raises(PreconditionError):
        cond_cj_check(D2, w, TRIPLE, 0.0, J=0, R=2)


def test_cj_ratio_quad_matches_mc():
    w = WeightSpec.power_volume(0.5, 4.0)
    exact = cond_cj_ratio(D2, w, TRIPLE, 0.5, 3, 2, 2, 2.5)
    est = cond_cj_ratio(D2, w, TRIPLE, 0.5, 3, 2, 2, 2.5, engine="mc",
                        mc=McConfig(seed=8, samples=40_000))
    assert exact.value > 0
    assert est.agrees_with(exact.value, sigmas=4)


# ---------------------------------------------------------------------------
# Testing condition
# ---------------------------------------------------------------------------


BG = params_from_delta(TRIPLE, 1.0)
W1 = WeightSpec.power_volume(1.0, 4.0)


def test_testing_condition_empty_sets():
    E = SetSpec.radial_union([(0.0, 1.0)])
    assert testing_condition_check(D2, W1, TRIPLE, BG, SetSpec.empty(), E, 1.0).sup_ratio == 0.0
    assert testing_condition_check(D2, W1, TRIPLE, BG, E, SetSpec.empty(), 2.0).sup_ratio == 0.0


def test_testing_condition_radius_below_one():
    E = SetSpec.radial_union([(0.0, 1.0)])
    with pytest.raises(PreconditionError):
        testing_condition_check(D2, W1, TRIPLE, BG, E, E, 0.5)


def test_testing_condition_quad_matches_mc():
    E = SetSpec.radial_union([(0.0, 1.0)])
    F = SetSpec.radial_union([(1.0, 2.0)])
    quad = testing_condition_check(D2, W1, TRIPLE, BG, E, F, 1.0)
    mc = testing_condition_check(D2, W1, TRIPLE, BG, E, F, 1.0, engine="mc",
                                 mc=McConfig(seed=6, samples=40_000))
    assert quad.sup_ratio > 0
    assert mc.stderr > 0
    assert abs(mc.sup_ratio - quad.sup_ratio) <= 4 * mc.stderr + 1e-3 * quad.sup_ratio


def test_testing_condition_off_center_ball_needs_mc():
    E = SetSpec.ball_at(1.0, 0.5)
    F = SetSpec.radial_union([(0.0, 2.0)])
    with pytest.raises(EngineError):
        testing_condition_check(D2, W1, TRIPLE, BG, E, F, 1.0)
    rep = testing_condition_check(D2, W1, TRIPLE, BG, E, F, 1.0, engine="mc",
                                  mc=McConfig(seed=1, samples=10_000))
    assert rep.sup_ratio > 0


def _describe(family):
    return [(E.kind, E.shells, E.offset, E.radius, F.shells) for E, F in family]


def test_shell_family_is_prefix_stable():
    short = shell_family(3, 5)
    long = shell_family(3, 10)
    assert _describe(short) == _describe(long[:5])
    assert short[0][0].shells == ((0.0, 4.0),)


@pytest.mark.parametrize("max_radius", [2.0, 4.0, 8.0])
def test_shell_family_mixes_off_center_balls(max_radius):
    family = shell_family(1, 20, max_radius=max_radius)
    balls = [i for i, (E, _) in enumerate(family) if E.kind == "ball_at"]
    assert balls == [4, 9, 14, 19]
    for E, F in family:
        assert E.outer_radius() <= max_radius and F.outer_radius() <= max_radius
        assert F.kind == "radial_union" and 1 <= len(F.shells) <= 4
    for i in balls:
        E = family[i][0]
        assert E.offset > 0 and E.profile() is None


def test_shell_family_validation():
    with pytest.raises(PreconditionError):
        shell_family(0, 0)
    with pytest.raises(PreconditionError):
        shell_family(0, 5, max_radius=0.2)
    with pytest.raises(PreconditionError):
        shell_family(0, 5, ball_every=0)
    assert all(E.kind == "radial_union" for E, _ in shell_family(0, 10, max_radius=0.5))


def test_testing_sweep_witness_reproduces():
    family = shell_family(0, 4)
    rep = testing_condition_sweep(D2, W1, TRIPLE, BG, family, r_values=(1, 2))
    assert math.isfinite(rep.sup_ratio) and rep.sup_ratio > 0
    i, r = rep.argmax_witness
    E, F = family[i]
    assert testing_condition_check(D2, W1, TRIPLE, BG, E, F, r).sup_ratio == pytest.approx(rep.sup_ratio)


def test_testing_sweep_routes_balls_through_mc():
    mc = McConfig(seed=4, samples=4_000)
    family = shell_family(2, 5, max_radius=3.0)
    E, F = family[4]
    assert E.kind == "ball_at"
    rep = testing_condition_sweep(D2, W1, TRIPLE, BG, family, r_values=(1, 2), mc=mc)
    ball = max(testing_condition_check(D2, W1, TRIPLE, BG, E, F, r, engine="mc", mc=mc).sup_ratio
               for r in (1.0, 2.0))
    assert 0 < ball <= rep.sup_ratio
    assert rep.samples == 10
    again = testing_condition_sweep(D2, W1, TRIPLE, BG, family, r_values=(1, 2), mc=mc)
    assert again.sup_ratio == rep.sup_ratio


def test_testing_sweep_default_family_follows_max_radius():
    rep = testing_condition_sweep(D2, W1, TRIPLE, BG, r_values=(1,), seed=3, count=2, max_radius=2.0)
    family = shell_family(3, 2, max_radius=2.0)
    assert family[0][0].shells == ((0.0, 2.0),)
    assert rep.sup_ratio == pytest.approx(max(
        testing_condition_check(D2, W1, TRIPLE, BG, E, F, 1.0).sup_ratio for E, F in family))


def test_corollary_constant_weight():
    rep = corollary_check(D2, ONE, TRIPLE, "strong", J=3, R=3, stabilize=False)
    assert rep.verdict == "bounded"
    assert rep.params.beta == pytest.approx(8.0 / 13.0)
    weak = corollary_check(D2, ONE, TRIPLE, "weak", J=3, R=3, stabilize=False)
    assert weak.params.beta == pytest.approx(0.8)
