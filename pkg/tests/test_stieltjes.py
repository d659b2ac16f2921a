import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdeflate._validation import DomainError
from tdeflate.stieltjes import (
    RatioProfile,
    closed_form_g,
    eval_f,
    eval_g,
    eval_g_derivative,
    eval_h,
    eval_q,
    kernel_terms,
    support_edge,
)

EQ3 = RatioProfile.equal(3)
GENERAL = RatioProfile((0.5, 0.25, 0.25))


def fixed_point_diverges(z, c, max_iter=400_000):
    """Undamped iteration of the per-mode quadratics; True when it runs off.

    Each ``g_i`` takes the root of ``g_i^2 - (g + z) g_i - c_i = 0`` that
    is negative for large ``z``.  Above the edge the iteration settles,
    below it ``g`` decreases without bound.
    """
    c = np.asarray(c)
    gi = -c / z
    for _ in range(max_iter):
        w = gi.sum() + z
        new = (w - np.sqrt(w * w + 4 * c)) / 2
        if new.sum() < -10 * len(c):
            return True
        if np.max(np.abs(new - gi)) < 1e-14:
            return False
        gi = new
    raise RuntimeError(f"undecided at z={z}")


def bisect_edge(c, lo=1.0, hi=3.0, steps=24):
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if fixed_point_diverges(mid, c):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_known_values():
    assert eval_g(2.0, EQ3).g == pytest.approx(-0.6339746, abs=1e-6)
    assert closed_form_g(2.0, 3) == pytest.approx(-0.6339745962155612, abs=1e-14)
    assert EQ3.edge == pytest.approx(2 * math.sqrt(2 / 3), abs=1e-12)
    assert EQ3.edge == pytest.approx(1.6329932, abs=1e-7)
    assert closed_form_g(EQ3.edge, 3) == pytest.approx(-1.2247449, abs=1e-7)
    assert eval_f(2.0, EQ3) == pytest.approx(1.3660254, abs=1e-7)
    assert eval_h(2.0, 0, EQ3) == pytest.approx(1.5773503, abs=1e-7)
    assert eval_q(2.0, EQ3) == pytest.approx(1.7886751, abs=1e-7)


def test_large_z_asymptotics():
    for profile in (EQ3, GENERAL, RatioProfile.equal(4)):
        assert 1e6 * eval_g(1e6, profile).g == pytest.approx(-1.0, abs=1e-5)


@pytest.mark.parametrize("d", [3, 4, 5])
def test_fixed_point_matches_closed_form(d):
    profile = RatioProfile.equal(d)
    for z in np.linspace(profile.edge + 0.01, 10.0, 60):
        fp = eval_g(z, profile, method="fixed_point")
        assert fp.g == pytest.approx(closed_form_g(z, d), abs=1e-10)
        # equal ratios split g evenly between modes
        np.testing.assert_allclose(fp.g_per_mode, fp.g / d, atol=1e-10)


def test_closed_form_edges():
    for d in (3, 4, 6):
        assert support_edge(RatioProfile.equal(d)) == pytest.approx(2 * math.sqrt((d - 1) / d), abs=1e-12)


@pytest.mark.parametrize("c", [(1 / 3, 1 / 3, 1 / 3), (0.5, 0.25, 0.25), (0.2, 0.3, 0.5), (0.1, 0.2, 0.3, 0.4)])
def test_edge_agrees_with_fixed_point_bisection(c):
    profile = RatioProfile(c)
    assert support_edge(profile) == pytest.approx(bisect_edge(c), abs=1e-5)


def test_general_edge_value():
    assert GENERAL.edge == pytest.approx(1.6118548977353129, abs=1e-9)


def test_per_mode_quadratics_hold():
    for z in (GENERAL.edge + 1e-3, 2.0, 5.0):
        v = eval_g(z, GENERAL)
        assert v.g == pytest.approx(sum(v.g_per_mode), abs=1e-12)
        for gi, ci in zip(v.g_per_mode, GENERAL.c):
            assert gi**2 - (v.g + z) * gi - ci == pytest.approx(0.0, abs=1e-11)


@pytest.mark.parametrize("profile", [EQ3, GENERAL, RatioProfile.equal(4)], ids=["eq3", "general", "eq4"])
def test_derivatives_match_finite_differences(profile):
    for z in (profile.edge + 0.05, 2.0, 4.0, 9.0):
        step = 1e-6
        hi, lo = eval_g(z + step, profile), eval_g(z - step, profile)
        terms = kernel_terms(z, profile)
        assert terms.dg == pytest.approx((hi.g - lo.g) / (2 * step), rel=1e-6)
        assert eval_g_derivative(z, profile) == pytest.approx(terms.dg, rel=1e-12)
        fd_modes = (np.array(hi.g_per_mode) - np.array(lo.g_per_mode)) / (2 * step)
        np.testing.assert_allclose(terms.dg_modes, fd_modes, rtol=1e-6)


@settings(max_examples=60, deadline=None)
@given(z1=st.floats(1.64, 50.0), z2=st.floats(1.64, 50.0))
def test_g_is_negative_and_increasing(z1, z2):
    a, b = sorted((z1, z2))
    ga, gb = eval_g(a, EQ3).g, eval_g(b, EQ3).g
    assert ga < 0 and gb < 0
    assert ga <= gb + 1e-14


@settings(max_examples=40, deadline=None)
@given(w=st.lists(st.floats(0.05, 1.0), min_size=3, max_size=5), dz=st.floats(1e-4, 20.0))
def test_general_profile_consistency(w, dz):
    c = np.asarray(w) / np.sum(w)
    c[-1] = 1.0 - c[:-1].sum()
    profile = RatioProfile(tuple(c))
    z = profile.edge + dz
    v = eval_g(z, profile)
    assert v.g < 0
    assert all(gi < 0 for gi in v.g_per_mode)
    # h_i > 0 away from the support
    assert all(eval_h(z, k, profile) > 0 for k in range(profile.d))


def test_domain_errors():
    with pytest.raises(DomainError):
        eval_g(1.6, EQ3)
    with pytest.raises(DomainError):
        eval_g(GENERAL.edge - 1e-3, GENERAL)
    with pytest.raises(ValueError):
        eval_q(2.0, RatioProfile.equal(4))
    with pytest.raises(ValueError):
        eval_q(2.0, GENERAL)
    with pytest.raises(ValueError):
        RatioProfile((0.5, 0.5))
    with pytest.raises(ValueError):
        RatioProfile((0.5, 0.3, 0.3))
    with pytest.raises(ValueError):
        eval_g(2.0, EQ3, method="magic")


def test_from_dims():
    assert RatioProfile.from_dims((50, 50, 50)).is_equal
    p = RatioProfile.from_dims((20, 40, 40))
    assert p.c == pytest.approx((0.2, 0.4, 0.4))
    assert not p.is_equal


@pytest.mark.parametrize("profile", [EQ3, GENERAL, RatioProfile((0.1, 0.2, 0.3, 0.4))], ids=["eq3", "general", "d4"])
def test_newton_and_fixed_point_agree(profile):
    for z in np.linspace(profile.edge + 1e-6, 12.0, 40):
        a = eval_g(z, profile, method="newton").g
        b = eval_g(z, profile, method="fixed_point").g
        assert a == pytest.approx(b, abs=1e-10)
