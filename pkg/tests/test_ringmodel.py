import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from vpbounds.errors import DataError, NonPositiveSlopeError, OutsideModelError
from vpbounds.ringfit import RingFit
from vpbounds.ringmodel import (
    build_model,
    check_invariants,
    closure_error,
    continuity_errors,
    cumulative_fraction,
    enclosed_mass,
    model_density,
    model_from_fit,
    threshold_density,
)

MULTI_RING_XFAIL = pytest.mark.xfail(
    strict=True,
    reason="with several rings the cumulative f(r) of a continuous ring model is not piecewise linear in log-log",
)


def line_fit(slopes, breaks, intercept, lo=-6.0, hi=0.0):
    return RingFit(len(slopes), tuple(breaks), tuple(slopes), intercept, 0.0, (lo, hi), 100)


def quad_mass(model, r):
    """2*pi * integral of rho(s) s ds from 0 to r, one piece per ring."""
    total = 0.0
    for ring in model.rings:
        if r <= ring.r_inner_km:
            break
        top = min(r, ring.r_outer_km)
        val, _ = quad(lambda s: ring.c * s ** (ring.a - 2) * s, ring.r_inner_km, top, epsabs=0, epsrel=1e-13)
        total += val
    return 2 * math.pi * total


def test_uniform_disc_model():
    P, R = 5e5, 12.0
    fit = line_fit([0.5], [], math.log(R) + 0.5 * -6.0)
    model = model_from_fit(fit, P)
    (ring,) = model.rings
    assert ring.a == pytest.approx(2.0, abs=1e-12)
    assert ring.r_outer_km == pytest.approx(R, rel=1e-12)
    assert ring.c == pytest.approx(P / (math.pi * R**2), rel=1e-12)
    assert threshold_density(model) == pytest.approx(ring.c / 2, rel=1e-12)
    for r in (0.1, 3.0, R):
        assert model_density(model, r) == pytest.approx(ring.c, rel=1e-12)


def test_two_rings_against_quadrature():
    model = build_model([2.0, 0.5], [10.0, 30.0], 1e6)
    assert continuity_errors(model).max() < 1e-12
    assert quad_mass(model, 30.0) == pytest.approx(1e6, rel=1e-9)
    assert quad_mass(model, 10.0) == pytest.approx(enclosed_mass(model, 10.0), rel=1e-9)
    assert quad_mass(model, 21.0) == pytest.approx(enclosed_mass(model, 21.0), rel=1e-9)


def test_two_ring_density_by_hand():
    P, r1, r2 = 1e6, 10.0, 30.0
    # c2 = c1 * r1**(a1-2) / r1**(a2-2) with a1 = 2, a2 = 0.5 -> c2 = c1 * r1**1.5
    # P = 2 pi (c1/2 r1^2 + c2/0.5 (r2^0.5 - r1^0.5))
    c1 = P / (2 * math.pi * (r1**2 / 2 + r1**1.5 / 0.5 * (r2**0.5 - r1**0.5)))
    c2 = c1 * r1**1.5
    model = build_model([2.0, 0.5], [r1, r2], P)
    assert model.rings[0].c == pytest.approx(c1, rel=1e-12)
    assert model_density(model, 20.0) == pytest.approx(c2 * 20.0**-1.5, rel=1e-12)


def test_density_continuous_at_ring_radius():
    model = build_model([1.7, 0.6, 1.2], [5.0, 18.0, 40.0], 3e6)
    for ring, nxt in zip(model.rings, model.rings[1:]):
        r = ring.r_outer_km
        left = model_density(model, r)
        right = nxt.c * r ** (nxt.a - 2)
        assert right == pytest.approx(left, rel=1e-9)
        assert model_density(model, r * (1 + 1e-12)) == pytest.approx(left, rel=1e-9)


def test_single_ring_round_trip_through_quadrature():
    fit = line_fit([0.8], [], 0.5)
    model = model_from_fit(fit, 2e5)
    for x in np.linspace(-6, 0, 13):
        r = math.exp(fit.predict(x))
        assert math.log(quad_mass(model, r) / 2e5) == pytest.approx(x, abs=1e-6)


def test_single_ring_analytic_profile_recovers_model():
    truth = build_model([1.3], [25.0], 4e5)
    fs = np.geomspace(1e-3, 1.0, 50)
    r = [brentq_radius(truth, f) for f in fs]
    slope, icpt = np.polyfit(np.log(fs), np.log(r), 1)
    fit = line_fit([slope], [], icpt + slope * math.log(fs[0]), math.log(fs[0]), 0.0)
    got = model_from_fit(fit, 4e5)
    assert got.rings[0].a == pytest.approx(1.3, rel=1e-6)
    assert got.rings[0].c == pytest.approx(truth.rings[0].c, rel=1e-6)


def brentq_radius(model, f):
    from scipy.optimize import brentq

    return brentq(lambda r: cumulative_fraction(model, r) - f, 1e-12, model.outer_radius_km, xtol=1e-14, rtol=1e-15)


@MULTI_RING_XFAIL
def test_two_ring_round_trip_through_quadrature():
    fit = line_fit([0.5, 2.0], [-2.0], 0.5)
    model = model_from_fit(fit, 1e6)
    for x in np.linspace(-6, 0, 13):
        r = math.exp(fit.predict(x))
        assert math.log(quad_mass(model, r) / 1e6) == pytest.approx(x, abs=1e-6)


@MULTI_RING_XFAIL
def test_two_ring_analytic_profile_recovers_model():
    truth = build_model([2.0, 0.5], [10.0, 30.0], 1e6)
    f1 = cumulative_fraction(truth, 10.0)
    fs = np.geomspace(1e-3, 1.0, 60)
    x, y = np.log(fs), np.log([brentq_radius(truth, f) for f in fs])
    b = math.log(f1)
    left, right = x <= b, x >= b
    s1 = np.polyfit(x[left], y[left], 1)[0]
    s2 = np.polyfit(x[right], y[right], 1)[0]
    fit = line_fit([s1, s2], [b], y[0], x[0], 0.0)
    got = model_from_fit(fit, 1e6)
    assert np.allclose(got.exponents, truth.exponents, rtol=1e-6)
    assert np.allclose(got.coefficients, truth.coefficients, rtol=1e-6)


def test_extrapolation_to_f_one_is_reported():
    fit = line_fit([0.5], [], 1.0, -6.0, -0.2)
    model = model_from_fit(fit, 1e3)
    assert model.extrapolation_logf == pytest.approx(0.2)
    assert model.outer_radius_km == pytest.approx(math.exp(1.0 + 0.5 * 6.0), rel=1e-12)


@pytest.mark.parametrize("slopes", [[0.5, 0.0], [0.5, -0.2], [1e-7]])
def test_nonpositive_slope(slopes):
    breaks = [-2.0] if len(slopes) == 2 else []
    with pytest.raises(NonPositiveSlopeError):
        model_from_fit(line_fit(slopes, breaks, 1.0), 1e3)


def test_model_density_outside():
    model = build_model([2.0], [10.0], 1.0)
    for r in (0.0, -1.0, 10.0001):
        with pytest.raises(OutsideModelError):
            model_density(model, r)


def test_threshold_sides():
    model = build_model([2.0, 0.5], [10.0, 30.0], 1e6)
    inner = threshold_density(model)
    outer = threshold_density(model, side="outer")
    rho = model_density(model, 10.0)
    assert inner == pytest.approx(rho / 2, rel=1e-12)
    assert outer == pytest.approx(rho / 0.5, rel=1e-12)
    with pytest.raises(IndexError):
        threshold_density(model, 1, "outer")
    with pytest.raises(IndexError):
        threshold_density(model, 5)


def test_check_invariants_catches_broken_models():
    from dataclasses import replace

    model = build_model([2.0, 0.5], [10.0, 30.0], 1e6)
    broken = replace(model, total_mass=2e6)
    with pytest.raises(DataError):
        check_invariants(broken)
    r0, r1 = model.rings
    with pytest.raises(DataError):
        check_invariants(replace(model, rings=(r0, replace(r1, c=r1.c * 1.01))))


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0.05, 3.0), min_size=1, max_size=5),
    st.floats(-8.0, -0.5),
    st.floats(-2.0, 5.0),
    st.floats(1.0, 1e9),
    st.data(),
)
def test_random_fits_close_and_threshold_bounds(slopes, lo, icpt, P, data):
    k = len(slopes) - 1
    breaks = sorted(data.draw(st.lists(st.floats(lo + 0.1, -0.1), min_size=k, max_size=k, unique=True)))
    if any(b - a < 1e-3 for a, b in zip([lo] + breaks, breaks + [0.0])):
        return
    model = model_from_fit(line_fit(slopes, breaks, icpt, lo, 0.0), P)
    assert closure_error(model) <= 1e-9
    if len(continuity_errors(model)):
        assert continuity_errors(model).max() <= 1e-9
    for b, ring in enumerate(model.rings):
        rho0 = threshold_density(model, b)
        assert rho0 > 0
        if ring.a > 1:
            inside = ring.r_outer_km * (1 - 1e-9)
            assert rho0 < model_density(model, inside)
