import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpbounds.errors import DataError, MaskedOutError, TooFewPointsError
from vpbounds.ringfit import (
    _lstsq,
    _Objective,
    breakpoints_as_fractions,
    fit_piecewise,
    mask_artifacts,
    rss_by_breakpoints,
)
from vpbounds.vp import VpProfile

from conftest import hinge, make_profile

X = np.linspace(-6.0, 0.0, 256)


def test_exact_line_no_breakpoints():
    y = 0.5 * X + 3.0
    fit = fit_piecewise(make_profile(X, y), 0)
    assert fit.slopes[0] == pytest.approx(0.5, abs=1e-12)
    assert fit.rss <= 1e-18
    assert fit.breakpoints_logf == ()
    assert breakpoints_as_fractions(fit) == []


def test_exact_hinge_recovered():
    y = hinge(X, [-2.0], [0.5, 2.0])
    fit = fit_piecewise(make_profile(X, y), 1)
    assert fit.breakpoints_logf[0] == pytest.approx(-2.0, abs=1e-6)
    assert fit.slopes[0] == pytest.approx(0.5, abs=1e-9)
    assert fit.slopes[1] == pytest.approx(2.0, abs=1e-9)
    ((f, r),) = breakpoints_as_fractions(fit, None)
    assert f == pytest.approx(math.exp(-2.0), rel=1e-6)
    assert r == pytest.approx(math.exp(1.0 + 0.5 * 4.0), rel=1e-6)


def test_noisy_hinge_monte_carlo():
    bad = []
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        y = hinge(X, [-2.0], [0.5, 2.0]) + rng.normal(0.0, 0.01, X.size)
        fit = fit_piecewise(make_profile(X, y), 1, seed=trial)
        ok = (
            abs(fit.breakpoints_logf[0] + 2.0) <= 0.1
            and abs(fit.slopes[0] / 0.5 - 1) <= 0.05
            and abs(fit.slopes[1] / 2.0 - 1) <= 0.05
        )
        if not ok:
            bad.append(trial)
    assert bad == []


def test_three_breakpoints():
    y = hinge(X, [-4.5, -3.0, -1.0], [0.3, 1.0, 0.4, 1.5])
    fit = fit_piecewise(make_profile(X, y), 3)
    assert np.allclose(fit.breakpoints_logf, [-4.5, -3.0, -1.0], atol=1e-5)
    assert np.allclose(fit.slopes, [0.3, 1.0, 0.4, 1.5], atol=1e-6)


def test_fit_is_continuous():
    rng = np.random.default_rng(3)
    y = hinge(X, [-4.0, -1.5], [0.6, 1.4, 0.8]) + rng.normal(0, 0.02, X.size)
    fit = fit_piecewise(make_profile(X, y), 2)
    for b in fit.breakpoints_logf:
        eps = 1e-12
        assert abs(fit.predict(b - eps) - fit.predict(b + eps)) < 1e-9


def test_segments_have_enough_points():
    rng = np.random.default_rng(4)
    y = hinge(X, [-5.0, -3.5, -2.0, -0.5], [0.4, 1.0, 0.5, 1.2, 0.6]) + rng.normal(0, 0.01, X.size)
    fit = fit_piecewise(make_profile(X, y), 4)
    edges = [-np.inf, *fit.breakpoints_logf, np.inf]
    counts = [np.sum((X > a) & (X <= b)) for a, b in zip(edges, edges[1:])]
    assert min(counts) >= 3


def test_rss_nested():
    rng = np.random.default_rng(5)
    y = hinge(X, [-4.0, -2.5, -1.0], [0.4, 1.2, 0.5, 1.6]) + rng.normal(0, 0.03, X.size)
    table = rss_by_breakpoints(make_profile(X, y), range(0, 6), restarts=4)
    rss = [r for _, r in table]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(rss, rss[1:]))


def test_rss_table_reports_unsupported_counts():
    x = np.linspace(-2, 0, 7)
    table = rss_by_breakpoints(make_profile(x, 0.5 * x), [1, 2, 3])
    assert table[0][1] is not None
    assert table[1] == (2, None) and table[2] == (3, None)


def test_point_order_does_not_matter():
    # profiles are kept sorted by f, so order can only differ inside the
    # least-squares step; the search objective needs sorted x and sorts itself
    rng = np.random.default_rng(6)
    y = hinge(X, [-2.5], [0.5, 1.5]) + rng.normal(0, 0.02, X.size)
    perm = rng.permutation(X.size)
    for breaks in ([-2.5], [-3.0, -1.0]):
        beta_a, rss_a = _lstsq(X, y, breaks)
        beta_b, rss_b = _lstsq(X[perm], y[perm], breaks)
        assert rss_b == pytest.approx(rss_a, rel=1e-10)
        assert np.allclose(beta_a, beta_b, rtol=1e-10)
        assert _Objective(X, y)(np.array(breaks)[:, None])[0] == pytest.approx(rss_a, rel=1e-8)
    with pytest.raises(DataError):
        VpProfile(tuple(reversed(make_profile(X, y).entries)))


def test_same_seed_bit_identical_and_thread_independent():
    rng = np.random.default_rng(7)
    y = hinge(X, [-3.0, -1.0], [0.5, 1.5, 0.7]) + rng.normal(0, 0.02, X.size)
    p = make_profile(X, y)
    a = fit_piecewise(p, 2, seed=11)
    assert a == fit_piecewise(p, 2, seed=11)
    assert a == fit_piecewise(p, 2, seed=11, threads=4)


def test_too_few_points():
    x = np.linspace(-1, 0, 5)
    with pytest.raises(TooFewPointsError, match="fewer breakpoints"):
        fit_piecewise(make_profile(x, 0.5 * x), 1)


def test_negative_slope_rejected():
    y = hinge(X, [-2.0], [0.5, -0.5])
    with pytest.raises(DataError):
        fit_piecewise(make_profile(X, y), 1)


def test_mask_low_f_and_zero_radii_excluded():
    y = 0.5 * X
    p = make_profile(X, y)
    fit = fit_piecewise(p, 0, mask_low_f=math.exp(-3.0))
    assert fit.fit_range_logf[0] >= -3.0
    assert fit.n_excluded == int(np.sum(X < -3.0))
    assert fit.excluded_low_f == pytest.approx(math.exp(X[X < -3.0][-1]))


def test_mask_artifacts_drops_leading_entries():
    cells = np.array([1, 3, 5, 8, 19] + [20 + i for i in range(10)])
    x = np.linspace(-4, 0, cells.size)
    p = make_profile(x, 0.5 * x, cells)
    m = mask_artifacts(p, 20)
    assert len(m) == len(p) - 5
    assert m.entries == p.entries[5:]


def test_mask_artifacts_identity_and_errors():
    x = np.linspace(-4, 0, 10)
    p = make_profile(x, 0.5 * x, np.full(10, 25))
    assert mask_artifacts(p, 20) == p
    with pytest.raises(MaskedOutError):
        mask_artifacts(p, 26)
    with pytest.raises(DataError):
        mask_artifacts(p, 0)


def test_mask_artifacts_keeps_interior_entries():
    cells = np.array([25, 10, 30, 40])
    x = np.linspace(-3, 0, 4)
    p = make_profile(x, 0.5 * x, cells)
    assert mask_artifacts(p, 20) == p


@settings(max_examples=15, deadline=None)
@given(
    st.floats(-4.5, -1.5),
    st.floats(0.2, 2.0),
    st.floats(0.2, 2.0),
    st.integers(0, 1000),
)
def test_noiseless_hinge_property(b, s0, s1, seed):
    y = hinge(X, [b], [s0, s1])
    fit = fit_piecewise(make_profile(X, y), 1, seed=seed, restarts=4)
    assert fit.rss < 1e-12
    assert np.max(np.abs(fit.predict(X) - y)) < 1e-6
    if abs(s1 - s0) > 0.1:
        assert fit.breakpoints_logf[0] == pytest.approx(b, abs=1e-4)
