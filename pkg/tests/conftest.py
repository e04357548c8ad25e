from __future__ import annotations

import numpy as np
import pytest

from vpbounds.grid import DensityGrid, GridSpec


def random_grid(rng, n_rows=None, n_cols=None, fill=None, integer=False, lat_min=50.0):
    """Random sparse grid; integer masses make exact ties common."""
    n_rows = n_rows or int(rng.integers(3, 21))
    n_cols = n_cols or int(rng.integers(3, 21))
    fill = rng.uniform(0.2, 1.0) if fill is None else fill
    if integer:
        mass = rng.integers(1, 4, size=(n_rows, n_cols)).astype(float)
    else:
        mass = rng.lognormal(0.0, 1.0, size=(n_rows, n_cols))
    mass *= rng.random((n_rows, n_cols)) < fill
    if not mass.any():
        mass[n_rows // 2, n_cols // 2] = 1.0
    return DensityGrid(GridSpec(lat_min, -1.0, n_rows, n_cols, 0.01), mass)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_profile(logf, logr, cells=None, total_mass=1.0):
    """VpProfile from log fraction / log radius arrays (circle details are dummies)."""
    from vpbounds.grid import CellMetric
    from vpbounds.vp import VpCircle, VpProfile

    logf = np.asarray(logf, dtype=float)
    radii = np.exp(np.asarray(logr, dtype=float))
    cells = np.full(len(logf), 1000) if cells is None else cells
    entries = []
    for x, r, n in zip(logf, radii, cells):
        f = float(np.exp(x))
        c = VpCircle((0.0, 0.0), float(r), f, f, int(n), (0, 0), CellMetric.from_km(float(r)))
        entries.append((f, c))
    return VpProfile(tuple(entries), total_mass)


def hinge(x, breaks, slopes, intercept=1.0):
    """Continuous piecewise-linear function with value ``intercept`` at x[0]."""
    x = np.asarray(x, dtype=float)
    y = intercept + slopes[0] * (x - x[0])
    for b, s0, s1 in zip(breaks, slopes, slopes[1:]):
        y = y + (s1 - s0) * np.maximum(0.0, x - b)
    return y


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL/SKIP line for an acceptance criterion."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def report(number, status, detail):
        line = f"ACCEPTANCE {number:>2}: {status} {detail}"
        _ACCEPTANCE_LINES.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
