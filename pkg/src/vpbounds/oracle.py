"""Exhaustive reference implementations used to check the fast paths.

These are deliberately naive: every admissible centre is tried against every
nonzero cell. They refuse to run on large grids.
"""

from __future__ import annotations

import math
from collections import deque
from typing import List, Optional

import numpy as np

from .errors import DataError, NoCandidateError, UnreachableFractionError
from .grid import CellMetric, DensityGrid
from .vp import REACH_RTOL, SearchConstraint, VpCircle, admissible_mask

MAX_ORACLE_CELLS = 5000


def _guard(grid: DensityGrid) -> None:
    if np.count_nonzero(grid.mass) > MAX_ORACLE_CELLS:
        raise DataError(f"oracle limited to {MAX_ORACLE_CELLS} nonzero cells")


def brute_force_vp_circle(grid: DensityGrid, f: float, constraint: Optional[SearchConstraint] = None) -> VpCircle:
    """Try every admissible centre; for each, walk the sorted distance list."""
    _guard(grid)
    if not 0 < f <= 1:
        raise DataError(f"fraction must lie in (0, 1], got {f}")
    cand = admissible_mask(grid, constraint)
    if not cand.any():
        raise NoCandidateError("no admissible candidate centre")
    metric = CellMetric(grid.spec)
    rows, cols = np.nonzero(grid.mass > 0)
    mass = grid.mass[rows, cols]
    P = grid.total_mass
    target = f * P * (1 - REACH_RTOL)
    best_key, best = None, None
    for i0, j0 in zip(*np.nonzero(cand)):
        i0, j0 = int(i0), int(j0)
        h = metric.hav(i0, rows, np.abs(cols - j0))
        order = np.argsort(h, kind="stable")
        cum = np.cumsum(mass[order])
        reached = np.flatnonzero(cum >= target)
        if len(reached) == 0:
            continue
        level = float(h[order[reached[0]]])
        inside = h <= level
        achieved = math.fsum(mass[inside])
        key = (level, -achieved, i0, j0)
        if best_key is None or key < best_key:
            best_key = key
            best = (level, achieved, int(inside.sum()), i0, j0)
    if best is None:
        raise UnreachableFractionError(f"fraction {f} cannot be enclosed")
    level, achieved, n_cells, i0, j0 = best
    return VpCircle(
        center=grid.spec.cell_center(i0, j0),
        radius_km=CellMetric.to_km(level),
        target_fraction=f,
        achieved_fraction=achieved / P,
        cells_included=n_cells,
        center_cell=(i0, j0),
        h=level,
    )


def brute_force_vp_circle_scalar(grid: DensityGrid, f: float, constraint: Optional[SearchConstraint] = None) -> VpCircle:
    """Second exhaustive pass in plain Python: for every centre and every
    distinct distance level, sum the enclosed mass exactly with ``fsum``."""
    _guard(grid)
    metric = CellMetric(grid.spec)
    hphi = metric.hphi.tolist()
    hlam = metric.hlam.tolist()
    cphi = metric.cphi.tolist()
    n_rows, n_cols = grid.shape
    cells = [(i, j, float(grid.mass[i, j])) for i in range(n_rows) for j in range(n_cols) if grid.mass[i, j] > 0]
    cand = admissible_mask(grid, constraint)
    P = grid.total_mass
    target = f * P * (1 - REACH_RTOL)
    best_key = None
    for i0 in range(n_rows):
        for j0 in range(n_cols):
            if not cand[i0, j0]:
                continue
            dist = [(hphi[abs(i - i0)] + (cphi[i0] * cphi[i]) * hlam[abs(j - j0)], m) for i, j, m in cells]
            for level in sorted({d for d, _ in dist}):
                enclosed = [m for d, m in dist if d <= level]
                total = math.fsum(enclosed)
                if total >= target:
                    key = (level, -total, i0, j0, len(enclosed))
                    if best_key is None or key < best_key:
                        best_key = key
                    break
    if best_key is None:
        raise UnreachableFractionError(f"fraction {f} cannot be enclosed")
    level, neg_total, i0, j0, n_cells = best_key
    return VpCircle(
        center=grid.spec.cell_center(i0, j0),
        radius_km=CellMetric.to_km(level),
        target_fraction=f,
        achieved_fraction=-neg_total / P,
        cells_included=n_cells,
        center_cell=(i0, j0),
        h=level,
    )


def _neighbours(i, j, connectivity):
    yield i - 1, j
    yield i + 1, j
    yield i, j - 1
    yield i, j + 1
    if connectivity == 8:
        yield i - 1, j - 1
        yield i - 1, j + 1
        yield i + 1, j - 1
        yield i + 1, j + 1


def _flood(mask: np.ndarray, seeds, connectivity: int) -> np.ndarray:
    n_rows, n_cols = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    queue = deque()
    for i, j in seeds:
        if mask[i, j] and not seen[i, j]:
            seen[i, j] = True
            queue.append((i, j))
    while queue:
        i, j = queue.popleft()
        for a, b in _neighbours(i, j, connectivity):
            if 0 <= a < n_rows and 0 <= b < n_cols and mask[a, b] and not seen[a, b]:
                seen[a, b] = True
                queue.append((a, b))
    return seen


def frame_cells(shape):
    n_rows, n_cols = shape
    for j in range(n_cols):
        yield 0, j
        yield n_rows - 1, j
    for i in range(n_rows):
        yield i, 0
        yield i, n_cols - 1


def brute_force_clusters(grid: DensityGrid, rho0: float, connectivity: int = 4) -> np.ndarray:
    """Label array of hole-filled clusters, computed by repeated flood fill.

    Background is flood-filled inward from the grid frame with 4-connectivity;
    whatever it cannot reach becomes part of the clusters. Labels start at 1 in
    descending order of cluster mass (ties: first cell in row-major order).
    """
    if connectivity not in (4, 8):
        raise DataError("connectivity must be 4 or 8")
    above = grid.density() > rho0
    outside = _flood(~above, frame_cells(above.shape), 4)
    filled = ~outside
    n_rows, n_cols = filled.shape
    labels = np.zeros(filled.shape, dtype=np.int64)
    comps: List[tuple] = []
    for i in range(n_rows):
        for j in range(n_cols):
            if filled[i, j] and labels[i, j] == 0:
                comp = _flood(filled, [(i, j)], connectivity)
                labels[comp] = -1 - len(comps)
                comps.append((-math.fsum(grid.mass[comp]), i * n_cols + j, comp))
    for new, (_, _, comp) in enumerate(sorted(comps, key=lambda c: (c[0], c[1])), start=1):
        labels[comp] = new
    return labels
