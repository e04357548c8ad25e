"""Valeriepieris circles: smallest circles holding a given fraction of mass.

Candidate centres are cell centres; a cell is inside a circle when its centre
is within the radius, so a circle's radius is always one of the
centre-to-centre distances. For a fixed fraction the search keeps an upper
bound on the optimal radius, discards every candidate whose circle of that
radius cannot hold enough mass and bisects on the radius until few
candidates survive; survivors are then evaluated exactly. Circle masses at a
trial radius are row-chord sums over per-row prefix sums, which is exact
because within one grid row the distance grows with the column offset.

All distance comparisons use the haversine quantity from
:class:`~vpbounds.grid.CellMetric`, so ties are decided on bit-identical
values.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, NoCandidateError, UnreachableFractionError
from .grid import CellMetric, DensityGrid, haversine_km_array

N_FRACTIONS = 256
MIN_CELLS_FOR_FMIN = 10
# relative slack on "cumulative mass reaches f*P"; absorbs summation-order rounding
REACH_RTOL = 1e-12
_FEASIBILITY_SLACK = 1e-9
_SURVIVOR_TARGET = 8
_MAX_BISECTIONS = 64
_CHUNK_ELEMENTS = 1 << 18


@dataclass(frozen=True)
class VpCircle:
    center: Tuple[float, float]
    radius_km: float
    target_fraction: float
    achieved_fraction: float
    cells_included: int
    center_cell: Tuple[int, int]
    # haversine term of the radius; what ties are decided on
    h: float = 0.0


@dataclass(frozen=True)
class VpProfile:
    entries: Tuple[Tuple[float, VpCircle], ...]
    total_mass: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        fs = [f for f, _ in self.entries]
        if any(b <= a for a, b in zip(fs, fs[1:])):
            raise DataError("profile fractions must be strictly increasing")

    def __len__(self):
        return len(self.entries)

    @property
    def fractions(self) -> np.ndarray:
        return np.array([f for f, _ in self.entries])

    @property
    def radii_km(self) -> np.ndarray:
        return np.array([c.radius_km for _, c in self.entries])

    @property
    def cells(self) -> np.ndarray:
        return np.array([c.cells_included for _, c in self.entries], dtype=np.int64)

    def circles(self) -> List[VpCircle]:
        return [c for _, c in self.entries]


@dataclass(frozen=True)
class SearchConstraint:
    """Restricts which cell centres may serve as circle centres."""

    center: Optional[Tuple[float, float]] = None
    max_distance_km: Optional[float] = None
    min_cell_mass: float = 0.0

    def __post_init__(self):
        if (self.center is None) != (self.max_distance_km is None):
            raise DataError("candidate region needs both a centre and a max distance")
        if self.max_distance_km is not None and not self.max_distance_km > 0:
            raise DataError("max_distance_km must be > 0")


def admissible_mask(grid: DensityGrid, constraint: Optional[SearchConstraint] = None) -> np.ndarray:
    """Boolean mask of cells allowed as circle centres."""
    constraint = constraint or SearchConstraint()
    mask = grid.mass > constraint.min_cell_mass
    if constraint.center is not None:
        lat = grid.spec.lat_centers()[:, None]
        lon = grid.spec.lon_centers()[None, :]
        d = haversine_km_array(constraint.center[0], constraint.center[1], lat, lon)
        mask &= d <= constraint.max_distance_km
    return mask


def default_fractions(grid: DensityGrid, n: int = N_FRACTIONS) -> List[float]:
    """Log-spaced fractions from the mass share of the heaviest few cells up to 1."""
    if not grid.total_mass > 0:
        raise DataError("grid has no mass")
    flat = grid.mass.ravel()
    k = min(MIN_CELLS_FOR_FMIN, flat.size)
    top = np.partition(flat, flat.size - k)[flat.size - k :]
    f_min = min(1.0, math.fsum(top) / grid.total_mass)
    if f_min >= 1.0:
        return [1.0]
    fs = np.geomspace(f_min, 1.0, n)
    fs[0], fs[-1] = f_min, 1.0
    out = [float(fs[0])]
    for f in fs[1:]:
        if f > out[-1]:
            out.append(float(f))
    return out


def _check_fraction(f: float) -> None:
    if not 0 < f <= 1:
        raise DataError(f"fraction must lie in (0, 1], got {f}")


class _Search:
    """Precomputed state for repeated circle searches on one grid."""

    def __init__(self, grid: DensityGrid, candidates: np.ndarray):
        if not grid.total_mass > 0:
            raise DataError("grid has no mass")
        spec = grid.spec
        self.grid = grid
        self.spec = spec
        self.metric = CellMetric(spec)
        self.mass = grid.mass
        self.P = grid.total_mass
        self.n_rows, self.n_cols = spec.shape
        self.nz_rows, self.nz_cols = np.nonzero(grid.mass > 0)
        self.nz_mass = grid.mass[self.nz_rows, self.nz_cols]
        self.rowcum = np.zeros((self.n_rows, self.n_cols + 1))
        np.cumsum(grid.mass, axis=1, out=self.rowcum[:, 1:])
        self.sat = np.zeros((self.n_rows + 1, self.n_cols + 1))
        self.sat[1:, 1:] = grid.mass.cumsum(0).cumsum(1)
        self.cand_rows, self.cand_cols = np.nonzero(candidates)
        if len(self.cand_rows) == 0:
            raise NoCandidateError("no admissible candidate centre")
        self.cand_mass = grid.mass[self.cand_rows, self.cand_cols]

    # -- geometry helpers -------------------------------------------------

    def _row_reach(self, h: float) -> int:
        """Largest row offset whose cells can be within ``h``."""
        return int(np.searchsorted(self.metric.hphi, h, side="right")) - 1

    def _widths(self, row0, rows: np.ndarray, h: float) -> np.ndarray:
        """Per row, the largest column offset within ``h`` of a centre in
        ``row0`` (-1 if none). ``row0`` broadcasts against ``rows``."""
        m = self.metric
        k = m.cphi[row0] * m.cphi[rows]
        base = m.hphi[np.abs(rows - row0)]
        with np.errstate(divide="ignore", invalid="ignore"):
            est = (h - base) / k
        w = np.searchsorted(m.hlam, est, side="right") - 1
        w = np.clip(w, -1, self.n_cols - 1)
        # the division above is only an estimate; settle against the exact forward formula
        for _ in range(4):
            up = np.minimum(w + 1, self.n_cols - 1)
            grow = (w < self.n_cols - 1) & (m.hav(row0, rows, up) <= h)
            valid = np.maximum(w, 0)
            shrink = (w >= 0) & (m.hav(row0, rows, valid) > h)
            if not grow.any() and not shrink.any():
                break
            w = w + grow - shrink
        return w

    def _circle_mass(self, ci: np.ndarray, cj: np.ndarray, h: float) -> np.ndarray:
        """Mass within ``h`` of each candidate, via row-chord prefix sums."""
        out = np.zeros(len(ci))
        reach = self._row_reach(h)
        if reach < 0 or len(ci) == 0:
            return out
        offsets = np.arange(-reach, reach + 1)
        urows, inv = np.unique(ci, return_inverse=True)
        rows = urows[:, None] + offsets[None, :]
        inside = (rows >= 0) & (rows < self.n_rows)
        rows = np.clip(rows, 0, self.n_rows - 1)
        widths = self._widths(urows[:, None], rows, h)
        widths[~inside] = -1
        step = max(1, _CHUNK_ELEMENTS // len(offsets))
        for s in range(0, len(ci), step):
            sl = slice(s, s + step)
            w = widths[inv[sl]]
            r = rows[inv[sl]]
            col = cj[sl, None]
            lo = np.clip(col - w, 0, self.n_cols)
            hi = np.where(w >= 0, np.clip(col + w + 1, 0, self.n_cols), lo)
            out[sl] = (self.rowcum[r, hi] - self.rowcum[r, lo]).sum(1)
        return out

    def _box_mass(self, ci: np.ndarray, cj: np.ndarray, h: float) -> np.ndarray:
        """Mass of a row/column box containing the whole circle (an upper bound)."""
        reach = self._row_reach(h)
        if reach < 0:
            return np.zeros(len(ci))
        m = self.metric
        r0 = np.clip(ci - reach, 0, self.n_rows - 1)
        r1 = np.clip(ci + reach, 0, self.n_rows - 1)
        # cos(lat) over a row interval is smallest at one of its ends
        k = m.cphi[ci] * np.minimum(m.cphi[r0], m.cphi[r1])
        # +1 column of margin for rounding in the division
        widest = np.searchsorted(m.hlam, h / k, side="right")
        s = self.sat
        c0 = np.clip(cj - widest, 0, self.n_cols)
        c1 = np.clip(cj + widest + 1, 0, self.n_cols)
        return s[r1 + 1, c1] - s[r0, c1] - s[r1 + 1, c0] + s[r0, c0]

    # -- exact evaluation ---------------------------------------------------

    def exact(self, row0: int, col0: int, target: float, hmax: Optional[float] = None):
        """Smallest enclosing level for one centre, or ``None`` if it exceeds ``hmax``.

        Returns ``(h, achieved_mass, n_cells)``.
        """
        if hmax is None:
            rows, cols, mass = self.nz_rows, self.nz_cols, self.nz_mass
        else:
            reach = self._row_reach(hmax)
            if reach < 0:
                return None
            r0, r1 = max(0, row0 - reach), min(self.n_rows, row0 + reach + 1)
            w = self._widths(row0, np.arange(r0, r1), hmax)
            wmax = int(w.max())
            if wmax < 0:
                return None
            c0, c1 = max(0, col0 - wmax), min(self.n_cols, col0 + wmax + 1)
            block = self.mass[r0:r1, c0:c1]
            br, bc = np.nonzero(block > 0)
            rows, cols, mass = br + r0, bc + c0, block[br, bc]
        h = self.metric.hav(row0, rows, np.abs(cols - col0))
        if hmax is not None:
            near = h <= hmax
            h, mass = h[near], mass[near]
        order = np.argsort(h, kind="stable")
        cum = np.cumsum(mass[order])
        hit = np.flatnonzero(cum >= target)
        if len(hit) == 0:
            return None
        level = h[order[hit[0]]]
        inside = h <= level
        return float(level), math.fsum(mass[inside]), int(inside.sum())

    # -- search -------------------------------------------------------------

    def solve(self, f: float, start: Optional[Tuple[int, int]] = None) -> VpCircle:
        _check_fraction(f)
        target = f * self.P * (1 - REACH_RTOL)
        loose = target - _FEASIBILITY_SLACK * self.P
        ci, cj = self.cand_rows, self.cand_cols
        if start is None:
            k = int(np.argmax(self.cand_mass))
            start = (int(ci[k]), int(cj[k]))
        first = self.exact(start[0], start[1], target)
        if first is None:
            raise UnreachableFractionError(f"fraction {f} cannot be enclosed")
        hi_init = first[0]

        keep = self._box_mass(ci, cj, hi_init) >= loose
        ci, cj = ci[keep], cj[keep]
        keep = self._circle_mass(ci, cj, hi_init) >= loose
        ci, cj = ci[keep], cj[keep]
        init_ci, init_cj = ci, cj

        lo, hi = 0.0, hi_init
        for _ in range(_MAX_BISECTIONS):
            if len(ci) <= _SURVIVOR_TARGET:
                break
            mid = 0.5 * (lo + hi)
            if not lo < mid < hi:
                break
            ok = self._circle_mass(ci, cj, mid) >= loose
            if ok.any():
                hi = mid
                ci, cj = ci[ok], cj[ok]
            else:
                lo = mid

        best = self._best_of(ci, cj, target, hi)
        if best is None:
            # loose feasibility admitted a candidate that does not truly reach
            best = self._best_of(init_ci, init_cj, target, hi_init)
        if best is None:
            raise UnreachableFractionError(f"fraction {f} cannot be enclosed")
        level, achieved, n_cells, row, col = best
        return VpCircle(
            center=self.spec.cell_center(row, col),
            radius_km=CellMetric.to_km(level),
            target_fraction=f,
            achieved_fraction=achieved / self.P,
            cells_included=n_cells,
            center_cell=(row, col),
            h=level,
        )

    def _best_of(self, ci, cj, target, hmax):
        best_key, best = None, None
        for row, col in zip(ci.tolist(), cj.tolist()):
            res = self.exact(row, col, target, hmax)
            if res is None:
                continue
            level, achieved, n_cells = res
            key = (level, -achieved, row, col)
            if best_key is None or key < best_key:
                best_key, best = key, (level, achieved, n_cells, row, col)
        return best


def _coarse_candidates(grid: DensityGrid, f: float, constraint, factor: int = 8) -> np.ndarray:
    coarse = grid.aggregate(factor)
    coarse_mask = admissible_mask(coarse, SearchConstraint(min_cell_mass=constraint.min_cell_mass))
    if constraint.center is not None:
        # keep coarse cells that hold any admissible fine cell
        fine = admissible_mask(grid, constraint)
        padded = np.zeros((coarse.spec.n_rows * factor, coarse.spec.n_cols * factor), dtype=bool)
        padded[: grid.spec.n_rows, : grid.spec.n_cols] = fine
        coarse_mask &= padded.reshape(coarse.spec.n_rows, factor, coarse.spec.n_cols, factor).any(axis=(1, 3))
    c = _Search(coarse, coarse_mask).solve(f)
    r, k = c.center_cell
    region = np.zeros(grid.shape, dtype=bool)
    region[max(0, (r - 1) * factor) : (r + 2) * factor, max(0, (k - 1) * factor) : (k + 2) * factor] = True
    return region


def vp_circle(
    grid: DensityGrid,
    f: float,
    constraint: Optional[SearchConstraint] = None,
    *,
    coarse_to_fine: bool = False,
) -> VpCircle:
    """Smallest circle, centred on an admissible cell, holding at least ``f``
    of the grid's mass.

    Ties on radius go to the higher achieved fraction, then the lower row,
    then the lower column. ``coarse_to_fine`` restricts candidates to the
    neighbourhood of the optimum on an 8x aggregated grid; it is a heuristic
    and may miss the exact optimum.
    """
    _check_fraction(f)
    constraint = constraint or SearchConstraint()
    mask = admissible_mask(grid, constraint)
    if not mask.any():
        raise NoCandidateError("no admissible candidate centre")
    if coarse_to_fine:
        mask &= _coarse_candidates(grid, f, constraint)
    return _Search(grid, mask).solve(f)


def _solve_chunk(search: _Search, fractions: Sequence[float]) -> List[VpCircle]:
    out, start = [], None
    for f in fractions:
        c = search.solve(f, start)
        start = c.center_cell
        out.append(c)
    return out


def vp_profile(
    grid: DensityGrid,
    fractions: Optional[Sequence[float]] = None,
    constraint: Optional[SearchConstraint] = None,
    *,
    threads: int = 1,
) -> VpProfile:
    """Independent VP circles for an increasing list of fractions.

    Results do not depend on ``threads``: each circle is an exact optimum, the
    previous fraction's centre only seeds the search bound.
    """
    if fractions is None:
        fractions = default_fractions(grid)
    fractions = [float(f) for f in fractions]
    if not fractions:
        raise DataError("no fractions given")
    for f in fractions:
        _check_fraction(f)
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise DataError("fractions must be strictly increasing")
    mask = admissible_mask(grid, constraint)
    search = _Search(grid, mask)
    threads = max(1, int(threads))
    if threads == 1 or len(fractions) < 2 * threads:
        circles = _solve_chunk(search, fractions)
    else:
        bounds = np.linspace(0, len(fractions), threads + 1).astype(int)
        chunks = [fractions[a:b] for a, b in zip(bounds, bounds[1:]) if b > a]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ch: _solve_chunk(search, ch), chunks))
        circles = [c for part in parts for c in part]
    radii = [c.h for c in circles]
    assert all(b >= a for a, b in zip(radii, radii[1:])), "VP radii must be nondecreasing"
    return VpProfile(tuple(zip(fractions, circles)), grid.total_mass)
