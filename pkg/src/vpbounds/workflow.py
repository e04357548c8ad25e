"""End-to-end city and region pipelines and perturbation runs."""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .boundary import BoundarySet, cluster_above, mark_principal
from .errors import BoxTooSmallError, DataError, VpBoundsError
from .grid import DensityGrid, km_per_degree_lat
from .ringfit import DEFAULT_MIN_CELLS, RingFit, fit_piecewise, mask_artifacts
from .ringmodel import RingModel, default_ring_index, model_from_fit, threshold_density
from .vp import SearchConstraint, VpCircle, VpProfile, default_fractions, vp_circle, vp_profile

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CitySearch:
    approx_center: Tuple[float, float]
    box_side_km: float = 30.0
    search_radius_km: float = 5.0
    n_breakpoints: int = 1

    def __post_init__(self):
        if not self.search_radius_km > 0:
            raise DataError("search radius must be > 0")
        if not self.box_side_km > 2 * self.search_radius_km:
            raise DataError("box side must exceed twice the search radius")
        if self.n_breakpoints < 0:
            raise DataError("n_breakpoints must be >= 0")


@dataclass(frozen=True)
class PipelineOptions:
    min_cells: int = DEFAULT_MIN_CELLS
    connectivity: int = 4
    threshold_side: str = "inner"
    seed: int = 0
    threads: int = 1
    fractions: Optional[Tuple[float, ...]] = None


@dataclass(frozen=True, eq=False)
class CityResult:
    grid: DensityGrid  # the cropped box
    offset: Tuple[int, int]  # row, col of the box's first cell in the input grid
    profile: VpProfile
    fit: RingFit
    model: RingModel
    ring_index: int
    boundary: BoundarySet


def box_window(grid: DensityGrid, center: Tuple[float, float], box_side_km: float) -> Tuple[int, int, int, int]:
    """Half-open row/col window of cells whose centres fall inside the box.

    The box is a square of the given side converted to degrees at the
    centre's latitude.
    """
    half = 0.5 * box_side_km / km_per_degree_lat()
    half_lon = half / math.cos(math.radians(center[0]))
    lat = grid.spec.lat_centers()
    lon = grid.spec.lon_centers()
    rows = np.flatnonzero(np.abs(lat - center[0]) <= half)
    cols = np.flatnonzero(np.abs(lon - center[1]) <= half_lon)
    if len(rows) == 0 or len(cols) == 0:
        raise DataError("box does not overlap the grid")
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def boundary_from_model(
    grid: DensityGrid,
    model: RingModel,
    point: Tuple[float, float],
    *,
    connectivity: int = 4,
    side: str = "inner",
    provenance: Optional[dict] = None,
) -> Tuple[int, BoundarySet]:
    b = default_ring_index(model)
    rho0 = threshold_density(model, b, side)
    bset = mark_principal(cluster_above(grid, rho0, connectivity), point)
    if provenance:
        bset.provenance.update(provenance)
    bset.provenance.update({"ring_index": b, "threshold_side": side})
    return b, bset


def check_box(model: RingModel, box_side_km: float) -> None:
    """Reject models whose last breakpoint radius exceeds half the box side."""
    if len(model.rings) > 1:
        r_last = model.rings[-2].r_outer_km
        if r_last > 0.5 * box_side_km:
            raise BoxTooSmallError(
                f"last breakpoint at {r_last:.2f} km lies outside the {box_side_km} km box; use a larger box"
            )


def city_boundary(grid: DensityGrid, search: CitySearch, options: PipelineOptions = PipelineOptions()) -> CityResult:
    """Profile, fit, model and threshold clusters inside a box around a city."""
    r0, r1, c0, c1 = box_window(grid, search.approx_center, search.box_side_km)
    box = grid.crop(r0, r1, c0, c1)
    if not box.total_mass > 0:
        raise DataError("the box holds no mass")
    constraint = SearchConstraint(center=search.approx_center, max_distance_km=search.search_radius_km)
    fractions = options.fractions or default_fractions(box)
    profile = vp_profile(box, fractions, constraint, threads=options.threads)
    fit = fit_piecewise(
        mask_artifacts(profile, options.min_cells), search.n_breakpoints, seed=options.seed, threads=options.threads
    )
    model = model_from_fit(fit, box.total_mass)
    check_box(model, search.box_side_km)
    b, bset = boundary_from_model(
        box,
        model,
        search.approx_center,
        connectivity=options.connectivity,
        side=options.threshold_side,
        provenance={
            "approx_center": list(search.approx_center),
            "box_side_km": search.box_side_km,
            "search_radius_km": search.search_radius_km,
            "n_breakpoints": search.n_breakpoints,
            "seed": options.seed,
        },
    )
    return CityResult(box, (r0, c0), profile, fit, model, b, bset)


@dataclass(frozen=True, eq=False)
class RegionResult:
    profile: VpProfile
    fit: Optional[RingFit]
    circles: Tuple[VpCircle, ...]


def region_boundaries(
    grid: DensityGrid, n_breakpoints: int, options: PipelineOptions = PipelineOptions()
) -> RegionResult:
    """Unconstrained profile, its fit, and one VP circle per breakpoint.

    A profile whose radii are all zero (all mass in one cell) has nothing to
    fit; it comes back with ``fit=None`` and no circles.
    """
    fractions = options.fractions or default_fractions(grid)
    profile = vp_profile(grid, fractions, threads=options.threads)
    if not np.any(profile.radii_km > 0):
        return RegionResult(profile, None, ())
    fit = fit_piecewise(mask_artifacts(profile, options.min_cells), n_breakpoints, seed=options.seed, threads=options.threads)
    circles = tuple(vp_circle(grid, min(1.0, math.exp(b))) for b in fit.breakpoints_logf)
    return RegionResult(profile, fit, circles)


@dataclass(frozen=True)
class Perturbations:
    center_offsets_deg: Tuple[float, ...] = (-0.01, 0.0, 0.01)
    search_radii_km: Tuple[float, ...] = (2.0, 5.0, 8.0)
    box_sides_km: Tuple[float, ...] = (40.0, 50.0, 60.0)

    def searches(self, base: CitySearch) -> List[CitySearch]:
        lat, lon = base.approx_center
        out = []
        for dlat, dlon, r, box in itertools.product(
            self.center_offsets_deg, self.center_offsets_deg, self.search_radii_km, self.box_sides_km
        ):
            out.append(CitySearch((lat + dlat, lon + dlon), box, r, base.n_breakpoints))
        return out


@dataclass(frozen=True, eq=False)
class FuzzRun:
    search: CitySearch
    result: Optional[CityResult]
    error: Optional[str]


@dataclass(frozen=True, eq=False)
class FuzzResult:
    frequency: np.ndarray  # fraction of all runs with the cell in the principal cluster
    runs: Tuple[FuzzRun, ...]

    @property
    def n_failed(self) -> int:
        return sum(r.error is not None for r in self.runs)


def principal_mask(grid: DensityGrid, result: CityResult) -> np.ndarray:
    """Principal cluster of a city run, placed on the full input grid."""
    out = np.zeros(grid.shape, dtype=bool)
    p = result.boundary.principal
    if p is not None:
        r0, c0 = result.offset
        out[p.cells[:, 0] + r0, p.cells[:, 1] + c0] = True
    return out


def fuzz_boundary(
    grid: DensityGrid,
    search: CitySearch,
    perturbations: Perturbations = Perturbations(),
    options: PipelineOptions = PipelineOptions(),
) -> FuzzResult:
    """Run :func:`city_boundary` over every perturbed search and count how
    often each cell lands in the principal cluster. Failed runs count as
    runs in which no cell was included."""
    searches = perturbations.searches(search)
    inner = PipelineOptions(
        options.min_cells, options.connectivity, options.threshold_side, options.seed, 1, options.fractions
    )

    def one(s: CitySearch) -> FuzzRun:
        try:
            return FuzzRun(s, city_boundary(grid, s, inner), None)
        except VpBoundsError as exc:
            log.warning("fuzz run %s failed: %s", s, exc)
            return FuzzRun(s, None, f"{type(exc).__name__}: {exc}")

    if options.threads > 1:
        with ThreadPoolExecutor(max_workers=options.threads) as pool:
            runs = list(pool.map(one, searches))
    else:
        runs = [one(s) for s in searches]
    counts = np.zeros(grid.shape, dtype=np.int64)
    for run in runs:
        if run.result is not None:
            counts += principal_mask(grid, run.result)
    return FuzzResult(counts / len(runs), tuple(runs))
