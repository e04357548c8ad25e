"""Synthetic density grids with known ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import DataError, RingExceedsGridError
from .grid import DensityGrid, GridSpec, cell_areas_km2, haversine_km_array, km_per_degree_lat
from .ringmodel import ring_coefficients


@dataclass(frozen=True)
class RingCitySpec:
    center: Tuple[float, float]
    rings: Tuple[Tuple[float, float], ...]  # (outer_radius_km, exponent)
    total_mass: float
    grid: GridSpec
    noise_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rings", tuple((float(r), float(a)) for r, a in self.rings))
        radii = [r for r, _ in self.rings]
        if not radii:
            raise DataError("ring city needs at least one ring")
        if any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
            raise DataError("ring radii must be positive and strictly increasing")
        if any(a <= 0 for _, a in self.rings):
            raise DataError("ring exponents must be positive")
        if not self.total_mass > 0:
            raise DataError("total mass must be positive")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")


def grid_around(center: Tuple[float, float], half_side_km: float, cell_size: float = 0.01) -> GridSpec:
    """Grid covering a square of the given half side (km) around ``center``,
    aligned so that ``center`` falls on a cell centre."""
    lat, lon = center
    dlat = half_side_km / km_per_degree_lat()
    dlon = dlat / math.cos(math.radians(lat))
    n_half_rows = math.ceil(dlat / cell_size)
    n_half_cols = math.ceil(dlon / cell_size)
    return GridSpec(
        lat - (n_half_rows + 0.5) * cell_size,
        lon - (n_half_cols + 0.5) * cell_size,
        2 * n_half_rows + 1,
        2 * n_half_cols + 1,
        cell_size,
    )


def _center_distances(spec: GridSpec, center) -> np.ndarray:
    lat = spec.lat_centers()[:, None]
    lon = spec.lon_centers()[None, :]
    return haversine_km_array(center[0], center[1], lat, lon)


def _edge_clearance_km(spec: GridSpec, center) -> float:
    lat, lon = center
    if not (spec.lat_min <= lat <= spec.lat_max and spec.lon_min <= lon <= spec.lon_max):
        return -1.0
    k = km_per_degree_lat()
    coslat = math.cos(math.radians(max(abs(spec.lat_min), abs(spec.lat_max))))
    return min(
        (lat - spec.lat_min) * k,
        (spec.lat_max - lat) * k,
        (lon - spec.lon_min) * k * coslat,
        (spec.lon_max - lon) * k * coslat,
    )


def ring_density(distances_km: np.ndarray, radii, exponents, coefficients, r_floor_km: float) -> np.ndarray:
    """Continuous ring-model density at each distance; zero beyond the last ring."""
    r = np.maximum(distances_km, r_floor_km)
    out = np.zeros_like(r)
    inner = 0.0
    for j, (ro, a, c) in enumerate(zip(radii, exponents, coefficients)):
        sel = (distances_km > inner) & (distances_km <= ro) if j else (distances_km <= ro)
        out[sel] = c * r[sel] ** (a - 2)
        inner = ro
    return out


def generate_ring_city(spec: RingCitySpec, seed: int = 0) -> DensityGrid:
    """Cell mass = model density at the cell centre times cell area, optionally
    times seeded lognormal noise, rescaled to the requested total.

    Density diverges at the centre when the innermost exponent is below 2, so
    distances are floored at a quarter of the cell's north-south size.
    """
    radii = [r for r, _ in spec.rings]
    exps = [a for _, a in spec.rings]
    if _edge_clearance_km(spec.grid, spec.center) < radii[-1]:
        raise RingExceedsGridError(f"outer ring radius {radii[-1]} km does not fit inside the grid")
    coeffs = ring_coefficients(exps, radii, spec.total_mass)
    dist = _center_distances(spec.grid, spec.center)
    floor = 0.25 * spec.grid.cell_size * km_per_degree_lat()
    density = ring_density(dist, radii, exps, coeffs, floor)
    mass = density * cell_areas_km2(spec.grid)[:, None]
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        mass = mass * rng.lognormal(0.0, spec.noise_sigma, size=mass.shape)
    total = mass.sum()
    if not total > 0:
        raise DataError("generated grid is empty; the grid is too coarse for the rings")
    return DensityGrid(spec.grid, mass * (spec.total_mass / total))


@dataclass(frozen=True)
class Disc:
    center: Tuple[float, float]
    radius_km: float
    density: float  # mass per km², added on top of the plain


def generate_discs(
    grid: GridSpec,
    discs: Sequence[Disc],
    plain_density: float = 0.0,
    *,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> DensityGrid:
    """Uniform discs on a uniform plain. A cell belongs to a disc when its
    centre is within the disc radius; overlapping discs add."""
    density = np.full(grid.shape, float(plain_density))
    for d in discs:
        if d.radius_km <= 0 or d.density < 0:
            raise DataError("discs need a positive radius and nonnegative density")
        density += np.where(_center_distances(grid, d.center) <= d.radius_km, d.density, 0.0)
    mass = density * cell_areas_km2(grid)[:, None]
    if noise_sigma > 0:
        mass = mass * np.random.default_rng(seed).lognormal(0.0, noise_sigma, size=mass.shape)
    return DensityGrid(grid, mass)


def disc_mask(grid: GridSpec, center, radius_km: float) -> np.ndarray:
    return _center_distances(grid, center) <= radius_km


def distance_to_boundary_cells(mask: np.ndarray) -> np.ndarray:
    """Chebyshev distance (in cells) from each cell to the nearest cell on the
    other side of the mask boundary."""
    from scipy.ndimage import distance_transform_cdt

    inside = distance_transform_cdt(mask, metric="chessboard")
    outside = distance_transform_cdt(~mask, metric="chessboard")
    return np.where(mask, inside, outside)
