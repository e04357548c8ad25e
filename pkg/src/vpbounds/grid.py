"""Regular lat/lon grids, geodesic distances and cell areas."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .errors import DataError

EARTH_RADIUS_KM = 6371.0088
DEFAULT_CELL_SIZE = 0.01

# tolerance (in units of cells) used to decide that a coordinate sits on a cell edge
_EDGE_TOL = 1e-9


def haversine_km(p1: Tuple[float, float], p2: Tuple[float, float]) -> float:
    """Great-circle distance in km between two ``(lat, lon)`` points."""
    lat1, lon1 = p1
    lat2, lon2 = p2
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlam = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, h)))


def haversine_km_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorised :func:`haversine_km` (broadcasting, degrees in, km out)."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = np.radians(np.asarray(lat2) - np.asarray(lat1))
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.minimum(1.0, h)))


def km_per_degree_lat() -> float:
    return EARTH_RADIUS_KM * math.pi / 180.0


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a regular lat/lon raster.

    Cell ``(i, j)`` spans ``[lat_min + i*cell_size, lat_min + (i+1)*cell_size]``
    in latitude and the analogous interval in longitude. Row 0 is the
    southernmost row.
    """

    lat_min: float
    lon_min: float
    n_rows: int
    n_cols: int
    cell_size: float = DEFAULT_CELL_SIZE

    def __post_init__(self):
        if not self.cell_size > 0:
            raise DataError(f"cell_size must be > 0, got {self.cell_size}")
        if self.n_rows < 1 or self.n_cols < 1:
            raise DataError(f"grid must have at least one cell, got {self.n_rows}x{self.n_cols}")
        object.__setattr__(self, "n_rows", int(self.n_rows))
        object.__setattr__(self, "n_cols", int(self.n_cols))

    @classmethod
    def covering(cls, lat_min, lon_min, lat_max, lon_max, cell_size=DEFAULT_CELL_SIZE) -> "GridSpec":
        """Smallest grid anchored at ``(lat_min, lon_min)`` covering the box."""
        n_rows = max(1, math.ceil((lat_max - lat_min) / cell_size - _EDGE_TOL))
        n_cols = max(1, math.ceil((lon_max - lon_min) / cell_size - _EDGE_TOL))
        return cls(lat_min, lon_min, n_rows, n_cols, cell_size)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def lat_max(self) -> float:
        return self.lat_min + self.n_rows * self.cell_size

    @property
    def lon_max(self) -> float:
        return self.lon_min + self.n_cols * self.cell_size

    @property
    def mid_lat(self) -> float:
        return self.lat_min + 0.5 * self.n_rows * self.cell_size

    def lat_edges(self) -> np.ndarray:
        return self.lat_min + np.arange(self.n_rows + 1) * self.cell_size

    def lon_edges(self) -> np.ndarray:
        return self.lon_min + np.arange(self.n_cols + 1) * self.cell_size

    def lat_centers(self) -> np.ndarray:
        return self.lat_min + (np.arange(self.n_rows) + 0.5) * self.cell_size

    def lon_centers(self) -> np.ndarray:
        return self.lon_min + (np.arange(self.n_cols) + 0.5) * self.cell_size

    def cell_center(self, row: int, col: int) -> Tuple[float, float]:
        return (
            self.lat_min + (row + 0.5) * self.cell_size,
            self.lon_min + (col + 0.5) * self.cell_size,
        )

    def locate(self, lat, lon):
        """Row/column indices of the cells containing the given points.

        A point lying on a shared edge belongs to the cell with the larger
        index. Points outside the extent (including the northern and eastern
        outer edges) get index -1 in both arrays.
        """
        rows = _edge_index(np.asarray(lat, dtype=float), self.lat_min, self.cell_size)
        cols = _edge_index(np.asarray(lon, dtype=float), self.lon_min, self.cell_size)
        inside = (rows >= 0) & (rows < self.n_rows) & (cols >= 0) & (cols < self.n_cols)
        rows = np.where(inside, rows, -1)
        cols = np.where(inside, cols, -1)
        return rows, cols

    def sub(self, row0: int, col0: int, n_rows: int, n_cols: int) -> "GridSpec":
        return GridSpec(
            self.lat_min + row0 * self.cell_size,
            self.lon_min + col0 * self.cell_size,
            n_rows,
            n_cols,
            self.cell_size,
        )


def _edge_index(values: np.ndarray, origin: float, step: float) -> np.ndarray:
    t = (values - origin) / step
    nearest = np.rint(t)
    on_edge = np.abs(t - nearest) <= _EDGE_TOL * np.maximum(1.0, np.abs(t))
    return np.where(on_edge, nearest, np.floor(t)).astype(np.int64)


def cell_area_km2(spec: GridSpec, row: int) -> float:
    """Exact spherical area of any cell in ``row``."""
    if not 0 <= row < spec.n_rows:
        raise IndexError(f"row {row} outside grid with {spec.n_rows} rows")
    bottom = math.radians(spec.lat_min + row * spec.cell_size)
    top = math.radians(spec.lat_min + (row + 1) * spec.cell_size)
    dlam = math.radians(spec.cell_size)
    return EARTH_RADIUS_KM**2 * dlam * (math.sin(top) - math.sin(bottom))


def cell_areas_km2(spec: GridSpec) -> np.ndarray:
    """Per-row cell areas, shape ``(n_rows,)``."""
    edges = np.radians(spec.lat_edges())
    return EARTH_RADIUS_KM**2 * math.radians(spec.cell_size) * np.diff(np.sin(edges))


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Nonnegative mass per cell on a :class:`GridSpec`.

    The mass array is copied and frozen on construction.
    """

    spec: GridSpec
    mass: np.ndarray
    total_mass: float = field(init=False)

    def __post_init__(self):
        mass = np.array(self.mass, dtype=np.float64, copy=True)
        if mass.shape != self.spec.shape:
            raise DataError(f"mass shape {mass.shape} does not match grid {self.spec.shape}")
        if not np.all(np.isfinite(mass)):
            raise DataError("mass contains non-finite values")
        if np.any(mass < 0):
            raise DataError("mass contains negative values")
        mass.flags.writeable = False
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "total_mass", math.fsum(mass.ravel()))

    @property
    def shape(self):
        return self.spec.shape

    def density(self) -> np.ndarray:
        """Mass per km² of every cell."""
        return self.mass / cell_areas_km2(self.spec)[:, None]

    def crop(self, row0: int, row1: int, col0: int, col1: int) -> "DensityGrid":
        """Sub-grid of rows ``[row0, row1)`` and columns ``[col0, col1)``."""
        row0, col0 = max(0, row0), max(0, col0)
        row1, col1 = min(self.spec.n_rows, row1), min(self.spec.n_cols, col1)
        if row1 <= row0 or col1 <= col0:
            raise DataError("crop window does not intersect the grid")
        spec = self.spec.sub(row0, col0, row1 - row0, col1 - col0)
        return DensityGrid(spec, self.mass[row0:row1, col0:col1])

    def aggregate(self, factor: int) -> "DensityGrid":
        """Sum ``factor x factor`` blocks; a ragged last block is zero-padded."""
        if factor < 1:
            raise DataError("aggregation factor must be >= 1")
        n_rows = -(-self.spec.n_rows // factor)
        n_cols = -(-self.spec.n_cols // factor)
        padded = np.zeros((n_rows * factor, n_cols * factor))
        padded[: self.spec.n_rows, : self.spec.n_cols] = self.mass
        coarse = padded.reshape(n_rows, factor, n_cols, factor).sum(axis=(1, 3))
        spec = GridSpec(self.spec.lat_min, self.spec.lon_min, n_rows, n_cols, self.spec.cell_size * factor)
        return DensityGrid(spec, coarse)


class CellMetric:
    """Haversine terms between cell centres, indexed by row/column offsets.

    Distances are compared through the haversine quantity
    ``h = hav(dphi) + cos(phi0) cos(phi) hav(dlam)`` which is monotone in
    great-circle distance and only needs additions and multiplications once
    the per-offset tables are built. Every caller that evaluates ``h`` through
    :meth:`hav` gets bit-identical values for the same cell pair.
    """

    def __init__(self, spec: GridSpec):
        self.spec = spec
        step = math.radians(spec.cell_size)
        self.hphi = np.sin(np.arange(spec.n_rows) * step / 2) ** 2
        self.hlam = np.sin(np.arange(spec.n_cols) * step / 2) ** 2
        self.cphi = np.cos(np.radians(spec.lat_centers()))

    def hav(self, row0, rows, dcols):
        """Haversine term from the centre of a cell in ``row0`` to cells at
        ``rows`` and absolute column offsets ``dcols`` (broadcasting)."""
        rows = np.asarray(rows)
        return self.hphi[np.abs(rows - row0)] + (self.cphi[row0] * self.cphi[rows]) * self.hlam[dcols]

    @staticmethod
    def to_km(h: float) -> float:
        return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, max(0.0, float(h)))))

    @staticmethod
    def from_km(r_km: float) -> float:
        """Haversine term for a distance (inverse of :meth:`to_km`)."""
        theta = min(math.pi, max(0.0, r_km / EARTH_RADIUS_KM))
        return math.sin(theta / 2) ** 2
