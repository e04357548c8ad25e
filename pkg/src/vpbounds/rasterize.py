"""Mass-conserving rasterisation of valued polygons and weighted points.

Overlap areas are computed in a local equirectangular plane: longitudes are
scaled by the cosine of the grid's mid-latitude. Only area *ratios* enter the
cell values, so the scale factor cancels; it is kept so that the planar areas
reported by :func:`planar_area` are in comparable units across both axes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DataError, DegeneratePolygonError
from .grid import DensityGrid, GridSpec

logger = logging.getLogger(__name__)

LatLon = Tuple[float, float]


@dataclass(frozen=True)
class ValuedPolygon:
    exterior: Tuple[LatLon, ...]
    value: float
    holes: Tuple[Tuple[LatLon, ...], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "exterior", _normalise_ring(self.exterior))
        object.__setattr__(self, "holes", tuple(_normalise_ring(h) for h in self.holes))


def _normalise_ring(ring) -> Tuple[LatLon, ...]:
    pts = [(float(lat), float(lon)) for lat, lon in ring]
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts.pop()
    return tuple(pts)


def planar_scale(spec: GridSpec) -> float:
    """Longitude scale factor of the equirectangular approximation."""
    return math.cos(math.radians(spec.mid_lat))


def _shoelace(xy: np.ndarray) -> float:
    if len(xy) < 3:
        return 0.0
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _ring_xy(ring: Sequence[LatLon], kx: float) -> np.ndarray:
    arr = np.asarray(ring, dtype=np.float64).reshape(-1, 2)
    return np.column_stack([arr[:, 1] * kx, arr[:, 0]])


def planar_area(poly: ValuedPolygon, kx: float = 1.0) -> float:
    """Area of exterior minus holes in the (scaled) lon/lat plane."""
    area = abs(_shoelace(_ring_xy(poly.exterior, kx)))
    for hole in poly.holes:
        area -= abs(_shoelace(_ring_xy(hole, kx)))
    return area


def _clip_halfplane(xy: np.ndarray, axis: int, value: float, keep_below: bool) -> np.ndarray:
    """Sutherland-Hodgman clip of a closed ring against one axis-aligned half-plane."""
    if len(xy) == 0:
        return xy
    coord = xy[:, axis]
    inside = coord <= value if keep_below else coord >= value
    if inside.all():
        return xy
    if not inside.any():
        return xy[:0]
    nxt = np.roll(xy, -1, axis=0)
    nxt_inside = np.roll(inside, -1)
    crossing = inside != nxt_inside
    denom = nxt[:, axis] - coord
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(crossing, (value - coord) / denom, 0.0)
    inter = xy + t[:, None] * (nxt - xy)
    inter[crossing, axis] = value
    out = np.stack([xy, inter], axis=1).reshape(-1, 2)
    keep = np.stack([inside, crossing], axis=1).reshape(-1)
    return out[keep]


def _ring_cell_areas(xy: np.ndarray, spec: GridSpec, kx: float, out: np.ndarray) -> None:
    """Accumulate ``|ring ∩ cell|`` (orientation-normalised) into ``out``."""
    lat_edges = spec.lat_edges()
    lon_edges = spec.lon_edges() * kx
    ymin, ymax = xy[:, 1].min(), xy[:, 1].max()
    xmin, xmax = xy[:, 0].min(), xy[:, 0].max()
    r0 = max(0, int(np.searchsorted(lat_edges, ymin, side="right")) - 1)
    r1 = min(spec.n_rows, int(np.searchsorted(lat_edges, ymax, side="left")))
    c0 = max(0, int(np.searchsorted(lon_edges, xmin, side="right")) - 1)
    c1 = min(spec.n_cols, int(np.searchsorted(lon_edges, xmax, side="left")))
    if r1 <= r0 or c1 <= c0:
        return
    sign = 1.0 if _shoelace(xy) >= 0 else -1.0
    for i in range(r0, r1):
        strip = _clip_halfplane(xy, 1, lat_edges[i], keep_below=False)
        strip = _clip_halfplane(strip, 1, lat_edges[i + 1], keep_below=True)
        if len(strip) < 3:
            continue
        sx_min, sx_max = strip[:, 0].min(), strip[:, 0].max()
        j0 = max(c0, int(np.searchsorted(lon_edges, sx_min, side="right")) - 1)
        j1 = min(c1, int(np.searchsorted(lon_edges, sx_max, side="left")))
        if j1 <= j0:
            continue
        # area left of each column edge; cell area is the difference of neighbours
        strip = _clip_halfplane(strip, 0, lon_edges[j0], keep_below=False)
        left = np.empty(j1 - j0 + 1)
        left[0] = 0.0
        for k, j in enumerate(range(j0 + 1, j1 + 1)):
            left[k + 1] = sign * _shoelace(_clip_halfplane(strip, 0, lon_edges[j], keep_below=True))
        out[i, j0:j1] += np.diff(left)


def rasterize_polygons(polygons: Sequence[ValuedPolygon], spec: GridSpec) -> DensityGrid:
    """Spread each polygon's value over the cells it overlaps, in proportion
    to overlap area. Parts of a polygon outside the grid are lost."""
    kx = planar_scale(spec)
    total = np.zeros(spec.shape)
    for index, poly in enumerate(polygons):
        if poly.value < 0 or not math.isfinite(poly.value):
            raise DataError(f"feature {index}: value must be a nonnegative finite number")
        if len(poly.exterior) < 3:
            raise DegeneratePolygonError(index, "exterior ring has fewer than 3 vertices")
        area = planar_area(poly, kx)
        if not area > 0:
            raise DegeneratePolygonError(index, "polygon has zero area")
        if poly.value == 0:
            continue
        overlap = np.zeros(spec.shape)
        _ring_cell_areas(_ring_xy(poly.exterior, kx), spec, kx, overlap)
        for hole in poly.holes:
            hole_overlap = np.zeros(spec.shape)
            _ring_cell_areas(_ring_xy(hole, kx), spec, kx, hole_overlap)
            overlap -= hole_overlap
        np.maximum(overlap, 0.0, out=overlap)
        total += overlap * (poly.value / area)
    return DensityGrid(spec, total)


def rasterize_points(points, spec: GridSpec) -> Tuple[DensityGrid, int]:
    """Add each point's weight to its containing cell.

    ``points`` is a sequence of ``(lat, lon)`` or ``(lat, lon, weight)``.
    Returns the grid and the number of points that fell outside it.
    """
    arr = np.asarray([tuple(p) + (1.0,) * (3 - len(p)) for p in points], dtype=np.float64).reshape(-1, 3)
    if np.any(arr[:, 2] < 0):
        raise DataError("point weights must be nonnegative")
    rows, cols = spec.locate(arr[:, 0], arr[:, 1])
    inside = rows >= 0
    n_outside = int((~inside).sum())
    if n_outside:
        logger.warning("%d of %d points fall outside the grid", n_outside, len(arr))
    mass = np.zeros(spec.shape)
    np.add.at(mass, (rows[inside], cols[inside]), arr[inside, 2])
    return DensityGrid(spec, mass), n_outside


def split_multipolygon(parts: List[List[Sequence[LatLon]]], value: float, kx: float = 1.0) -> List[ValuedPolygon]:
    """Turn MultiPolygon parts (each ``[exterior, *holes]``) into polygons with
    ``value`` apportioned by planar area."""
    polys = [ValuedPolygon(tuple(rings[0]), 0.0, tuple(tuple(h) for h in rings[1:])) for rings in parts]
    areas = [planar_area(p, kx) for p in polys]
    total = sum(areas)
    if not total > 0:
        raise DataError("multipolygon has zero area")
    return [ValuedPolygon(p.exterior, value * a / total, p.holes) for p, a in zip(polys, areas)]
