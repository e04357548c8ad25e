"""Threshold clustering, hole filling and polygon outlines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import DataError
from .grid import DensityGrid, GridSpec, cell_areas_km2, haversine_km_array

_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True, eq=False)
class Cluster:
    label: int
    cells: np.ndarray  # (n, 2) row, col in row-major order
    mass: float
    area_km2: float
    holes_filled: bool  # True when filling added below-threshold cells
    is_principal: bool = False


@dataclass(frozen=True, eq=False)
class BoundarySet:
    threshold_density: float
    clusters: Tuple[Cluster, ...]
    connectivity: int
    spec: GridSpec
    labels: np.ndarray  # 0 = outside every cluster
    provenance: Dict = field(default_factory=dict)

    @property
    def principal(self) -> Optional[Cluster]:
        for c in self.clusters:
            if c.is_principal:
                return c
        return None

    def mask(self, label: int) -> np.ndarray:
        return self.labels == label


def _check_connectivity(connectivity: int) -> None:
    if connectivity not in _STRUCTURE:
        raise DataError(f"connectivity must be 4 or 8, got {connectivity}")


def outside_mask(mask: np.ndarray) -> np.ndarray:
    """Cells outside ``mask`` that a 4-connected walk over non-mask cells
    links to the grid frame."""
    lab, _ = ndimage.label(~mask, structure=_STRUCTURE[4])
    frame = np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))
    frame = frame[frame > 0]
    return np.isin(lab, frame)


def fill_holes(mask: np.ndarray) -> np.ndarray:
    return ~outside_mask(mask)


def is_hole_free(mask: np.ndarray) -> bool:
    return bool(np.array_equal(outside_mask(mask), ~mask))


def _order_labels(lab: np.ndarray, n: int, mass: np.ndarray) -> np.ndarray:
    """Relabel 1..n by descending mass, ties by first cell in row-major order."""
    if n == 0:
        return lab
    flat = lab.ravel()
    m = mass.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(1, n + 2))
    # within a label the stable sort keeps row-major order, so order[a] is the first cell
    totals = np.array([math.fsum(m[order[a:b]]) for a, b in zip(bounds, bounds[1:])])
    first = order[bounds[:-1]]
    rank = np.lexsort((first, -totals))
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[rank + 1] = np.arange(1, n + 1)
    return remap[lab]


def cluster_above(grid: DensityGrid, rho0: float, connectivity: int = 4) -> BoundarySet:
    """Connected, hole-free clusters of cells whose density exceeds ``rho0``.

    Below-threshold cells that cannot reach the grid frame through
    4-connected below-threshold cells are merged into the cluster around
    them. An empty set is returned when no cell exceeds ``rho0``.
    """
    _check_connectivity(connectivity)
    if not rho0 > 0:
        raise DataError("threshold density must be > 0")
    above = grid.density() > rho0
    filled = fill_holes(above)
    lab, n = ndimage.label(filled, structure=_STRUCTURE[connectivity])
    lab = _order_labels(lab.astype(np.int64), n, grid.mass)
    areas = cell_areas_km2(grid.spec)
    clusters = []
    for k in range(1, n + 1):
        sel = lab == k
        rows, cols = np.nonzero(sel)
        clusters.append(
            Cluster(
                label=k,
                cells=np.column_stack([rows, cols]),
                mass=math.fsum(grid.mass[sel]),
                area_km2=math.fsum(areas[rows]),
                holes_filled=bool(np.any(sel & ~above)),
            )
        )
    return BoundarySet(float(rho0), tuple(clusters), connectivity, grid.spec, lab)


def cluster_centroid(spec: GridSpec, cluster: Cluster) -> Tuple[float, float]:
    lat = spec.lat_centers()[cluster.cells[:, 0]].mean()
    lon = spec.lon_centers()[cluster.cells[:, 1]].mean()
    return float(lat), float(lon)


def mark_principal(bset: BoundarySet, point: Tuple[float, float]) -> BoundarySet:
    """Flag the cluster holding ``point``'s cell, else the one whose centroid
    is nearest to ``point`` (ties to the lower label)."""
    if not bset.clusters:
        return bset
    row, col = bset.spec.locate(*point)
    label = int(bset.labels[row, col]) if row >= 0 and col >= 0 else 0
    if label == 0:
        dists = [haversine_km_array(point[0], point[1], *cluster_centroid(bset.spec, c)) for c in bset.clusters]
        label = bset.clusters[int(np.argmin(dists))].label
    clusters = tuple(
        Cluster(c.label, c.cells, c.mass, c.area_km2, c.holes_filled, c.label == label) for c in bset.clusters
    )
    return BoundarySet(bset.threshold_density, clusters, bset.connectivity, bset.spec, bset.labels, bset.provenance)


# --- polygon tracing -------------------------------------------------------

# direction vectors in (x = col, y = row) vertex coordinates
_DIRS = {(1, 0): 0, (0, 1): 1, (-1, 0): 2, (0, -1): 3}


def _boundary_edges(mask: np.ndarray) -> Dict[Tuple[int, int], List[Tuple[int, int]]]:
    """Directed cell edges with the mask on their left, keyed by start vertex."""
    m = np.pad(mask, 1)
    inner = m[1:-1, 1:-1]
    edges: Dict[Tuple[int, int], List[Tuple[int, int]]] = {}

    def add(rows, cols, d0, d1):
        for y, x in zip(rows.tolist(), cols.tolist()):
            edges.setdefault((x + d0[0], y + d0[1]), []).append((x + d1[0], y + d1[1]))

    r, c = np.nonzero(inner & ~m[:-2, 1:-1])  # south side open
    add(r, c, (0, 0), (1, 0))
    r, c = np.nonzero(inner & ~m[1:-1, 2:])  # east
    add(r, c, (1, 0), (1, 1))
    r, c = np.nonzero(inner & ~m[2:, 1:-1])  # north
    add(r, c, (1, 1), (0, 1))
    r, c = np.nonzero(inner & ~m[1:-1, :-2])  # west
    add(r, c, (0, 1), (0, 0))
    return edges


def _turn_rank(d_in, d_out) -> int:
    # left turn first, then straight, then right
    diff = (_DIRS[d_out] - _DIRS[d_in]) % 4
    return {1: 0, 0: 1, 3: 2}[diff]


def trace_loops(mask: np.ndarray) -> List[List[Tuple[int, int]]]:
    """Closed vertex loops (x = col, y = row) around ``mask``; exteriors run
    counterclockwise. Where two cells meet only at a corner the walk turns
    left, so corner-touching parts come out as separate loops."""
    edges = _boundary_edges(mask)
    loops = []
    for start in sorted(edges):
        while edges[start]:
            loop = [start]
            cur, nxt = start, edges[start].pop(0)
            while True:
                d_in = (nxt[0] - cur[0], nxt[1] - cur[1])
                cur = nxt
                if cur == start:
                    break
                loop.append(cur)
                outs = edges[cur]
                k = min(range(len(outs)), key=lambda i: _turn_rank(d_in, (outs[i][0] - cur[0], outs[i][1] - cur[1])))
                nxt = outs.pop(k)
            loops.append(_drop_collinear(loop))
    return loops


def _drop_collinear(loop: List[Tuple[int, int]]) -> List[Tuple[int, int]]:
    n = len(loop)
    out = []
    for i in range(n):
        a, b, c = loop[i - 1], loop[i], loop[(i + 1) % n]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) != 0:
            out.append(b)
    return out


def loop_area(loop: Sequence[Tuple[float, float]]) -> float:
    """Signed shoelace area; positive for counterclockwise loops."""
    xy = np.asarray(loop, dtype=float)
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _loop_lonlat(spec: GridSpec, loop) -> List[List[float]]:
    cs = spec.cell_size
    coords = [[spec.lon_min + x * cs, spec.lat_min + y * cs] for x, y in loop]
    return coords + [coords[0]]


def cluster_geometry(spec: GridSpec, mask: np.ndarray) -> Dict:
    """GeoJSON geometry ([lon, lat] positions) of the cells in ``mask``."""
    loops = trace_loops(mask)
    shells = [lp for lp in loops if loop_area(lp) > 0]
    holes = [lp for lp in loops if loop_area(lp) < 0]
    if holes:
        # hole-filled clusters never produce these; keep them attached to the first shell
        polys = [[_loop_lonlat(spec, shells[0])] + [_loop_lonlat(spec, h) for h in holes]]
        polys += [[_loop_lonlat(spec, s)] for s in shells[1:]]
    else:
        polys = [[_loop_lonlat(spec, s)] for s in shells]
    if len(polys) == 1:
        return {"type": "Polygon", "coordinates": polys[0]}
    return {"type": "MultiPolygon", "coordinates": polys}


def polygonize(bset: BoundarySet) -> Dict:
    """GeoJSON FeatureCollection with one feature per cluster."""
    features = []
    for c in bset.clusters:
        features.append(
            {
                "type": "Feature",
                "properties": {
                    "label": c.label,
                    "mass": c.mass,
                    "area_km2": c.area_km2,
                    "threshold": bset.threshold_density,
                    "is_principal": c.is_principal,
                },
                "geometry": cluster_geometry(bset.spec, bset.labels == c.label),
            }
        )
    return {"type": "FeatureCollection", "features": features}


# --- comparison --------------------------------------------------------------


def _points_in_ring(x: np.ndarray, y: np.ndarray, ring) -> np.ndarray:
    """Even-odd ray cast; ``ring`` holds [x, y] pairs."""
    pts = np.asarray(ring, dtype=float)
    if len(pts) > 1 and np.array_equal(pts[0], pts[-1]):
        pts = pts[:-1]
    inside = np.zeros(x.shape, dtype=bool)
    xj, yj = pts[-1]
    for xi, yi in pts:
        crosses = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside ^= crosses & (x < xint)
        xj, yj = xi, yi
    return inside


def geometry_mask(spec: GridSpec, geometry: Dict) -> np.ndarray:
    """Cells whose centre lies inside a GeoJSON Polygon or MultiPolygon."""
    lon, lat = np.meshgrid(spec.lon_centers(), spec.lat_centers())
    if geometry["type"] == "Polygon":
        polys = [geometry["coordinates"]]
    elif geometry["type"] == "MultiPolygon":
        polys = geometry["coordinates"]
    else:
        raise DataError(f"unsupported geometry type {geometry['type']!r}")
    out = np.zeros(spec.shape, dtype=bool)
    for rings in polys:
        inside = _points_in_ring(lon, lat, rings[0])
        for hole in rings[1:]:
            inside &= ~_points_in_ring(lon, lat, hole)
        out |= inside
    return out


def features_mask(spec: GridSpec, collection: Dict) -> np.ndarray:
    feats = collection["features"] if collection.get("type") == "FeatureCollection" else [collection]
    out = np.zeros(spec.shape, dtype=bool)
    for feat in feats:
        geom = feat["geometry"] if feat.get("type") == "Feature" else feat
        out |= geometry_mask(spec, geom)
    return out


@dataclass(frozen=True)
class OverlapReport:
    jaccard: float  # shared cells over cells in either set
    area_a_km2: float
    area_b_km2: float
    area_intersection_km2: float
    cells_a: int
    cells_b: int
    cells_intersection: int


def compare_boundaries(spec: GridSpec, a, b) -> OverlapReport:
    """Cell-membership overlap of two boundary sets.

    ``a`` and ``b`` are boolean cell masks or GeoJSON objects; polygons are
    turned into cells by testing cell centres.
    """
    ma = _as_mask(spec, a)
    mb = _as_mask(spec, b)
    if not ma.any() or not mb.any():
        raise DataError("both boundary sets must cover at least one cell")
    areas = np.broadcast_to(cell_areas_km2(spec)[:, None], spec.shape)
    inter = ma & mb
    union = ma | mb
    area_i = math.fsum(areas[inter])
    return OverlapReport(
        jaccard=int(inter.sum()) / int(union.sum()),
        area_a_km2=math.fsum(areas[ma]),
        area_b_km2=math.fsum(areas[mb]),
        area_intersection_km2=area_i,
        cells_a=int(ma.sum()),
        cells_b=int(mb.sum()),
        cells_intersection=int(inter.sum()),
    )


def _as_mask(spec: GridSpec, obj) -> np.ndarray:
    if isinstance(obj, dict):
        return features_mask(spec, obj)
    m = np.asarray(obj, dtype=bool)
    if m.shape != spec.shape:
        raise DataError(f"mask shape {m.shape} does not match grid {spec.shape}")
    return m
