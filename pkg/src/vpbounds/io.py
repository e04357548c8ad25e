"""Readers and writers for the on-disk formats.

Floats are written with ``repr`` so every file round-trips bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .boundary import BoundarySet, polygonize
from .errors import DataError, FeatureError
from .grid import DEFAULT_CELL_SIZE, CellMetric, DensityGrid, GridSpec
from .rasterize import ValuedPolygon, split_multipolygon
from .ringfit import RingFit
from .ringmodel import Ring, RingModel, check_invariants, default_ring_index, threshold_density
from .vp import VpCircle, VpProfile

GRID_MAGIC = b"VPGRID01"
_HEADER = struct.Struct("<8sdddII")
HEADER_SIZE = 64


# --- inputs ------------------------------------------------------------------


def _lonlat_ring(ring, index) -> List[Tuple[float, float]]:
    try:
        pts = [(float(p[1]), float(p[0])) for p in ring]
    except (TypeError, ValueError, IndexError) as exc:
        raise FeatureError(index, f"malformed coordinates ({exc})") from None
    if len(pts) < 3:
        raise FeatureError(index, "ring has fewer than 3 positions")
    return pts


def load_geojson(path, value_field: str) -> List[ValuedPolygon]:
    """Polygons from a FeatureCollection; MultiPolygon parts share the value
    in proportion to their planar area."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None
    if doc.get("type") != "FeatureCollection" or not isinstance(doc.get("features"), list):
        raise DataError(f"{path}: expected a GeoJSON FeatureCollection")
    out: List[ValuedPolygon] = []
    for i, feat in enumerate(doc["features"]):
        props = feat.get("properties") or {}
        if value_field not in props:
            raise FeatureError(i, f"missing property {value_field!r}")
        value = props[value_field]
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise FeatureError(i, f"property {value_field!r} is not a finite number: {value!r}")
        if value < 0:
            raise FeatureError(i, f"property {value_field!r} is negative")
        geom = feat.get("geometry") or {}
        kind = geom.get("type")
        coords = geom.get("coordinates")
        if kind == "Polygon" and coords:
            rings = [_lonlat_ring(r, i) for r in coords]
            out.append(ValuedPolygon(tuple(rings[0]), float(value), tuple(tuple(r) for r in rings[1:])))
        elif kind == "MultiPolygon" and coords:
            parts = [[_lonlat_ring(r, i) for r in poly] for poly in coords]
            try:
                out.extend(split_multipolygon(parts, float(value)))
            except DataError as exc:
                raise FeatureError(i, str(exc)) from None
        else:
            raise FeatureError(i, f"unsupported or empty geometry {kind!r}")
    return out


def load_csv(path, value_field: str = "weight") -> List[Tuple[float, float, float]]:
    """Points from a CSV with ``lat`` and ``lon`` columns; a missing or empty
    weight counts as 1."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"lat", "lon"} <= set(reader.fieldnames):
            raise DataError(f"{path}: header must contain lat and lon")
        out = []
        for i, row in enumerate(reader):
            try:
                lat, lon = float(row["lat"]), float(row["lon"])
                raw = row.get(value_field)
                w = 1.0 if raw is None or raw.strip() == "" else float(raw)
            except ValueError as exc:
                raise FeatureError(i, f"non-numeric value ({exc})") from None
            if not (-90 <= lat <= 90) or not all(map(math.isfinite, (lat, lon, w))):
                raise FeatureError(i, "coordinates or weight out of range")
            if w < 0:
                raise FeatureError(i, "negative weight")
            out.append((lat, lon, w))
    return out


# --- grids -------------------------------------------------------------------


def write_grid_binary(grid: DensityGrid, path) -> None:
    s = grid.spec
    header = _HEADER.pack(GRID_MAGIC, s.lat_min, s.lon_min, s.cell_size, s.n_rows, s.n_cols)
    with open(path, "wb") as fh:
        fh.write(header.ljust(HEADER_SIZE, b"\0"))
        fh.write(np.ascontiguousarray(grid.mass, dtype="<f8").tobytes())


def read_grid_binary(path) -> DensityGrid:
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE or data[:8] != GRID_MAGIC:
        raise DataError(f"{path}: not a VPGRID01 file")
    _, lat_min, lon_min, cell_size, n_rows, n_cols = _HEADER.unpack_from(data)
    body = data[HEADER_SIZE:]
    if len(body) != 8 * n_rows * n_cols:
        raise DataError(f"{path}: expected {n_rows}x{n_cols} cells, file size disagrees")
    mass = np.frombuffer(body, dtype="<f8").reshape(n_rows, n_cols)
    return DensityGrid(GridSpec(lat_min, lon_min, n_rows, n_cols, cell_size), mass)


def write_grid_csv(grid: DensityGrid, path) -> None:
    s = grid.spec
    lat, lon = s.lat_centers(), s.lon_centers()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "lat_center", "lon_center", "mass"])
        for i in range(s.n_rows):
            for j in range(s.n_cols):
                w.writerow([i, j, repr(float(lat[i])), repr(float(lon[j])), repr(float(grid.mass[i, j]))])


def read_grid_csv(path, cell_size: Optional[float] = None) -> DensityGrid:
    """Grid CSV with every cell listed. The cell size is taken from the
    centre spacing unless given (required for a 1x1 grid)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: no cells")
    try:
        r = np.array([int(x["row"]) for x in rows])
        c = np.array([int(x["col"]) for x in rows])
        lat = np.array([float(x["lat_center"]) for x in rows])
        lon = np.array([float(x["lon_center"]) for x in rows])
        m = np.array([float(x["mass"]) for x in rows])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: bad grid CSV ({exc})") from None
    n_rows, n_cols = int(r.max()) + 1, int(c.max()) + 1
    if len(rows) != n_rows * n_cols or r.min() < 0 or c.min() < 0:
        raise DataError(f"{path}: grid CSV must list every cell exactly once")
    if cell_size is None:
        if n_rows > 1:
            cell_size = (lat.max() - lat.min()) / (n_rows - 1)
        elif n_cols > 1:
            cell_size = (lon.max() - lon.min()) / (n_cols - 1)
        else:
            cell_size = DEFAULT_CELL_SIZE
        # centres are printed from lat_min + (i + 0.5) * size; snap away rounding noise
        cell_size = float(f"{cell_size:.12g}")
    lat_min = float(lat[r == 0][0] - 0.5 * cell_size)
    lon_min = float(lon[c == 0][0] - 0.5 * cell_size)
    mass = np.zeros((n_rows, n_cols))
    mass[r, c] = m
    return DensityGrid(GridSpec(lat_min, lon_min, n_rows, n_cols, cell_size), mass)


def read_grid(path) -> DensityGrid:
    with open(path, "rb") as fh:
        magic = fh.read(8)
    return read_grid_binary(path) if magic == GRID_MAGIC else read_grid_csv(path)


def write_grid(grid: DensityGrid, path, fmt: str = "binary") -> None:
    if fmt == "binary":
        write_grid_binary(grid, path)
    elif fmt == "csv":
        write_grid_csv(grid, path)
    else:
        raise DataError(f"unknown grid format {fmt!r}")


# --- profiles ------------------------------------------------------------------

PROFILE_FIELDS = ["f", "radius_km", "center_lat", "center_lon", "achieved_fraction", "cells_included"]


def write_profile_csv(profile: VpProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_FIELDS)
        for f, c in profile.entries:
            w.writerow([repr(f), repr(c.radius_km), repr(c.center[0]), repr(c.center[1]),
                        repr(c.achieved_fraction), c.cells_included])


def read_profile_csv(path, total_mass: Optional[float] = None) -> VpProfile:
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PROFILE_FIELDS:
            raise DataError(f"{path}: header must be {','.join(PROFILE_FIELDS)}")
        for i, row in enumerate(reader):
            try:
                f = float(row["f"])
                r = float(row["radius_km"])
                circle = VpCircle(
                    center=(float(row["center_lat"]), float(row["center_lon"])),
                    radius_km=r,
                    target_fraction=f,
                    achieved_fraction=float(row["achieved_fraction"]),
                    cells_included=int(row["cells_included"]),
                    center_cell=(-1, -1),  # not stored in the CSV
                    h=CellMetric.from_km(r),
                )
            except ValueError as exc:
                raise FeatureError(i, f"bad profile row ({exc})") from None
            entries.append((f, circle))
    if not entries:
        raise DataError(f"{path}: empty profile")
    return VpProfile(tuple(entries), total_mass)


def write_circle_csv(circle: VpCircle, path) -> None:
    write_profile_csv(VpProfile(((circle.target_fraction, circle),)), path)


# --- fits and models -------------------------------------------------------------


def fit_to_dict(fit: RingFit) -> Dict:
    segs = fit.segments()
    return {
        "n_segments": fit.n_segments,
        "segments": [{"slope": s, "logf_start": a, "logf_end": b} for s, a, b in segs],
        "breakpoints": [
            {"logf": b, "f": math.exp(b), "r_km": math.exp(fit.predict(b))} for b in fit.breakpoints_logf
        ],
        "rss": fit.rss,
        "intercept": fit.intercept,
        "fit_range_logf": list(fit.fit_range_logf),
        "n_points": fit.n_points,
        "mask": {"excluded_low_f": fit.excluded_low_f, "n_excluded": fit.n_excluded},
    }


def fit_from_dict(d: Dict) -> RingFit:
    try:
        return RingFit(
            n_segments=int(d["n_segments"]),
            breakpoints_logf=tuple(float(b["logf"]) for b in d["breakpoints"]),
            slopes=tuple(float(s["slope"]) for s in d["segments"]),
            intercept=float(d["intercept"]),
            rss=float(d["rss"]),
            fit_range_logf=tuple(map(float, d["fit_range_logf"])),
            n_points=int(d["n_points"]),
            excluded_low_f=d["mask"]["excluded_low_f"],
            n_excluded=int(d["mask"]["n_excluded"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad fit report ({exc})") from None


def model_to_dict(model: RingModel, ring_index: Optional[int] = None, side: str = "inner") -> Dict:
    b = default_ring_index(model) if ring_index is None else ring_index
    out = {
        "rings": [{"r_inner_km": r.r_inner_km, "r_outer_km": r.r_outer_km, "a": r.a, "c": r.c} for r in model.rings],
        "total_mass": model.total_mass,
        "outer_radius_km": model.outer_radius_km,
        "ring_index": b,
        "threshold_side": side,
        "threshold_density": threshold_density(model, b, side),
        "extrapolation_logf": model.extrapolation_logf,
    }
    if len(model.rings) > 1 and side == "inner" and b + 1 < len(model.rings):
        out["threshold_density_outer_side"] = threshold_density(model, b, "outer")
    return out


def model_from_dict(d: Dict) -> RingModel:
    try:
        rings = tuple(Ring(float(r["r_inner_km"]), float(r["r_outer_km"]), float(r["a"]), float(r["c"])) for r in d["rings"])
        model = RingModel(rings, float(d["total_mass"]), float(d.get("extrapolation_logf", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad model report ({exc})") from None
    check_invariants(model)
    return model


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None


def write_boundary_geojson(bset: BoundarySet, path) -> None:
    write_json(polygonize(bset), path)


# --- fuzz -------------------------------------------------------------------------


def write_frequency_csv(spec: GridSpec, frequency: np.ndarray, path) -> None:
    lat, lon = spec.lat_centers(), spec.lon_centers()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "lat_center", "lon_center", "inclusion_fraction"])
        for i in range(spec.n_rows):
            for j in range(spec.n_cols):
                w.writerow([i, j, repr(float(lat[i])), repr(float(lon[j])), repr(float(frequency[i, j]))])
