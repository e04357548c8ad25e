import json

import numpy as np
import pytest

from vpbounds.errors import DataError, FeatureError
from vpbounds.grid import DensityGrid, GridSpec
from vpbounds.io import (
    GRID_MAGIC,
    HEADER_SIZE,
    fit_from_dict,
    fit_to_dict,
    load_csv,
    load_geojson,
    model_from_dict,
    model_to_dict,
    read_grid,
    read_grid_binary,
    read_profile_csv,
    write_grid,
    write_profile_csv,
)
from vpbounds.ringfit import RingFit
from vpbounds.ringmodel import build_model
from vpbounds.vp import vp_profile

from conftest import random_grid


def square(lon, lat, d=0.01):
    return [[lon, lat], [lon + d, lat], [lon + d, lat + d], [lon, lat + d], [lon, lat]]


def collection(*features):
    return {"type": "FeatureCollection", "features": list(features)}


def feature(geometry, **props):
    return {"type": "Feature", "geometry": geometry, "properties": props}


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return p


def test_geojson_two_polygons(tmp_path):
    doc = collection(
        feature({"type": "Polygon", "coordinates": [square(-1.0, 50.0)]}, pop=10),
        feature({"type": "Polygon", "coordinates": [square(-0.9, 50.1)]}, pop=20.0),
    )
    polys = load_geojson(write(tmp_path, "a.geojson", doc), "pop")
    assert len(polys) == 2
    assert sum(p.value for p in polys) == 30.0
    # lon/lat in the file, lat/lon in memory
    assert polys[0].exterior[0] == (50.0, -1.0)


def test_geojson_multipolygon_equal_parts(tmp_path):
    geom = {"type": "MultiPolygon", "coordinates": [[square(-1.0, 50.0)], [square(-0.5, 50.0)]]}
    polys = load_geojson(write(tmp_path, "m.geojson", collection(feature(geom, v=10))), "v")
    assert [p.value for p in polys] == pytest.approx([5.0, 5.0], rel=1e-9)


def test_geojson_polygon_hole_kept(tmp_path):
    geom = {"type": "Polygon", "coordinates": [square(-1.0, 50.0, 0.04), square(-0.99, 50.01, 0.01)]}
    (p,) = load_geojson(write(tmp_path, "h.geojson", collection(feature(geom, v=1))), "v")
    assert len(p.holes) == 1


@pytest.mark.parametrize(
    "props,geom,reason",
    [
        ({}, {"type": "Polygon", "coordinates": [square(0, 0)]}, "missing"),
        ({"v": "ten"}, {"type": "Polygon", "coordinates": [square(0, 0)]}, "finite number"),
        ({"v": -1}, {"type": "Polygon", "coordinates": [square(0, 0)]}, "negative"),
        ({"v": 1}, {"type": "Polygon", "coordinates": [[[0, 0], [1, 1]]]}, "fewer than 3"),
        ({"v": 1}, {"type": "Point", "coordinates": [0, 0]}, "unsupported"),
        ({"v": 1}, {"type": "Polygon", "coordinates": [[[0, 0], [1], [1, 1]]]}, "malformed"),
    ],
)
def test_geojson_errors_name_feature(tmp_path, props, geom, reason):
    good = feature({"type": "Polygon", "coordinates": [square(0, 0)]}, v=1)
    doc = collection(good, {"type": "Feature", "geometry": geom, "properties": props})
    with pytest.raises(FeatureError) as err:
        load_geojson(write(tmp_path, "bad.geojson", doc), "v")
    assert err.value.index == 1
    assert reason in err.value.reason


def test_geojson_not_a_collection(tmp_path):
    with pytest.raises(DataError):
        load_geojson(write(tmp_path, "x.geojson", {"type": "Feature"}), "v")
    with pytest.raises(DataError):
        load_geojson(write(tmp_path, "y.geojson", "{not json"), "v")


def test_csv_three_points(tmp_path):
    p = write(tmp_path, "p.csv", "lat,lon,weight\n50.0,-1.0,2\n50.1,-0.9,\n50.2,-0.8,0.5\n")
    assert load_csv(p) == [(50.0, -1.0, 2.0), (50.1, -0.9, 1.0), (50.2, -0.8, 0.5)]


def test_csv_without_weight_column(tmp_path):
    p = write(tmp_path, "p.csv", "lon,lat\n-1.0,50.0\n")
    assert load_csv(p) == [(50.0, -1.0, 1.0)]


def test_csv_errors(tmp_path):
    with pytest.raises(DataError):
        load_csv(write(tmp_path, "a.csv", "x,y\n1,2\n"))
    with pytest.raises(FeatureError) as err:
        load_csv(write(tmp_path, "b.csv", "lat,lon,weight\n50,0,1\n50,zero,1\n"))
    assert err.value.index == 1
    with pytest.raises(FeatureError) as err:
        load_csv(write(tmp_path, "c.csv", "lat,lon,weight\n50,0,-2\n"))
    assert err.value.index == 0


@pytest.mark.parametrize("fmt", ["binary", "csv"])
def test_grid_round_trip(tmp_path, rng, fmt):
    g = random_grid(rng, 7, 9, lat_min=51.23)
    path = tmp_path / f"g.{fmt}"
    write_grid(g, path, fmt)
    back = read_grid(path)
    assert back.spec == g.spec
    assert np.array_equal(back.mass, g.mass)


def test_binary_header_layout(tmp_path):
    g = DensityGrid(GridSpec(50.0, -1.0, 2, 3, 0.01), np.arange(6.0).reshape(2, 3))
    path = tmp_path / "g.bin"
    write_grid(g, path)
    data = path.read_bytes()
    assert data[:8] == GRID_MAGIC
    assert len(data) == HEADER_SIZE + 6 * 8
    assert np.array_equal(np.frombuffer(data[HEADER_SIZE:], "<f8"), np.arange(6.0))


def test_binary_size_mismatch(tmp_path):
    path = tmp_path / "g.bin"
    write_grid(DensityGrid(GridSpec(0, 0, 2, 2, 0.01), np.ones((2, 2))), path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataError):
        read_grid_binary(path)


def test_profile_round_trip(tmp_path, rng):
    g = random_grid(rng, 8, 8)
    prof = vp_profile(g, [0.2, 0.5, 1.0])
    path = tmp_path / "p.csv"
    write_profile_csv(prof, path)
    back = read_profile_csv(path, g.total_mass)
    assert np.array_equal(back.fractions, prof.fractions)
    assert np.array_equal(back.radii_km, prof.radii_km)
    assert np.array_equal(back.cells, prof.cells)
    assert [c.center for c in back.circles()] == [c.center for c in prof.circles()]


def test_fit_and_model_round_trip():
    fit = RingFit(2, (-2.0,), (0.5, 1.5), 3.0, 0.25, (-5.0, 0.0), 40, 1e-3, 2)
    assert fit_from_dict(json.loads(json.dumps(fit_to_dict(fit)))) == fit
    model = build_model([2.0, 0.5], [10.0, 30.0], 1e6)
    d = json.loads(json.dumps(model_to_dict(model)))
    assert model_from_dict(d) == model
    assert d["threshold_density"] > 0 and "threshold_density_outer_side" in d


def test_model_from_dict_rejects_broken_model():
    d = model_to_dict(build_model([2.0, 0.5], [10.0, 30.0], 1e6))
    d["rings"][1]["c"] *= 2
    with pytest.raises(DataError):
        model_from_dict(d)
