"""Command line interface.

Every subcommand writes its outputs, the fully resolved configuration
(``<output>.config.ini``) and a run manifest (``<output>.manifest.json``).
Exit status: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .boundary import compare_boundaries
from .errors import DataError, VpBoundsError
from .grid import DEFAULT_CELL_SIZE, DensityGrid, GridSpec
from .io import (
    fit_from_dict,
    fit_to_dict,
    load_csv,
    load_geojson,
    model_from_dict,
    model_to_dict,
    read_grid,
    read_json,
    read_profile_csv,
    write_boundary_geojson,
    write_circle_csv,
    write_frequency_csv,
    write_grid,
    write_json,
    write_profile_csv,
)
from .rasterize import rasterize_points, rasterize_polygons
from .ringfit import DEFAULT_MIN_CELLS, breakpoints_as_fractions, fit_piecewise, mask_artifacts, rss_by_breakpoints
from .ringmodel import model_from_fit
from .synth import Disc, RingCitySpec, generate_discs, generate_ring_city, grid_around
from .vp import SearchConstraint, VpProfile, default_fractions, vp_circle, vp_profile
from .workflow import (
    CitySearch,
    Perturbations,
    PipelineOptions,
    boundary_from_model,
    box_window,
    check_box,
    city_boundary,
    fuzz_boundary,
    region_boundaries,
)

log = logging.getLogger("vpbounds")

USAGE_ERROR = 1
DATA_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- argument helpers --------------------------------------------------------


def _latlon(text: str):
    try:
        lat, lon = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LAT,LON, got {text!r}") from None
    return lat, lon


def _floats(text: str):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _rings(text: str):
    """``R1:A1,R2:A2`` -> ((R1, A1), (R2, A2))."""
    try:
        return tuple(tuple(float(x) for x in part.split(":")) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected RADIUS:EXPONENT pairs, got {text!r}") from None


def _disc(text: str):
    try:
        lat, lon, radius, density = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LAT,LON,RADIUS_KM,DENSITY, got {text!r}") from None
    return Disc((lat, lon), radius, density)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file; the section named after the subcommand supplies defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $VPBOUNDS_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_box(p: argparse.ArgumentParser, search_radius: bool = True) -> None:
    p.add_argument("--center", type=_latlon, help="approximate city centre LAT,LON; enables city mode")
    p.add_argument("--box-side-km", type=float, default=30.0)
    if search_radius:
        p.add_argument("--search-radius-km", type=float, default=5.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vpbounds", description="City and region boundaries from VP circles.")
    parser.add_argument("--version", action="version", version=f"vpbounds {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("rasterize", help="rasterize GeoJSON polygons or CSV points")
    p.add_argument("--input", required=True)
    p.add_argument("--value-field", default=None, help="GeoJSON property or CSV weight column")
    p.add_argument("--cell-size", type=float, default=DEFAULT_CELL_SIZE)
    p.add_argument("--bounds", type=_floats, help="LAT_MIN,LON_MIN,LAT_MAX,LON_MAX (default: input extent)")
    p.add_argument("--format", choices=["binary", "csv"], default="binary")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("circle", help="one VP circle")
    p.add_argument("--grid", required=True)
    p.add_argument("--f", type=float, required=True)
    p.add_argument("--center", type=_latlon)
    p.add_argument("--search-radius-km", type=float, default=None)
    p.add_argument("--coarse-to-fine", action="store_true", help="heuristic candidate pruning (may miss the optimum)")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("profile", help="VP profile over a fraction sweep")
    p.add_argument("--grid", required=True)
    _add_box(p)
    p.add_argument("--n-fractions", type=int, default=256)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("fit", help="piecewise-linear fit of log r on log f")
    p.add_argument("--profile", required=True)
    p.add_argument("--breakpoints", type=int, required=True)
    p.add_argument("--min-cells", type=int, default=DEFAULT_MIN_CELLS)
    p.add_argument("--no-rss-table", dest="rss_table", action="store_false",
                   help="skip the RSS listing for 1..6 breakpoints")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("model", help="ring model from a fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--grid", required=True, help="grid whose (boxed) total mass normalises the model")
    _add_box(p, search_radius=False)
    p.add_argument("--threshold-side", choices=["inner", "outer"], default="inner")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("boundary", help="threshold clusters (integrated pipeline, or from --model)")
    p.add_argument("--grid", required=True)
    p.add_argument("--model", help="model JSON; skips profile and fit")
    _add_box(p)
    p.add_argument("--breakpoints", type=int, default=1)
    p.add_argument("--min-cells", type=int, default=DEFAULT_MIN_CELLS)
    p.add_argument("--n-fractions", type=int, default=256)
    p.add_argument("--connectivity", type=int, choices=[4, 8], default=4)
    p.add_argument("--threshold-side", choices=["inner", "outer"], default="inner")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("region", help="unconstrained profile, fit and breakpoint circles")
    p.add_argument("--grid", required=True)
    p.add_argument("--breakpoints", type=int, required=True)
    p.add_argument("--min-cells", type=int, default=DEFAULT_MIN_CELLS)
    p.add_argument("--n-fractions", type=int, default=256)
    p.add_argument("--out-dir", required=True)
    _add_common(p)

    p = sub.add_parser("synth", help="synthetic grids")
    p.add_argument("--kind", choices=["ring", "discs"], required=True)
    p.add_argument("--center", type=_latlon, default=(52.0, -1.0))
    p.add_argument("--half-side-km", type=float, default=40.0)
    p.add_argument("--cell-size", type=float, default=DEFAULT_CELL_SIZE)
    p.add_argument("--rings", type=_rings, default=((10.0, 2.0), (30.0, 0.5)), help="R1:A1,R2:A2,...")
    p.add_argument("--total-mass", type=float, default=1e6)
    p.add_argument("--disc", type=_disc, action="append", help="LAT,LON,RADIUS_KM,DENSITY (repeatable)")
    p.add_argument("--plain-density", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.0, help="lognormal sigma")
    p.add_argument("--format", choices=["binary", "csv"], default="binary")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("fuzz", help="inclusion frequency under search perturbations")
    p.add_argument("--grid", required=True)
    p.add_argument("--center", type=_latlon, required=True)
    p.add_argument("--breakpoints", type=int, default=1)
    p.add_argument("--offsets-deg", type=_floats, default=(-0.01, 0.0, 0.01))
    p.add_argument("--search-radii-km", type=_floats, default=(2.0, 5.0, 8.0))
    p.add_argument("--box-sides-km", type=_floats, default=(40.0, 50.0, 60.0))
    p.add_argument("--min-cells", type=int, default=DEFAULT_MIN_CELLS)
    p.add_argument("--connectivity", type=int, choices=[4, 8], default=4)
    p.add_argument("--out", required=True, help="frequency CSV")
    p.add_argument("--runs-dir", help="directory for one boundary GeoJSON per run")
    _add_common(p)

    p = sub.add_parser("compare", help="cell-membership overlap of two boundary GeoJSON files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--grid", required=True, help="grid whose cells define membership")
    p.add_argument("--out", required=True)
    _add_common(p)
    return parser


# --- config and manifest ---------------------------------------------------------

_NOT_CONFIG = {"config", "command", "verbose"}


def _config_defaults(parser: argparse.ArgumentParser, argv: Sequence[str]) -> Dict[str, object]:
    """Values from ``--config`` for the chosen subcommand, parsed with the
    subcommand's own argument types."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    if not known.config or command is None:
        return {}
    cp = configparser.ConfigParser()
    if not cp.read(known.config):
        raise UsageError(f"cannot read config file {known.config}")
    if not cp.has_section(command):
        return {}
    sub = _subparser(parser, command)
    actions = {a.dest: a for a in sub._actions}
    out = {}
    for key, raw in cp.items(command):
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None:
            raise UsageError(f"config key {key!r} is not an option of {command}")
        if raw == "":
            out[dest] = None
        elif isinstance(action, argparse._StoreFalseAction) or isinstance(action, argparse._StoreTrueAction):
            out[dest] = cp.getboolean(command, key)
        elif action.dest == "disc":
            out[dest] = [_disc(v) for v in raw.split(";")]
        elif action.type is not None:
            out[dest] = action.type(raw)
        else:
            out[dest] = raw
    return out


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise UsageError(f"unknown command {command}")


def _config_text(value) -> str:
    if value is None:
        return ""
    if isinstance(value, Disc):
        return f"{value.center[0]!r},{value.center[1]!r},{value.radius_km!r},{value.density!r}"
    if isinstance(value, (list, tuple)):
        if value and isinstance(value[0], Disc):
            return ";".join(_config_text(v) for v in value)
        if value and isinstance(value[0], tuple):
            return ",".join(":".join(repr(x) for x in v) for v in value)
        return ",".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_resolved_config(args: argparse.Namespace, path: Path) -> None:
    cp = configparser.ConfigParser()
    cp[args.command] = {k: _config_text(v) for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}
    with open(path, "w") as fh:
        cp.write(fh)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(args, argv, inputs: List[str], outputs: List[str], timings: Dict[str, float], path: Path) -> None:
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": {p: _sha256(p) for p in outputs if Path(p).is_file()},
        "versions": {
            "vpbounds": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "timings_s": timings,
        "config": str(path.with_name(path.name.replace(".manifest.json", ".config.ini"))),
    }
    write_json(manifest, path)


# --- commands ----------------------------------------------------------------------


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("VPBOUNDS_THREADS", "1")
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"VPBOUNDS_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def _boxed(grid: DensityGrid, args) -> DensityGrid:
    if getattr(args, "center", None) is None:
        return grid
    r0, r1, c0, c1 = box_window(grid, args.center, args.box_side_km)
    return grid.crop(r0, r1, c0, c1)


def _search(args) -> CitySearch:
    return CitySearch(args.center, args.box_side_km, args.search_radius_km, args.breakpoints)


def _options(args, fractions=None) -> PipelineOptions:
    return PipelineOptions(
        min_cells=getattr(args, "min_cells", DEFAULT_MIN_CELLS),
        connectivity=getattr(args, "connectivity", 4),
        threshold_side=getattr(args, "threshold_side", "inner"),
        seed=args.seed,
        threads=_threads(args),
        fractions=fractions,
    )


def _fractions(grid: DensityGrid, args):
    return tuple(default_fractions(grid, args.n_fractions))


def cmd_rasterize(args, timings):
    path = Path(args.input)
    is_json = path.suffix.lower() in (".geojson", ".json")
    if is_json:
        if not args.value_field:
            raise UsageError("--value-field is required for GeoJSON input")
        polys = load_geojson(path, args.value_field)
        lats = [p[0] for poly in polys for p in poly.exterior]
        lons = [p[1] for poly in polys for p in poly.exterior]
    else:
        points = load_csv(path, args.value_field or "weight")
        lats = [p[0] for p in points]
        lons = [p[1] for p in points]
    if args.bounds:
        if len(args.bounds) != 4:
            raise UsageError("--bounds needs four numbers")
        spec = GridSpec.covering(*args.bounds, cell_size=args.cell_size)
    else:
        if not lats:
            raise DataError("input has no features")
        cs = args.cell_size
        spec = GridSpec.covering(
            math.floor(min(lats) / cs) * cs, math.floor(min(lons) / cs) * cs,
            (math.floor(max(lats) / cs) + 1) * cs, (math.floor(max(lons) / cs) + 1) * cs, cell_size=cs,
        )
    t = time.perf_counter()
    if is_json:
        grid = rasterize_polygons(polys, spec)
    else:
        grid, n_out = rasterize_points(points, spec)
        if n_out:
            print(f"{n_out} points outside the grid", file=sys.stderr)
    timings["rasterize"] = time.perf_counter() - t
    write_grid(grid, args.out, args.format)
    print(f"grid {spec.n_rows}x{spec.n_cols}, total mass {grid.total_mass!r}")
    return [args.input], [args.out]


def cmd_circle(args, timings):
    grid = read_grid(args.grid)
    constraint = None
    if args.center is not None or args.search_radius_km is not None:
        if args.center is None or args.search_radius_km is None:
            raise UsageError("--center and --search-radius-km go together")
        constraint = SearchConstraint(args.center, args.search_radius_km)
    t = time.perf_counter()
    c = vp_circle(grid, args.f, constraint, coarse_to_fine=args.coarse_to_fine)
    timings["circle"] = time.perf_counter() - t
    write_circle_csv(c, args.out)
    print(f"centre {c.center[0]:.5f},{c.center[1]:.5f} radius {c.radius_km:.4f} km achieved {c.achieved_fraction:.6f}")
    return [args.grid], [args.out]


def cmd_profile(args, timings):
    grid = _boxed(read_grid(args.grid), args)
    constraint = None
    if args.center is not None:
        constraint = SearchConstraint(args.center, args.search_radius_km)
    t = time.perf_counter()
    profile = vp_profile(grid, _fractions(grid, args), constraint, threads=_threads(args))
    timings["profile"] = time.perf_counter() - t
    write_profile_csv(profile, args.out)
    print(f"{len(profile)} fractions, radius {profile.radii_km[0]:.4f} .. {profile.radii_km[-1]:.4f} km")
    return [args.grid], [args.out]


def cmd_fit(args, timings):
    profile = read_profile_csv(args.profile)
    masked = mask_artifacts(profile, args.min_cells)
    threads = _threads(args)
    t = time.perf_counter()
    fit = fit_piecewise(masked, args.breakpoints, seed=args.seed, threads=threads)
    timings["fit"] = time.perf_counter() - t
    if args.rss_table:
        t = time.perf_counter()
        print("breakpoints  rss")
        for k, rss in rss_by_breakpoints(masked, range(1, 7), seed=args.seed, threads=threads):
            print(f"{k:11d}  {'n/a' if rss is None else f'{rss:.6g}'}")
        timings["rss_table"] = time.perf_counter() - t
    write_json(fit_to_dict(fit), args.out)
    for f, r in breakpoints_as_fractions(fit):
        print(f"breakpoint f={f:.4f} r={r:.3f} km")
    return [args.profile], [args.out]


def cmd_model(args, timings):
    fit = fit_from_dict(read_json(args.fit))
    grid = _boxed(read_grid(args.grid), args)
    model = model_from_fit(fit, grid.total_mass)
    if args.center is not None:
        check_box(model, args.box_side_km)
    report = model_to_dict(model, side=args.threshold_side)
    write_json(report, args.out)
    print(f"threshold density {report['threshold_density']:.6g} per km2 (ring {report['ring_index']})")
    return [args.fit, args.grid], [args.out]


def cmd_boundary(args, timings):
    grid = read_grid(args.grid)
    if args.model:
        if args.center is None:
            raise UsageError("--model needs --center to crop the box and pick the principal cluster")
        report = read_json(args.model)
        model = model_from_dict(report)
        box = _boxed(grid, args)
        side = report.get("threshold_side", args.threshold_side)
        t = time.perf_counter()
        _, bset = boundary_from_model(box, model, args.center, connectivity=args.connectivity, side=side)
        timings["boundary"] = time.perf_counter() - t
        inputs = [args.grid, args.model]
    else:
        if args.center is None:
            raise UsageError("--center is required")
        box = _boxed(grid, args)
        t = time.perf_counter()
        result = city_boundary(grid, _search(args), _options(args, _fractions(box, args)))
        timings["city_boundary"] = time.perf_counter() - t
        bset = result.boundary
        inputs = [args.grid]
    write_boundary_geojson(bset, args.out)
    p = bset.principal
    print(f"threshold {bset.threshold_density:.6g} per km2, {len(bset.clusters)} clusters"
          + (f", principal area {p.area_km2:.3f} km2" if p else ""))
    return inputs, [args.out]


def cmd_region(args, timings):
    grid = read_grid(args.grid)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = time.perf_counter()
    res = region_boundaries(grid, args.breakpoints, _options(args, _fractions(grid, args)))
    timings["region"] = time.perf_counter() - t
    outputs = [str(out / "profile.csv"), str(out / "circles.csv")]
    write_profile_csv(res.profile, outputs[0])
    write_profile_csv(VpProfile(tuple((c.target_fraction, c) for c in res.circles)), outputs[1])
    if res.fit is not None:
        outputs.append(str(out / "fit.json"))
        write_json(fit_to_dict(res.fit), outputs[-1])
        for c in res.circles:
            print(f"f={c.target_fraction:.4f} centre {c.center[0]:.4f},{c.center[1]:.4f} r={c.radius_km:.3f} km")
    else:
        print("profile has zero radius throughout; nothing to fit")
    return [args.grid], outputs


def cmd_synth(args, timings):
    if args.kind == "ring":
        outer = max(r for r, _ in args.rings)
        spec = grid_around(args.center, max(args.half_side_km, outer + 2 * args.cell_size * 111.2), args.cell_size)
        grid = generate_ring_city(RingCitySpec(args.center, args.rings, args.total_mass, spec, args.noise), args.seed)
    else:
        if not args.disc:
            raise UsageError("--kind discs needs at least one --disc")
        spec = grid_around(args.center, args.half_side_km, args.cell_size)
        grid = generate_discs(spec, args.disc, args.plain_density, noise_sigma=args.noise, seed=args.seed)
    write_grid(grid, args.out, args.format)
    print(f"grid {spec.n_rows}x{spec.n_cols}, total mass {grid.total_mass!r}")
    return [], [args.out]


def cmd_fuzz(args, timings):
    grid = read_grid(args.grid)
    search = CitySearch(args.center, max(args.box_sides_km), min(args.search_radii_km), args.breakpoints)
    perturb = Perturbations(args.offsets_deg, args.search_radii_km, args.box_sides_km)
    options = _options(args)
    t = time.perf_counter()
    res = fuzz_boundary(grid, search, perturb, options)
    timings["fuzz"] = time.perf_counter() - t
    write_frequency_csv(grid.spec, res.frequency, args.out)
    outputs = [args.out]
    if args.runs_dir:
        d = Path(args.runs_dir)
        d.mkdir(parents=True, exist_ok=True)
        for i, run in enumerate(res.runs):
            if run.result is not None:
                path = d / f"run_{i:03d}.geojson"
                write_boundary_geojson(run.result.boundary, path)
                outputs.append(str(path))
    print(f"{len(res.runs)} runs, {res.n_failed} failed")
    for run in res.runs:
        if run.error:
            print(f"  failed: centre {run.search.approx_center} box {run.search.box_side_km} "
                  f"radius {run.search.search_radius_km}: {run.error}")
    return [args.grid], outputs


def cmd_compare(args, timings):
    grid = read_grid(args.grid)
    a, b = read_json(args.a), read_json(args.b)
    rep = compare_boundaries(grid.spec, a, b)
    write_json(rep.__dict__, args.out)
    print(f"jaccard {rep.jaccard:.6f}")
    return [args.a, args.b, args.grid], [args.out]


COMMANDS = {
    "rasterize": cmd_rasterize,
    "circle": cmd_circle,
    "profile": cmd_profile,
    "fit": cmd_fit,
    "model": cmd_model,
    "boundary": cmd_boundary,
    "region": cmd_region,
    "synth": cmd_synth,
    "fuzz": cmd_fuzz,
    "compare": cmd_compare,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        defaults = _config_defaults(parser, argv)
        if defaults:
            sub = _subparser(parser, next(a for a in argv if not a.startswith("-")))
            sub.set_defaults(**defaults)
            # options satisfied by the config no longer need to be on the command line
            for action in sub._actions:
                if action.dest in defaults:
                    action.required = False
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        timings: Dict[str, float] = {}
        t0 = time.perf_counter()
        inputs, outputs = COMMANDS[args.command](args, timings)
        timings["total"] = time.perf_counter() - t0
        base = Path(outputs[0]) if args.command != "region" else Path(args.out_dir) / "region"
        write_resolved_config(args, base.with_name(base.name + ".config.ini"))
        write_manifest(args, argv, inputs, outputs, timings, base.with_name(base.name + ".manifest.json"))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"data error: file not found: {exc.filename}", file=sys.stderr)
        return DATA_ERROR
    except (VpBoundsError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    return 0


def main() -> None:
    sys.exit(run())
