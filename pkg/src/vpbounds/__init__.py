"""Boundaries of cities and regions from Valeriepieris circles.

A density grid is summarised by the radius of the smallest circle holding
each fraction of its mass. A continuous piecewise-linear fit of log radius
against log fraction gives a concentric-ring power-law density model, whose
last ring sets a density threshold; cells above it are clustered into
hole-free boundaries.
"""

__version__ = "0.1.0"

from .boundary import BoundarySet, Cluster, cluster_above, compare_boundaries, polygonize
from .errors import (
    BoxTooSmallError,
    DataError,
    DegeneratePolygonError,
    FeatureError,
    MaskedOutError,
    NoCandidateError,
    NonPositiveSlopeError,
    OutsideModelError,
    RingExceedsGridError,
    TooFewPointsError,
    UnreachableFractionError,
    VpBoundsError,
)
from .grid import EARTH_RADIUS_KM, DensityGrid, GridSpec, cell_area_km2, cell_areas_km2, haversine_km
from .rasterize import ValuedPolygon, rasterize_points, rasterize_polygons
from .ringfit import RingFit, breakpoints_as_fractions, fit_piecewise, mask_artifacts, rss_by_breakpoints
from .ringmodel import RingModel, model_density, model_from_fit, threshold_density
from .synth import Disc, RingCitySpec, generate_discs, generate_ring_city
from .vp import SearchConstraint, VpCircle, VpProfile, default_fractions, vp_circle, vp_profile
from .workflow import CitySearch, Perturbations, city_boundary, fuzz_boundary, region_boundaries
