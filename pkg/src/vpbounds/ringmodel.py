"""Concentric-ring power-law density model.

Inside ring ``j`` the density is ``c_j * r**(a_j - 2)``. Coefficients are
chained so the density is continuous at every ring radius, and the one free
scale is fixed by requiring the model to integrate to the total mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, NonPositiveSlopeError, OutsideModelError
from .ringfit import RingFit

MIN_SLOPE = 1e-6
INVARIANT_RTOL = 1e-9


@dataclass(frozen=True)
class Ring:
    r_inner_km: float
    r_outer_km: float
    a: float
    c: float


@dataclass(frozen=True)
class RingModel:
    rings: Tuple[Ring, ...]
    total_mass: float
    # how far (in natural-log fraction units) the last segment was extended to reach f = 1
    extrapolation_logf: float = 0.0

    @property
    def outer_radius_km(self) -> float:
        return self.rings[-1].r_outer_km

    @property
    def exponents(self) -> np.ndarray:
        return np.array([r.a for r in self.rings])

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([r.c for r in self.rings])

    @property
    def radii_km(self) -> np.ndarray:
        return np.array([r.r_outer_km for r in self.rings])


def ring_coefficients(exponents: Sequence[float], radii_km: Sequence[float], total_mass: float) -> np.ndarray:
    """Density coefficients for rings ending at ``radii_km`` (first ring starts at 0).

    Continuity gives ``c[j+1] = c[j] * r_j**(a_j - 2) / r_j**(a_{j+1} - 2)``;
    the overall scale makes ``2*pi*sum(c_j/a_j*(r_j**a_j - r_{j-1}**a_j))``
    equal ``total_mass``. Worked in logs to stay finite for large exponents.
    """
    a = np.asarray(exponents, dtype=float)
    r = np.asarray(radii_km, dtype=float)
    if a.shape != r.shape or a.size == 0:
        raise DataError("need one radius per exponent")
    if np.any(a <= 0):
        raise NonPositiveSlopeError("ring exponents must be positive")
    if np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise DataError("ring radii must be positive and strictly increasing")
    if not total_mass > 0:
        raise DataError("total mass must be positive")
    log_c = np.zeros(len(a))
    for j in range(len(a) - 1):
        log_c[j + 1] = log_c[j] + (a[j] - a[j + 1]) * math.log(r[j])
    # mass of each ring for log_c as is, divided by 2*pi
    inner = np.r_[0.0, r[:-1]]
    shell = np.empty(len(a))
    for j in range(len(a)):
        hi = a[j] * math.log(r[j]) + log_c[j]
        if inner[j] > 0:
            lo = a[j] * math.log(inner[j]) + log_c[j]
            shell[j] = math.exp(hi) * -math.expm1(lo - hi) / a[j]
        else:
            shell[j] = math.exp(hi) / a[j]
    scale = total_mass / (2 * math.pi * math.fsum(shell))
    return np.exp(log_c) * scale


def build_model(exponents, radii_km, total_mass, extrapolation_logf=0.0) -> RingModel:
    c = ring_coefficients(exponents, radii_km, total_mass)
    inner = [0.0] + list(map(float, radii_km[:-1]))
    rings = tuple(Ring(ri, float(ro), float(a), float(cj)) for ri, ro, a, cj in zip(inner, radii_km, exponents, c))
    model = RingModel(rings, float(total_mass), float(extrapolation_logf))
    check_invariants(model)
    return model


def continuity_errors(model: RingModel) -> np.ndarray:
    """Relative density jump at each shared ring radius."""
    errs = []
    for left, right in zip(model.rings, model.rings[1:]):
        r = left.r_outer_km
        lo = math.log(left.c) + (left.a - 2) * math.log(r)
        hi = math.log(right.c) + (right.a - 2) * math.log(r)
        errs.append(abs(math.expm1(hi - lo)))
    return np.array(errs)


def enclosed_mass(model: RingModel, r_km: float) -> float:
    """Model mass within radius ``r_km`` (closed form)."""
    parts = []
    for ring in model.rings:
        if r_km <= ring.r_inner_km:
            break
        top = min(r_km, ring.r_outer_km)
        parts.append(ring.c / ring.a * (top**ring.a - ring.r_inner_km**ring.a))
    return 2 * math.pi * math.fsum(parts)


def closure_error(model: RingModel) -> float:
    return abs(enclosed_mass(model, model.outer_radius_km) / model.total_mass - 1.0)


def check_invariants(model: RingModel) -> None:
    rings = model.rings
    if rings[0].r_inner_km != 0.0:
        raise DataError("first ring must start at the centre")
    for left, right in zip(rings, rings[1:]):
        if right.r_inner_km != left.r_outer_km:
            raise DataError("ring radii are not contiguous")
    if any(r.a <= 0 or r.c <= 0 for r in rings):
        raise DataError("ring exponents and coefficients must be positive")
    jumps = continuity_errors(model)
    if len(jumps) and jumps.max() > INVARIANT_RTOL:
        raise DataError(f"density discontinuity {jumps.max():.3g} at a ring radius")
    err = closure_error(model)
    if err > INVARIANT_RTOL:
        raise DataError(f"model mass differs from total by {err:.3g} (relative)")


def model_from_fit(fit: RingFit, total_mass: float) -> RingModel:
    """Turn a log-log piecewise fit into a ring model.

    Exponents are reciprocal slopes; ring radii are the fitted radii at the
    breakpoints, and the outer radius is the fitted radius at ``f = 1``,
    extending the last segment when the profile stops short of it.
    """
    slopes = np.asarray(fit.slopes)
    if np.any(slopes <= MIN_SLOPE):
        raise NonPositiveSlopeError(f"segment slopes must exceed {MIN_SLOPE}, got {slopes.tolist()}")
    exponents = 1.0 / slopes
    logf = list(fit.breakpoints_logf) + [0.0]
    radii = [math.exp(fit.predict(x)) for x in logf]
    extrapolation = max(0.0, 0.0 - fit.fit_range_logf[1])
    return build_model(exponents, radii, total_mass, extrapolation)


def default_ring_index(model: RingModel) -> int:
    """Ring just inside the last breakpoint (the only ring if there is none)."""
    return max(0, len(model.rings) - 2)


def threshold_density(model: RingModel, ring_index: Optional[int] = None, side: str = "inner") -> float:
    """Boundary density ``(c_b / a_b) * r_b**(a_b - 2)`` at the outer radius of ring ``b``.

    ``side="outer"`` takes ``a`` and ``c`` from the ring beyond ``r_b``
    instead; the density itself is continuous there but the ``1/a`` factor is
    not.
    """
    b = default_ring_index(model) if ring_index is None else ring_index
    if not 0 <= b < len(model.rings):
        raise IndexError(f"ring index {b} out of range for {len(model.rings)} rings")
    r_b = model.rings[b].r_outer_km
    if side == "inner":
        ring = model.rings[b]
    elif side == "outer":
        if b + 1 >= len(model.rings):
            raise IndexError("no ring beyond the outermost ring")
        ring = model.rings[b + 1]
    else:
        raise ValueError(f"side must be 'inner' or 'outer', got {side!r}")
    return ring.c / ring.a * r_b ** (ring.a - 2)


def model_density(model: RingModel, r_km: float) -> float:
    """Density at ``r_km``; a radius on a ring boundary belongs to the inner ring."""
    if not 0 < r_km <= model.outer_radius_km:
        raise OutsideModelError(f"radius {r_km} outside (0, {model.outer_radius_km}]")
    for ring in model.rings:
        if r_km <= ring.r_outer_km:
            return ring.c * r_km ** (ring.a - 2)
    raise AssertionError("unreachable")


def cumulative_fraction(model: RingModel, r_km: float) -> float:
    return enclosed_mass(model, r_km) / model.total_mass
