"""Continuous piecewise-linear fits of log radius against log fraction.

For fixed breakpoints the fit is an ordinary least-squares problem in the
hinge basis ``1, x, max(0, x - b_1), ...``. Breakpoint positions are searched
with seeded differential evolution, polished with a bounded Gauss-Newton
step, and the best of several restarts is kept.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import differential_evolution, least_squares

from .errors import DataError, MaskedOutError, TooFewPointsError
from .vp import VpProfile

MIN_POINTS_PER_SEGMENT = 3
DEFAULT_MIN_CELLS = 20
N_RESTARTS = 16
SLOPE_TOL = -1e-9


@dataclass(frozen=True)
class RingFit:
    n_segments: int
    breakpoints_logf: Tuple[float, ...]
    slopes: Tuple[float, ...]
    intercept: float
    rss: float
    fit_range_logf: Tuple[float, float]
    n_points: int
    # largest masked fraction and how many leading entries were masked
    excluded_low_f: Optional[float] = None
    n_excluded: int = 0

    def predict(self, logf):
        """Fitted log radius (natural log, km) at ``logf``."""
        x = np.asarray(logf, dtype=float)
        y = self.intercept + self.slopes[0] * (x - self.fit_range_logf[0])
        for b, s_prev, s_next in zip(self.breakpoints_logf, self.slopes, self.slopes[1:]):
            y = y + (s_next - s_prev) * np.maximum(0.0, x - b)
        return float(y) if y.ndim == 0 else y

    def segments(self) -> List[Tuple[float, float, float]]:
        """``(slope, logf_start, logf_end)`` per segment."""
        edges = [self.fit_range_logf[0], *self.breakpoints_logf, self.fit_range_logf[1]]
        return [(s, a, b) for s, a, b in zip(self.slopes, edges, edges[1:])]


def mask_artifacts(profile: VpProfile, min_cells: int = DEFAULT_MIN_CELLS) -> VpProfile:
    """Drop the leading entries whose circles hold fewer than ``min_cells`` cells."""
    if min_cells < 1:
        raise DataError("min_cells must be >= 1")
    cells = profile.cells
    first = int(np.argmax(cells >= min_cells)) if np.any(cells >= min_cells) else len(cells)
    if first == len(cells):
        raise MaskedOutError(f"every profile entry holds fewer than {min_cells} cells")
    return VpProfile(profile.entries[first:], profile.total_mass)


def _design(x: np.ndarray, breaks: Sequence[float]) -> np.ndarray:
    cols = [np.ones_like(x), x] + [np.maximum(0.0, x - b) for b in breaks]
    return np.column_stack(cols)


def _lstsq(x, y, breaks):
    X = _design(x, breaks)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    return beta, float(resid @ resid)


def _segment_counts(x: np.ndarray, breaks: Sequence[float]) -> np.ndarray:
    idx = np.searchsorted(np.asarray(breaks), x, side="right")
    return np.bincount(idx, minlength=len(breaks) + 1)


class _Objective:
    """Vectorised RSS with a penalty for segments holding too few points.

    The normal equations of the hinge basis only need sums of ``1, x, x**2,
    y, x*y`` over the points beyond each breakpoint, so they are assembled
    from suffix sums without forming the design matrix. ``x`` is centred
    first to keep the cancellation in those sums small.
    """

    def __init__(self, x, y):
        self.shift = x.mean()
        self.x = x - self.shift
        self.y = y
        self.n = len(x)
        self.yy = float(y @ y)
        self.penalty = float(((y - y.mean()) ** 2).sum()) + 1.0
        self.ridge = 1e-10 * len(x)
        xs = self.x
        # suffix sums: entry i sums over points i..n-1, entry n is 0
        cols = np.column_stack([np.ones_like(xs), xs, xs * xs, y, xs * y])
        self.suffix = np.vstack([np.cumsum(cols[::-1], axis=0)[::-1], np.zeros((1, 5))])

    def __call__(self, B):
        B = np.sort(np.atleast_2d(B.T), axis=1) - self.shift  # (S, k)
        S, k = B.shape
        x = self.x
        pos = np.searchsorted(x, B, side="right")
        s0, s1, s2, sy, sxy = (self.suffix[pos, c] for c in range(5))
        tot = self.suffix[0]
        A = np.empty((S, k + 2, k + 2))
        A[:, 0, 0] = self.n
        A[:, 0, 1] = A[:, 1, 0] = tot[1]
        A[:, 1, 1] = tot[2]
        A[:, 0, 2:] = A[:, 2:, 0] = s1 - B * s0
        A[:, 1, 2:] = A[:, 2:, 1] = s2 - B * s1
        # hinge i times hinge j is nonzero beyond the larger breakpoint; B is sorted
        J = np.maximum.outer(np.arange(k), np.arange(k))
        m0, m1, m2 = s0[:, J], s1[:, J], s2[:, J]
        A[:, 2:, 2:] = m2 - (B[:, :, None] + B[:, None, :]) * m1 + (B[:, :, None] * B[:, None, :]) * m0
        rhs = np.empty((S, k + 2))
        rhs[:, 0] = tot[3]
        rhs[:, 1] = tot[4]
        rhs[:, 2:] = sxy - B * sy
        beta = np.linalg.solve(A + self.ridge * np.eye(k + 2), rhs[..., None])[..., 0]
        rss = self.yy - 2 * np.einsum("sk,sk->s", beta, rhs) + np.einsum("sk,skl,sl->s", beta, A, beta)
        rss = np.maximum(rss, 0.0)
        counts = np.diff(np.concatenate([np.zeros((S, 1), int), pos, np.full((S, 1), self.n)], axis=1), axis=1)
        short = np.clip(MIN_POINTS_PER_SEGMENT - counts, 0, None).sum(1)
        return rss + self.penalty * short


def _polish(x, y, breaks, lo, hi):
    def resid(b):
        b = np.sort(b)
        X = _design(x, b)
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        return y - X @ beta

    try:
        sol = least_squares(
            resid, breaks, bounds=(lo, hi), method="trf", jac="3-point",
            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000,
        )
    except ValueError:
        return breaks
    return np.sort(sol.x)


def _feasible(x, breaks) -> bool:
    return bool(np.all(_segment_counts(x, breaks) >= MIN_POINTS_PER_SEGMENT))


def _key(rss, breaks):
    return (rss, tuple(breaks))


def _one_restart(x, y, k, rng, seeds):
    lo, hi = x[0], x[-1]
    obj = _Objective(x, y)
    x0 = seeds[0] if seeds else None
    res = differential_evolution(
        obj, [(lo, hi)] * k, rng=rng, popsize=15, maxiter=300, tol=1e-10,
        init="latinhypercube", polish=False, updating="deferred", vectorized=True, x0=x0,
    )
    starts = [np.sort(res.x)] + [np.sort(np.asarray(s, dtype=float)) for s in seeds]
    best = None
    for start in starts:
        for cand in (start, _polish(x, y, start, lo, hi)):
            if not _feasible(x, cand):
                continue
            _, rss = _lstsq(x, y, cand)
            key = _key(rss, cand.tolist())
            if best is None or key < best:
                best = key
    return best


def _insert_break(x: np.ndarray, breaks: Sequence[float]) -> List[float]:
    """Add one breakpoint in the middle of the most populated segment."""
    edges = [x[0], *breaks, x[-1]]
    counts = _segment_counts(x, breaks)
    s = int(np.argmax(counts))
    members = x[(x >= edges[s]) & (x <= edges[s + 1])]
    mid = 0.5 * (members[len(members) // 2 - 1] + members[len(members) // 2]) if len(members) > 1 else members[0]
    return sorted(list(breaks) + [float(mid)])


def fit_piecewise(
    profile: VpProfile,
    n_breakpoints: int,
    mask_low_f: Optional[float] = None,
    *,
    seed: int = 0,
    restarts: int = N_RESTARTS,
    init_breakpoints: Optional[Sequence[float]] = None,
    threads: int = 1,
) -> RingFit:
    """Least-squares continuous piecewise-linear fit of ``log r`` on ``log f``.

    Entries below ``mask_low_f`` and entries with zero radius (always a prefix
    of the profile) are excluded. ``init_breakpoints`` seeds every restart,
    e.g. with a smaller model's optimum plus one extra breakpoint, which makes
    the RSS non-increasing in the number of breakpoints. Fits with a slope
    below ``SLOPE_TOL`` are rejected.
    """
    fit = _fit(profile, n_breakpoints, mask_low_f, seed, restarts, init_breakpoints, threads)
    if min(fit.slopes) < SLOPE_TOL:
        raise DataError(f"fitted slopes must be nonnegative, got {list(fit.slopes)}")
    return fit


def _fit(profile, n_breakpoints, mask_low_f, seed, restarts, init_breakpoints, threads) -> RingFit:
    if n_breakpoints < 0:
        raise DataError("n_breakpoints must be >= 0")
    f = profile.fractions
    r = profile.radii_km
    keep = r > 0
    if mask_low_f is not None:
        keep &= f >= mask_low_f
    n_excluded = int(np.argmax(keep)) if keep.any() else len(keep)
    if not keep[n_excluded:].all():
        raise DataError("excluded entries must form a prefix of the profile")
    x_all, y_all = np.log(f[keep]), np.log(r[keep])
    excluded = float(f[n_excluded - 1]) if n_excluded else None
    k = int(n_breakpoints)
    need = MIN_POINTS_PER_SEGMENT * (k + 1)
    if len(x_all) < need:
        raise TooFewPointsError(
            f"{len(x_all)} profile points cannot support {k} breakpoints (need {need}); use fewer breakpoints"
        )
    order = np.lexsort((y_all, x_all))
    x, y = x_all[order], y_all[order]

    if k == 0:
        breaks: List[float] = []
    else:
        seeds = []
        if init_breakpoints is not None:
            if len(init_breakpoints) != k:
                raise DataError(f"init_breakpoints needs {k} values")
            seeds.append(np.clip(np.sort(np.asarray(init_breakpoints, dtype=float)), x[0], x[-1]))
        children = np.random.SeedSequence(seed).spawn(restarts)
        rngs = [np.random.default_rng(c) for c in children]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda g: _one_restart(x, y, k, g, seeds), rngs))
        else:
            results = [_one_restart(x, y, k, g, seeds) for g in rngs]
        results = [res for res in results if res is not None]
        if not results:
            raise TooFewPointsError(
                f"no placement of {k} breakpoints leaves {MIN_POINTS_PER_SEGMENT} points per segment; use fewer breakpoints"
            )
        breaks = list(min(results)[1])

    beta, rss = _lstsq(x, y, breaks)
    slopes = np.cumsum(np.r_[beta[1], beta[2:]])
    intercept = float(beta[0] + beta[1] * x[0])
    return RingFit(
        n_segments=k + 1,
        breakpoints_logf=tuple(float(b) for b in breaks),
        slopes=tuple(float(s) for s in slopes),
        intercept=intercept,
        rss=rss,
        fit_range_logf=(float(x[0]), float(x[-1])),
        n_points=len(x),
        excluded_low_f=excluded,
        n_excluded=n_excluded,
    )


def rss_by_breakpoints(profile: VpProfile, counts: Sequence[int] = range(1, 7), **kwargs) -> List[Tuple[int, Optional[float]]]:
    """RSS for each breakpoint count. Each fit is seeded with the previous
    optimum plus one extra breakpoint, so RSS cannot grow with the count.
    Counts the data cannot support give ``None``. Slope signs are not
    checked here; this is a diagnostic."""
    out = []
    prev: Optional[RingFit] = None
    for k in sorted(counts):
        init = None
        if prev is not None and len(prev.breakpoints_logf) == k - 1:
            x = np.sort(np.log(profile.fractions[profile.radii_km > 0]))
            init = _insert_break(x, prev.breakpoints_logf)
        try:
            fit = _fit(
                profile, k, kwargs.get("mask_low_f"), kwargs.get("seed", 0),
                kwargs.get("restarts", N_RESTARTS), init, kwargs.get("threads", 1),
            )
        except TooFewPointsError:
            out.append((k, None))
            prev = None
            continue
        out.append((k, fit.rss))
        prev = fit
    return out


def breakpoints_as_fractions(fit: RingFit, profile: Optional[VpProfile] = None) -> List[Tuple[float, float]]:
    """``(f, r_km)`` at each interior breakpoint."""
    return [(math.exp(b), math.exp(fit.predict(b))) for b in fit.breakpoints_logf]
