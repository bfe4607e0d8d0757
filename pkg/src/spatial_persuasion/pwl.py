"""Continuous piecewise-linear functions on a closed interval."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

SLOPE_RTOL = 1e-12
DOMAIN_RTOL = 1e-12
TOUCH_TOL = 1e-9


def _same_slope(a: float, b: float) -> bool:
    return abs(a - b) <= SLOPE_RTOL * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class PiecewiseLinear:
    """Interpolant through ``(breakpoints[k], values[k])``.

    Evaluation at a stored breakpoint returns the stored value bit for bit.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    slopes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x = np.array(self.breakpoints, dtype=float)
        v = np.array(self.values, dtype=float)
        if x.ndim != 1 or x.shape != v.shape or x.size < 2:
            raise DomainError("need at least two breakpoints with matching values")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(v)):
            raise DomainError("breakpoints and values must be finite")
        if np.any(np.diff(x) <= 0.0):
            raise DomainError("breakpoints must be strictly increasing")
        x.setflags(write=False)
        v.setflags(write=False)
        a = np.diff(v) / np.diff(x)
        a.setflags(write=False)
        object.__setattr__(self, "breakpoints", x)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "slopes", a)

    @classmethod
    def from_slopes(cls, breakpoints, slopes, start_value: float = 0.0) -> "PiecewiseLinear":
        x = np.asarray(breakpoints, dtype=float)
        a = np.asarray(slopes, dtype=float)
        v = np.concatenate([[start_value], start_value + np.cumsum(a * np.diff(x))])
        return cls(x, v)

    @property
    def lo(self) -> float:
        return float(self.breakpoints[0])

    @property
    def hi(self) -> float:
        return float(self.breakpoints[-1])

    def _check_domain(self, z: np.ndarray) -> np.ndarray:
        slack = DOMAIN_RTOL * max(1.0, self.hi - self.lo, abs(self.lo), abs(self.hi))
        if np.any(z < self.lo - slack) or np.any(z > self.hi + slack):
            raise DomainError(f"evaluation outside [{self.lo}, {self.hi}]")
        return np.clip(z, self.lo, self.hi)

    def __call__(self, z):
        scalar = np.isscalar(z)
        zz = self._check_domain(np.atleast_1d(np.asarray(z, dtype=float)))
        x, v = self.breakpoints, self.values
        k = np.clip(np.searchsorted(x, zz, side="right") - 1, 0, x.size - 2)
        out = v[k] + self.slopes[k] * (zz - x[k])
        hit = np.searchsorted(x, zz, side="left")
        exact = (hit < x.size) & (x[np.minimum(hit, x.size - 1)] == zz)
        out[exact] = v[hit[exact]]
        return float(out[0]) if scalar else out

    def slope_left(self, z: float) -> float:
        """Slope of the piece ending at or containing ``z``."""
        k = int(np.clip(np.searchsorted(self.breakpoints, z, side="left") - 1, 0, self.slopes.size - 1))
        return float(self.slopes[k])

    def slope_right(self, z: float) -> float:
        k = int(np.clip(np.searchsorted(self.breakpoints, z, side="right") - 1, 0, self.slopes.size - 1))
        return float(self.slopes[k])

    def merged(self) -> "PiecewiseLinear":
        """Drop interior breakpoints whose neighbouring slopes agree."""
        keep = [0]
        a, x, v = self.slopes, self.breakpoints, self.values
        eps = np.finfo(float).eps
        for k in range(1, x.size - 1):
            # a difference quotient over a short piece carries rounding error ~ eps*|v|/dx
            noise = 4.0 * eps * max(1.0, abs(v[k - 1]), abs(v[k]), abs(v[k + 1])) / min(x[k] - x[k - 1], x[k + 1] - x[k])
            if not _same_slope(a[k - 1], a[k]) and abs(a[k - 1] - a[k]) > noise:
                keep.append(k)
        keep.append(self.breakpoints.size - 1)
        if len(keep) == self.breakpoints.size:
            return self
        return PiecewiseLinear(self.breakpoints[keep], self.values[keep])

    def kink_jumps(self) -> np.ndarray:
        """Slope change at each interior breakpoint of the merged function."""
        return np.diff(self.merged().slopes)

    def is_convex(self) -> bool:
        return bool(np.all(self.kink_jumps() > 0.0))

    def is_concave(self) -> bool:
        return bool(np.all(self.kink_jumps() < 0.0))

    def chord(self, a: float, b: float) -> tuple[float, float]:
        """Slope and intercept of the line through the graph at ``a`` and ``b``."""
        fa, fb = self(a), self(b)
        slope = (fb - fa) / (b - a)
        return slope, fa - slope * a

    def negate(self) -> "PiecewiseLinear":
        return PiecewiseLinear(self.breakpoints, -self.values)

    def with_breakpoints(self, extra) -> "PiecewiseLinear":
        """Same function with additional (redundant) breakpoints."""
        x = self.breakpoints
        extra = np.clip(np.atleast_1d(np.asarray(extra, dtype=float)), self.lo, self.hi)
        # near-duplicates would create slivers whose slopes are pure rounding noise
        slack = DOMAIN_RTOL * max(1.0, self.hi - self.lo)
        near = np.min(np.abs(extra[:, None] - x[None, :]), axis=1) <= slack if extra.size else extra
        pts = np.union1d(x, extra[~near]) if extra.size else x
        return PiecewiseLinear(pts, self(pts))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s0", "value"])
        for z, v in zip(self.breakpoints, self.values):
            w.writerow([f"{z:.12g}", f"{v:.12g}"])
        return buf.getvalue()


@dataclass(frozen=True)
class ConcaveInterval:
    start: float
    end: float
    kinks: tuple  # breakpoint positions of the strictly concave kinks inside


def concave_intervals(f: PiecewiseLinear) -> tuple:
    """Maximal runs of consecutive strictly concave kinks.

    Equal slopes are merged first, so any two runs are separated by a strictly
    convex kink.  A single isolated kink yields a degenerate interval.
    """
    g = f.merged()
    jumps = np.diff(g.slopes)
    out, run = [], []
    for k, jump in enumerate(jumps, start=1):
        if jump < 0.0:
            run.append(float(g.breakpoints[k]))
        elif run:
            out.append(ConcaveInterval(run[0], run[-1], tuple(run)))
            run = []
    if run:
        out.append(ConcaveInterval(run[0], run[-1], tuple(run)))
    return tuple(out)


def convex_intervals(f: PiecewiseLinear) -> tuple:
    return concave_intervals(f.negate())


@dataclass(frozen=True)
class TangentLine:
    slope: float
    intercept: float
    x: float
    y: float
    left_index: int
    right_index: int

    def __call__(self, z):
        return self.slope * np.asarray(z, dtype=float) + self.intercept


def _points_in(f: PiecewiseLinear, a: float, b: float) -> np.ndarray:
    x = f.breakpoints
    return np.union1d(x[(x >= a) & (x <= b)], [a, b])


def _line_gap(f, slope, anchor, a, b) -> np.ndarray:
    """``line - f`` on the breakpoints of ``[a, b]`` for the line through ``(anchor, f(anchor))``."""
    pts = _points_in(f, a, b)
    return slope * (pts - anchor) + f(anchor) - f(pts)


def tangent_conditions(f: PiecewiseLinear, left: ConcaveInterval, right: ConcaveInterval,
                       tol: float = TOUCH_TOL) -> tuple[bool, bool, bool, bool]:
    """The four dominance tests that decide whether a bitangent exists."""
    g = f.merged()
    scale = tol * max(1.0, float(np.max(np.abs(g.values))))
    in_left = _line_gap(g, g.slope_left(left.start), left.start, right.start, right.end)
    in_right = _line_gap(g, g.slope_right(right.end), right.end, left.start, left.end)
    miss_right = _line_gap(g, g.slope_right(left.end), left.end, right.start, right.end)
    miss_left = _line_gap(g, g.slope_left(right.start), right.start, left.start, left.end)
    return (bool(np.all(in_left >= -scale)), bool(np.all(in_right >= -scale)),
            bool(np.any(miss_right < -scale)), bool(np.any(miss_left < -scale)))


def tangent_between(f: PiecewiseLinear, left_index: int, right_index: int,
                    intervals: tuple | None = None) -> TangentLine | None:
    """Common supporting line of two concave intervals, or ``None`` if it does not exist."""
    intervals = concave_intervals(f) if intervals is None else intervals
    if not (0 <= left_index < right_index < len(intervals)):
        raise DomainError("need two valid concave-interval indices in increasing order")
    left, right = intervals[left_index], intervals[right_index]
    if not all(tangent_conditions(f, left, right)):
        return None
    g = f.merged()
    for x in left.kinks:
        fx = g(x)
        for y in right.kinks:
            gamma = (g(y) - fx) / (y - x)
            slack = SLOPE_RTOL * max(1.0, abs(gamma)) + TOUCH_TOL
            if (g.slope_right(x) - slack <= gamma <= g.slope_left(x) + slack
                    and g.slope_right(y) - slack <= gamma <= g.slope_left(y) + slack):
                return TangentLine(float(gamma), float(fx - gamma * x), float(x), float(y),
                                   left_index, right_index)
    return None


def upper_closure_with_pool(f: PiecewiseLinear, pool: tuple, anchor: float,
                            slope: float | None = None) -> PiecewiseLinear:
    """Replace ``f`` on the pool by the line through ``(anchor, f(anchor))``.

    The default slope is the chord of ``f`` over the pool.  The result is
    continuous at a pool edge only where that line meets ``f``.
    """
    lo, hi = float(pool[0]), float(pool[1])
    slack = DOMAIN_RTOL * max(1.0, f.hi - f.lo)
    if lo < f.lo - slack or hi > f.hi + slack or lo > hi:
        raise DomainError("pool must be an interval inside the domain")
    lo, hi = max(lo, f.lo), min(hi, f.hi)
    if hi - lo <= slack:
        return f
    if not lo - slack <= anchor <= hi + slack:
        raise DomainError("anchor must lie in the pool")
    if slope is None:
        slope = f.chord(lo, hi)[0]
    fz = f(min(max(anchor, lo), hi))
    outside = f.breakpoints[(f.breakpoints < lo) | (f.breakpoints > hi)]
    pts = np.union1d(outside, [lo, hi])
    vals = np.where((pts >= lo) & (pts <= hi), fz + slope * (pts - anchor), f(pts))
    return PiecewiseLinear(pts, vals)
