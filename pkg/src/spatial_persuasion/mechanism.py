"""Information mechanisms, the posterior-mean distributions they induce, and checks on them."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import DomainError, NumericalFailure, PatternMismatch
from .priors import Prior
from .pwl import (
    PiecewiseLinear,
    TangentLine,
    concave_intervals,
    tangent_between,
    upper_closure_with_pool,
)

REVEAL = "reveal"
POOL = "pool"
MPC_TOL = 1e-8
CERT_TOL = 1e-7
ROOT_TOL = 1e-9
DEGENERATE_RTOL = 1e-9


# ---------------------------------------------------------------------------
# mechanism types


@dataclass(frozen=True)
class MonotonePartitional:
    """Cells ``[cutoffs[k], cutoffs[k+1]]``, each revealed or pooled to its conditional mean."""

    cutoffs: tuple
    modes: tuple
    atoms: tuple

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cutoffs)
        if len(cuts) < 2 or any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise DomainError("cutoffs must be strictly increasing with at least one cell")
        if len(self.modes) != len(cuts) - 1 or len(self.atoms) != len(cuts) - 1:
            raise DomainError("need one mode and one atom slot per cell")
        if any(m not in (REVEAL, POOL) for m in self.modes):
            raise DomainError("modes must be 'reveal' or 'pool'")
        atoms = []
        for mode, atom in zip(self.modes, self.atoms):
            if mode == POOL and (atom is None or not math.isfinite(atom)):
                raise DomainError("pooled cells need a finite atom")
            atoms.append(float(atom) if mode == POOL else None)
        object.__setattr__(self, "cutoffs", cuts)
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "atoms", tuple(atoms))

    @classmethod
    def build(cls, cutoffs, modes, prior: Prior) -> "MonotonePartitional":
        cuts = [float(c) for c in cutoffs]
        atoms = [prior.conditional_mean(a, b) if mode == POOL else None
                 for a, b, mode in zip(cuts, cuts[1:], modes)]
        return cls(tuple(cuts), tuple(modes), tuple(atoms))

    @classmethod
    def full_revelation(cls, prior: Prior) -> "MonotonePartitional":
        return cls((prior.lo, prior.hi), (REVEAL,), (None,))

    @classmethod
    def no_information(cls, prior: Prior) -> "MonotonePartitional":
        return cls((prior.lo, prior.hi), (POOL,), (prior.mean(),))

    @classmethod
    def reveal_pool_reveal(cls, prior: Prior, pool_lo: float, pool_hi: float) -> "MonotonePartitional":
        cuts, modes = [prior.lo], []
        if pool_lo > prior.lo:
            cuts.append(pool_lo)
            modes.append(REVEAL)
        if pool_hi > pool_lo:
            cuts.append(pool_hi)
            modes.append(POOL)
        if prior.hi > cuts[-1]:
            cuts.append(prior.hi)
            modes.append(REVEAL)
        return cls.build(cuts, modes, prior).canonical(prior)

    @property
    def cells(self) -> list:
        return list(zip(self.cutoffs, self.cutoffs[1:]))

    def canonical(self, prior: Prior | None = None) -> "MonotonePartitional":
        """Turn degenerate pools into reveals and merge neighbouring reveal cells."""
        width = self.cutoffs[-1] - self.cutoffs[0]
        cuts, modes, atoms = [self.cutoffs[0]], [], []
        for (a, b), mode, atom in zip(self.cells, self.modes, self.atoms):
            degenerate = (b - a) <= DEGENERATE_RTOL * width
            if prior is not None and mode == POOL:
                degenerate = degenerate or prior.mass(a, b) <= 0.0
            if mode == POOL and degenerate:
                mode, atom = REVEAL, None
            if mode == REVEAL and modes and modes[-1] == REVEAL:
                cuts[-1] = b
                continue
            cuts.append(b)
            modes.append(mode)
            atoms.append(atom)
        return MonotonePartitional(tuple(cuts), tuple(modes), tuple(atoms))

    def is_full_revelation(self) -> bool:
        return all(m == REVEAL for m in self.modes)

    def pools(self) -> list:
        return [(a, b, atom) for (a, b), mode, atom in zip(self.cells, self.modes, self.atoms) if mode == POOL]

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None else float(f"{v:.12g}")
        return {"cutoffs": [num(c) for c in self.cutoffs], "modes": list(self.modes),
                "atoms": [num(a) for a in self.atoms]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "MonotonePartitional":
        return cls(tuple(doc["cutoffs"]), tuple(doc["modes"]), tuple(doc["atoms"]))

    @classmethod
    def from_json(cls, text: str) -> "MonotonePartitional":
        return cls.from_dict(json.loads(text))

    def posterior(self, prior: Prior) -> "PosteriorDistribution":
        reveal = [(a, b) for (a, b), m in zip(self.cells, self.modes) if m == REVEAL]
        atoms = [(atom, prior.mass(a, b)) for a, b, atom in self.pools()]
        return PosteriorDistribution(tuple(reveal), tuple(atoms), prior)


@dataclass(frozen=True)
class PoolInterval:
    lo: float
    hi: float
    atom: float
    mass: float


@dataclass(frozen=True)
class DoubleInterval:
    """Outer block ``[lo, inner_lo] + [inner_hi, hi]`` pooled to one atom, middle block to another."""

    lo: float
    hi: float
    inner_lo: float
    inner_hi: float
    outer_atom: float
    inner_atom: float
    outer_mass: float
    inner_mass: float

    @property
    def x(self) -> float:
        return min(self.outer_atom, self.inner_atom)

    @property
    def y(self) -> float:
        return max(self.outer_atom, self.inner_atom)

    @property
    def p_x(self) -> float:
        return self.outer_mass if self.outer_atom < self.inner_atom else self.inner_mass

    @property
    def p_y(self) -> float:
        return self.inner_mass if self.outer_atom < self.inner_atom else self.outer_mass

    def system_residual(self, prior: Prior) -> float:
        """Residual of the mass and mean balance over ``[lo, hi]``."""
        mass = prior.mass(self.lo, self.hi)
        first = prior.partial_expectation(self.lo, self.hi)
        r1 = self.p_x + self.p_y - mass
        r2 = self.x * self.p_x + self.y * self.p_y - first
        return float(max(abs(r1), abs(r2)))


@dataclass(frozen=True)
class IntervalStructure:
    intervals: tuple
    support: tuple

    def posterior(self, prior: Prior) -> "PosteriorDistribution":
        spans = sorted((iv.lo, iv.hi) for iv in self.intervals)
        reveal, cursor = [], prior.lo
        for a, b in spans:
            if a > cursor:
                reveal.append((cursor, a))
            cursor = max(cursor, b)
        if prior.hi > cursor:
            reveal.append((cursor, prior.hi))
        atoms = []
        for iv in self.intervals:
            if isinstance(iv, DoubleInterval):
                atoms += [(iv.outer_atom, iv.outer_mass), (iv.inner_atom, iv.inner_mass)]
            else:
                atoms.append((iv.atom, iv.mass))
        return PosteriorDistribution(tuple(reveal), tuple(atoms), prior)

    def double_intervals(self) -> list:
        return [iv for iv in self.intervals if isinstance(iv, DoubleInterval)]


@dataclass(frozen=True)
class PosteriorDistribution:
    """Prior restricted to ``reveal`` regions plus weighted atoms."""

    reveal: tuple
    atoms: tuple
    prior: Prior = field(repr=False)

    def cdf(self, s: float) -> float:
        F = self.prior.cdf
        total = sum(max(0.0, F(min(s, b)) - F(a)) for a, b in self.reveal if s >= a)
        return float(total + sum(w for mu, w in self.atoms if s >= mu))

    def cdf_integral(self, s):
        """``int_lo^s G``; accepts scalars or arrays."""
        P = self.prior
        z = np.asarray(s, dtype=float)
        total = np.zeros_like(z)
        for a, b in self.reveal:
            top = np.clip(z, a, b)
            Fa = P.cdf(a)
            total += P.cdf_integral(top) - P.cdf_integral(a) - Fa * (top - a)
            total += (P.cdf(b) - Fa) * np.maximum(0.0, z - b)
        for mu, w in self.atoms:
            total += w * np.maximum(0.0, z - mu)
        return float(total) if total.ndim == 0 else total

    def mean(self) -> float:
        P = self.prior
        return float(sum(P.partial_expectation(a, b) for a, b in self.reveal)
                     + sum(w * mu for mu, w in self.atoms))

    def total_mass(self) -> float:
        return float(sum(self.prior.mass(a, b) for a, b in self.reveal) + sum(w for _, w in self.atoms))


# ---------------------------------------------------------------------------
# feasibility and revenue


@dataclass(frozen=True)
class MPCReport:
    ok: bool
    worst_point: float
    worst_violation: float
    endpoint_gap: float


def mpc_check(G: PosteriorDistribution, prior: Prior | None = None, tol: float = MPC_TOL,
              n_uniform: int = 1000) -> MPCReport:
    """``int F >= int G`` everywhere on the support, with equality at the top."""
    F = prior or G.prior
    pts = set(np.linspace(F.lo, F.hi, n_uniform + 1).tolist())
    for a, b in G.reveal:
        pts.update((a, b))
    levels = set()
    for mu, _ in G.atoms:
        if F.lo <= mu <= F.hi:
            pts.add(mu)
            levels.add(G.cdf(mu))
    for a, b in G.reveal:
        levels.update((G.cdf(a), G.cdf(b)))
    for level in levels:
        if 0.0 < level < 1.0:
            pts.add(float(F.ppf(level)))
    grid = np.array(sorted(pts))
    gaps = np.asarray(F.cdf_integral(grid)) - G.cdf_integral(grid)
    k = int(np.argmin(gaps))
    worst_pt, worst = float(grid[k]), float(gaps[k])
    end_gap = F.cdf_integral(F.hi) - G.cdf_integral(F.hi)
    outside = any(mu < F.lo - tol or mu > F.hi + tol for mu, _ in G.atoms)
    mass_gap = abs(G.total_mass() - 1.0)
    ok = worst >= -tol and abs(end_gap) <= tol and not outside and mass_gap <= tol
    return MPCReport(bool(ok), float(worst_pt), float(min(worst, 0.0)), float(end_gap))


def integrate_against_prior(R, prior: Prior, a: float, b: float) -> float:
    """``int_a^b R dF``; exact for piecewise-linear ``R``."""
    if b <= a:
        return 0.0
    if isinstance(R, PiecewiseLinear):
        x = R.breakpoints
        pts = np.concatenate([[a], x[(x > a) & (x < b)], [b]])
        total = 0.0
        for u, v in zip(pts[:-1], pts[1:]):
            slope = R.slope_right(u)
            intercept = R(u) - slope * u
            total += intercept * prior.mass(u, v) + slope * prior.partial_expectation(u, v)
        return float(total)
    ua, ub = prior.cdf(a), prior.cdf(b)
    val, _ = integrate.quad(lambda u: R(float(prior.ppf(u))), ua, ub, limit=200, epsabs=1e-12)
    return float(val)


def expected_revenue(R, mech, prior: Prior) -> float:
    """Expected revenue of a mechanism or posterior-mean distribution."""
    G = mech if isinstance(mech, PosteriorDistribution) else mech.posterior(prior)
    total = sum(integrate_against_prior(R, prior, a, b) for a, b in G.reveal)
    total += sum(w * R(mu) for mu, w in G.atoms)
    return float(total)


def value_of_information(R, prior: Prior, solver="prop8", table=None, eps: float = 1.0 / 256) -> float:
    """Optimal expected revenue minus the no-information revenue."""
    baseline = R(prior.mean())
    if callable(solver) and not isinstance(solver, str):
        best = solver(R, prior)
    elif solver == "alg1":
        best = expected_revenue(R, algorithm1_thresholds(table, R, prior).mechanism, prior)
    elif solver == "prop8":
        from .optimizer import solve_prop8
        best = solve_prop8(table, R, prior, grid_eps=eps).objective
    elif solver == "dp":
        from .optimizer import dp_partitional
        best = dp_partitional(R, prior, eps).value
    else:
        raise DomainError(f"unknown solver {solver!r}")
    return float(best - baseline)


# ---------------------------------------------------------------------------
# single-pool design


@dataclass(frozen=True)
class PoolDesign:
    mechanism: MonotonePartitional
    pool_lo: float
    pool_hi: float
    pooled_mean: float
    slope: float | None


def _component(R: PiecewiseLinear, slope: float, anchor: float, touch_lo: float, touch_hi: float):
    """Maximal interval around ``[touch_lo, touch_hi]`` where the line lies above ``R``."""
    ya = R(anchor)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(R.values))))
    x = R.breakpoints

    def gap(z):
        return ya + slope * (z - anchor) - R(z)

    lo = touch_lo
    left = x[x < touch_lo][::-1]
    prev, prev_gap = touch_lo, gap(touch_lo)
    for z in left:
        gz = gap(z)
        if gz < -tol:
            lo = prev - prev_gap * (prev - z) / (prev_gap - gz)
            break
        prev, prev_gap = z, gz
    else:
        lo = R.lo
    hi = touch_hi
    right = x[x > touch_hi]
    prev, prev_gap = touch_hi, gap(touch_hi)
    for z in right:
        gz = gap(z)
        if gz < -tol:
            hi = prev + prev_gap * (z - prev) / (prev_gap - gz)
            break
        prev, prev_gap = z, gz
    else:
        hi = R.hi
    return max(min(lo, touch_lo), R.lo), min(max(hi, touch_hi), R.hi)


def algorithm1_thresholds(table, R: PiecewiseLinear, prior: Prior, market=None) -> PoolDesign:
    """Optimal reveal-pool-reveal design for a revenue curve with one concave interval.

    Candidate pools are generated by supporting lines of the concave interval,
    ordered so that the pool drifts left while the touch point drifts right.  The
    optimum is where the pooled mean meets the touch point.
    """
    if market is not None and market.pattern == "mixed":
        raise PatternMismatch("market sizes do not follow a similar/monotone/similar layout")
    g = R.merged()
    intervals = concave_intervals(g)
    E = prior.mean()
    if not intervals:
        return PoolDesign(MonotonePartitional.full_revelation(prior), E, E, E, None)
    if len(intervals) > 1:
        raise PatternMismatch(f"revenue curve has {len(intervals)} concave intervals")
    kinks = list(intervals[0].kinks)
    slope_in = g.slope_left(kinks[0])
    slope_out = g.slope_right(kinks[-1])

    # segments: (kind, data); each maps t in [0, 1] to (slope, anchor, pool_lo, pool_hi, touch)
    first = _component(g, slope_in, kinks[0], kinks[0], kinks[0])
    last = _component(g, slope_out, kinks[-1], kinks[-1], kinks[-1])
    segments = [("open_left", first)]
    for j, k in enumerate(kinks):
        lo_slope = g.slope_left(k)
        hi_slope = g.slope_right(k)
        segments.append(("rotate", (k, lo_slope, hi_slope)))
        if j + 1 < len(kinks):
            segments.append(("slide", (k, kinks[j + 1], hi_slope)))
    segments.append(("close_right", last))

    def evaluate(seg, t):
        kind, data = seg
        if kind == "open_left":
            lo_end, hi_end = data
            lo = kinks[0] - t * (kinks[0] - lo_end)
            return slope_in, kinks[0], lo, hi_end, kinks[0]
        if kind == "rotate":
            k, s0, s1 = data
            slope = s0 + t * (s1 - s0)
            lo, hi = _component(g, slope, k, k, k)
            return slope, k, lo, hi, k
        if kind == "slide":
            a, b, slope = data
            lo, hi = _component(g, slope, a, a, b)
            return slope, a, lo, hi, a + t * (b - a)
        lo_end, hi_end = data
        hi = hi_end - t * (hi_end - kinks[-1])
        return slope_out, kinks[-1], lo_end, hi, kinks[-1]

    def excess(seg, t):
        slope, anchor, lo, hi, touch = evaluate(seg, t)
        if hi - lo <= 0.0 or prior.mass(lo, hi) <= 0.0:
            return 0.5 * (lo + hi) - touch
        return prior.conditional_mean(lo, hi) - touch

    for seg in segments:
        h0, h1 = excess(seg, 0.0), excess(seg, 1.0)
        if h0 >= 0.0 >= h1:
            break
    else:
        raise NumericalFailure("pooled mean never meets the touch point")
    a, b = 0.0, 1.0
    if h0 == 0.0:
        b = 0.0
    elif h1 == 0.0:
        a = 1.0
    else:
        for _ in range(200):
            mid = 0.5 * (a + b)
            if excess(seg, mid) >= 0.0:
                a = mid
            else:
                b = mid
            if b - a <= 1e-16:
                break
    t = 0.5 * (a + b)
    slope, anchor, lo, hi, touch = evaluate(seg, t)
    z_star = prior.conditional_mean(lo, hi)
    if abs(z_star - touch) > ROOT_TOL * max(1.0, prior.width):
        raise NumericalFailure(f"pooled-mean equation residual {abs(z_star - touch):.3e}")
    mech = MonotonePartitional.reveal_pool_reveal(prior, lo, hi)
    return PoolDesign(mech, float(lo), float(hi), float(z_star), float(slope))


# ---------------------------------------------------------------------------
# optimality certificate and sufficient conditions


@dataclass(frozen=True)
class CertificateReport:
    ok: bool
    convex: bool
    dominates: bool
    support_tight: bool
    integral_gap: float
    mpc: bool
    max_violation: float
    nu: PiecewiseLinear = field(repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "convex": self.convex, "dominates": self.dominates,
                "support_tight": self.support_tight, "integral_gap": float(f"{self.integral_gap:.12g}"),
                "mpc": self.mpc, "max_violation": float(f"{self.max_violation:.12g}")}


def certificate_function(R: PiecewiseLinear, mech: MonotonePartitional, prior: Prior,
                         slope: float | None = None) -> PiecewiseLinear:
    """Convex majorant candidate: ``R`` off the pools, a line through each pooled atom."""
    nu = R
    for a, b, atom in mech.pools():
        if slope is not None:
            gamma = slope
        elif a > R.lo and b < R.hi:
            gamma = R.chord(a, b)[0]
        elif a > R.lo:
            gamma = (R(atom) - R(a)) / (atom - a) if atom > a else R.slope_left(a)
        elif b < R.hi:
            gamma = (R(b) - R(atom)) / (b - atom) if b > atom else R.slope_right(b)
        else:
            gamma = R.chord(a, b)[0]
        nu = upper_closure_with_pool(nu, (a, b), atom, gamma)
    return nu


def duality_certificate(R: PiecewiseLinear, mech: MonotonePartitional, prior: Prior,
                        slope: float | None = None, tol: float = CERT_TOL,
                        n_uniform: int = 1000) -> CertificateReport:
    nu = certificate_function(R, mech, prior, slope)
    G = mech.posterior(prior)
    scale = max(1.0, float(np.max(np.abs(R.values))))
    jumps = np.diff(nu.slopes)
    slope_scale = max(1.0, float(np.max(np.abs(nu.slopes))))
    convex = bool(np.all(jumps >= -tol * slope_scale))
    grid = set(np.linspace(prior.lo, prior.hi, n_uniform + 1).tolist())
    grid.update(R.breakpoints.tolist())
    grid.update(mech.cutoffs)
    grid.update(a for a in mech.atoms if a is not None)
    grid = np.array(sorted(grid))
    diff = nu(grid) - R(grid)
    dominate_gap = float(min(0.0, np.min(diff)))
    dominates = dominate_gap >= -tol * scale
    tight = 0.0
    for mu, _ in G.atoms:
        tight = max(tight, abs(nu(mu) - R(mu)))
    for a, b in G.reveal:
        inside = grid[(grid >= a) & (grid <= b)]
        if inside.size:
            tight = max(tight, float(np.max(np.abs(nu(inside) - R(inside)))))
    support_tight = tight <= tol * scale
    int_F = integrate_against_prior(nu, prior, prior.lo, prior.hi)
    int_G = expected_revenue(nu, G, prior)
    gap = abs(int_F - int_G)
    mpc = mpc_check(G, prior)
    worst = max(-dominate_gap, tight, gap, -mpc.worst_violation, abs(mpc.endpoint_gap),
                max(0.0, -float(np.min(jumps))) if jumps.size else 0.0)
    ok = convex and dominates and support_tight and gap <= tol * scale and mpc.ok
    return CertificateReport(bool(ok), convex, bool(dominates), bool(support_tight), float(gap), mpc.ok,
                             float(worst), nu)


@dataclass(frozen=True)
class ConditionReport:
    C1: bool
    C2: bool
    C3: bool
    C4: bool
    n_intervals: int
    tangents: tuple
    witnesses: tuple

    @property
    def any(self) -> bool:
        return self.C1 or self.C2 or self.C3 or self.C4

    def to_dict(self) -> dict:
        return {"C1": self.C1, "C2": self.C2, "C3": self.C3, "C4": self.C4, "concave_intervals": self.n_intervals,
                "witnesses": list(self.witnesses)}


def tangent_pool_edges(R: PiecewiseLinear, line: TangentLine) -> tuple[float, float]:
    """Last point left of ``x`` and first point right of ``y`` where ``R`` rises above the line."""
    tol = 1e-12 * max(1.0, float(np.max(np.abs(R.values))))
    pts = R.breakpoints
    gap = R(pts) - line(pts)
    lo, hi = R.lo, R.hi
    left = [k for k in range(pts.size) if pts[k] < line.x and gap[k] > tol]
    if left:
        k = left[-1]
        # crossing between pts[k] (R above) and the next breakpoint
        j = k + 1
        lo = pts[k] + gap[k] * (pts[j] - pts[k]) / (gap[k] - gap[j]) if gap[j] <= tol else pts[j]
    right = [k for k in range(pts.size) if pts[k] > line.y and gap[k] > tol]
    if right:
        k = right[0]
        j = k - 1
        hi = pts[k] - gap[k] * (pts[k] - pts[j]) / (gap[k] - gap[j]) if gap[j] <= tol else pts[j]
    return float(lo), float(hi)


def check_conditions(table, R: PiecewiseLinear, prior: Prior) -> ConditionReport:
    """Sufficient conditions for a monotone partitional design to be optimal."""
    intervals = concave_intervals(R)
    L = len(intervals)
    tangents = []
    for i in range(L):
        for j in range(i + 1, L):
            line = tangent_between(R, i, j, intervals)
            if line is not None:
                tangents.append(line)
    E = prior.mean()
    c3_all, c4_all = True, True
    witnesses = []
    for line in tangents:
        x, y = line.x, line.y
        z_lo, z_hi = tangent_pool_edges(R, line)
        c3 = (x < E and y < E and z_hi >= prior.hi) or (x > E and y > E and z_lo <= prior.lo)
        first = prior.conditional_mean(z_lo, y)
        second = prior.conditional_mean(x, z_hi)
        z_star = prior.partial_expectation(z_lo, z_hi)
        F_lo, F_hi = prior.cdf(z_lo), prior.cdf(z_hi)
        level = (y * F_hi - x * F_lo - z_star) / (y - x)
        p_x = level - F_lo
        if 0.0 <= level <= 1.0:
            q = float(prior.ppf(level))
            third_lhs = (q - x) * p_x
            third_rhs = prior.cdf_integral(q) - prior.cdf_integral(z_lo) - F_lo * (q - z_lo)
        else:
            third_lhs, third_rhs = -math.inf, 0.0
        ineq = (first >= x, second <= y, third_lhs >= third_rhs)
        c4 = all(ineq)
        c3_all &= c3
        c4_all &= c4
        witnesses.append({"x": x, "y": y, "slope": line.slope, "pool_lo": z_lo, "pool_hi": z_hi,
                          "C3": bool(c3), "C4": [bool(v) for v in ineq],
                          "C4_slack": [first - x, y - second, third_lhs - third_rhs]})
    return ConditionReport(L <= 1, not tangents, bool(c3_all), bool(c4_all), L, tuple(tangents), tuple(witnesses))
