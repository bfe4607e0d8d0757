"""Equilibrium agent distributions and the platform revenue curve.

Two independent routes are provided.  ``solve_potential`` maximises the
potential of the repositioning game numerically for any intercept vector.  The
regime builders trace the closed-form equilibrium as the shock at node 0 moves
away from its prior mean and return a ``RegimeTable`` whose slopes define the
revenue curve exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import AssumptionViolated, DomainError, NonConvergence
from .model import (
    DistanceTable,
    Network,
    check_homogeneous_balance,
    check_initial_balance,
    check_no_depletion,
    node_prices,
    shortest_distances,
)
from .priors import Prior
from .pwl import PiecewiseLinear

WARDROP_TOL = 1e-11
MAX_SWEEPS = 100_000
EVENT_RTOL = 1e-12
COLINEAR_RTOL = 1e-9


# ---------------------------------------------------------------------------
# numerical equilibrium


@dataclass(frozen=True)
class StrategyProfile:
    """Flows ``flows[i, j]`` of agents from origin ``i`` to destination ``j``."""

    flows: np.ndarray
    distribution: np.ndarray
    potential: float
    wardrop_residual: float
    gap: float
    sweeps: int


def _as_intercepts(net: Network, means) -> np.ndarray:
    t = np.atleast_1d(np.asarray(means, dtype=float))
    if t.size == 1:
        return net.intercepts(float(t[0]))
    if t.shape != (net.n_nodes,):
        raise DomainError(f"expected a scalar shock or {net.n_nodes} intercepts")
    return t.copy()


def potential_value(net: Network, intercepts, flows: np.ndarray) -> float:
    t = _as_intercepts(net, intercepts)
    q = flows.sum(axis=0)
    keep = 1.0 - net.commission
    return float(np.sum(keep * (t * q - 0.5 * net.b * q * q)) - np.sum(net.costs * flows))


def _utilities(net: Network, t: np.ndarray, q: np.ndarray) -> np.ndarray:
    """``G[i, j]``: payoff of an agent from ``i`` serving at ``j``."""
    return ((1.0 - net.commission) * (t - net.b * q))[None, :] - net.costs


def wardrop_residual(net: Network, intercepts, flows: np.ndarray, support_tol: float = 1e-12) -> float:
    """Largest payoff an agent on a used route could gain by switching."""
    t = _as_intercepts(net, intercepts)
    G = _utilities(net, t, flows.sum(axis=0))
    best = G.max(axis=1, keepdims=True)
    used = flows > support_tol * max(1.0, float(np.max(net.m)))
    if not np.any(used):
        return 0.0
    return float(np.max((best - G)[used]))


def _duality_gap(net: Network, t: np.ndarray, flows: np.ndarray) -> float:
    G = _utilities(net, t, flows.sum(axis=0))
    return float(np.sum(net.m * G.max(axis=1)) - np.sum(G * flows))


def _water_fill(c: np.ndarray, b: np.ndarray, mass: float) -> np.ndarray:
    """Maximise ``sum(c x - b x^2 / 2)`` over ``x >= 0, sum(x) = mass``."""
    x = np.zeros_like(c)
    if mass <= 0.0:
        return x
    flat = b <= 0.0
    c_flat = float(np.max(c[flat])) if np.any(flat) else -math.inf
    curved = np.flatnonzero(~flat)
    order = curved[np.argsort(-c[curved], kind="stable")]
    cs, bs = c[order], b[order]
    inv = 1.0 / bs
    cum_inv = np.cumsum(inv)
    cum_cb = np.cumsum(cs * inv)
    level = None
    for k in range(order.size):
        lam = (cum_cb[k] - mass) / cum_inv[k]
        nxt = cs[k + 1] if k + 1 < order.size else -math.inf
        if lam >= nxt:
            level = lam
            break
    if level is None or level < c_flat:
        level = c_flat
        x[order] = np.maximum(0.0, (cs - level) * inv)
        x[np.flatnonzero(flat)[np.argmax(c[flat])]] += mass - x.sum()
        return x
    x[order] = np.maximum(0.0, (cs - level) * inv)
    return x


def _polish(net: Network, t: np.ndarray, flows: np.ndarray, support_tol: float) -> np.ndarray | None:
    """Solve the first-order conditions exactly on the current support."""
    n = net.n_nodes
    keep = 1.0 - net.commission
    scale = max(1.0, float(np.max(net.m)))
    rows = [i for i in range(n) if net.m[i] > 0.0]
    support = [(i, j) for i in rows for j in range(n) if flows[i, j] > support_tol * scale]
    if not support:
        return None
    col = {pair: k for k, pair in enumerate(support)}
    lam = {i: len(support) + k for k, i in enumerate(rows)}
    size = len(support) + len(rows)
    A = np.zeros((size, size))
    rhs = np.zeros(size)
    eq = 0
    for (i, j) in support:
        # keep * (t_j - b_j q_j) - D_ij - lambda_i = 0
        for (k, jj) in support:
            if jj == j:
                A[eq, col[(k, jj)]] = keep * net.b[j]
        A[eq, lam[i]] = 1.0
        rhs[eq] = keep * t[j] - net.costs[i, j]
        eq += 1
    for i in rows:
        for (k, j) in support:
            if k == i:
                A[eq, col[(k, j)]] = 1.0
        rhs[eq] = net.m[i]
        eq += 1
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    if np.max(np.abs(A @ sol - rhs)) > 1e-10 * max(1.0, float(np.max(np.abs(rhs)))):
        return None
    out = np.zeros_like(flows)
    for (i, j), k in col.items():
        out[i, j] = sol[k]
    if np.min(out) < -1e-12 * scale:
        return None
    out = np.maximum(out, 0.0)
    # restore exact row sums after clipping
    for i in rows:
        total = out[i].sum()
        if total <= 0.0:
            return None
        out[i] *= net.m[i] / total
    return out


def solve_potential(net: Network, means, tol: float = WARDROP_TOL, max_sweeps: int = MAX_SWEEPS,
                    initial: np.ndarray | None = None) -> StrategyProfile:
    """Equilibrium flows for a scalar shock at node 0 or a full intercept vector.

    Block-coordinate ascent: each origin row is re-optimised exactly by water
    filling while the other rows are held fixed.  Whenever the set of used routes
    stops changing, the first-order system on that set is solved directly and
    accepted once its Wardrop residual is below ``tol``.
    """
    t = _as_intercepts(net, means)
    n = net.n_nodes
    keep = 1.0 - net.commission
    b = keep * net.b
    x = np.diag(net.m).astype(float) if initial is None else np.array(initial, dtype=float)
    q = x.sum(axis=0)
    support_tol = 1e-12
    scale = max(1.0, float(np.max(net.m)))
    prev_support = None
    sweeps = 0
    while True:
        res = wardrop_residual(net, t, x)
        if res <= tol:
            break
        support = x > 1e-9 * scale
        if prev_support is not None and np.array_equal(support, prev_support):
            polished = _polish(net, t, x, 1e-9)
            if polished is not None and wardrop_residual(net, t, polished) <= tol:
                x = polished
                break
        prev_support = support
        if sweeps >= max_sweeps:
            raise NonConvergence(sweeps, _duality_gap(net, t, x))
        for i in range(n):
            if net.m[i] <= 0.0:
                continue
            q -= x[i]
            c = keep * t - b * q - net.costs[i]
            x[i] = _water_fill(c, b, net.m[i])
            q += x[i]
        sweeps += 1
    q = x.sum(axis=0)
    return StrategyProfile(x, q, potential_value(net, t, x), wardrop_residual(net, t, x, support_tol),
                           _duality_gap(net, t, x), sweeps)


def revenue_from_distribution(net: Network, intercepts, q: np.ndarray) -> float:
    t = _as_intercepts(net, intercepts)
    return float(net.commission * np.sum((t - net.b * q) * q))


def equilibrium_revenue(net: Network, means) -> float:
    prof = solve_potential(net, means)
    return revenue_from_distribution(net, means, prof.distribution)


# ---------------------------------------------------------------------------
# closed-form regimes


@dataclass(frozen=True)
class Regime:
    """One regime of the closed-form equilibrium.

    ``lower``/``upper`` are the shock levels where the regime starts and ends
    (unclipped, possibly infinite).  Agents flow into node 0 from ``move_in``
    (``depleted`` nodes have emptied); they flow out of node 0 to ``move_out``.
    """

    index: int
    lower: float
    upper: float
    slope: float
    move_in: tuple = ()
    depleted: tuple = ()
    move_out: tuple = ()
    shock_depleted: bool = False

    def affected_label(self) -> str:
        def fmt(nodes):
            return " ".join(str(i) for i in nodes)
        parts = [f"in={fmt(self.move_in)}", f"depleted={fmt(self.depleted)}", f"out={fmt(self.move_out)}"]
        if self.shock_depleted:
            parts.append("node0=depleted")
        return ";".join(parts)


@dataclass(frozen=True)
class RegimeTable:
    regimes: tuple
    support: tuple
    anchor: float
    anchor_value: float
    commission: float

    @property
    def K(self) -> int:
        return max(r.index for r in self.regimes)

    @property
    def K_tilde(self) -> int:
        return -min(r.index for r in self.regimes)

    @property
    def slopes(self) -> np.ndarray:
        return np.array([r.slope for r in self.regimes])

    def regime(self, index: int) -> Regime:
        for r in self.regimes:
            if r.index == index:
                return r
        raise KeyError(index)

    def thresholds(self) -> np.ndarray:
        """Regime boundaries ``s0[k]`` for ``k != 0`` that fall inside the support."""
        lo, hi = self.support
        pts = []
        for r in self.regimes:
            edge = r.lower if r.index > 0 else r.upper if r.index < 0 else None
            if edge is not None and lo <= edge <= hi:
                pts.append(edge)
        return np.array(sorted(pts))

    def regime_at(self, s0: float) -> Regime:
        """Half-open convention: a boundary belongs to the regime above it."""
        for r in self.regimes:
            if r.lower <= s0 < r.upper:
                return r
        return self.regimes[-1] if s0 >= self.regimes[-1].lower else self.regimes[0]

    def to_rows(self, R: PiecewiseLinear | None = None) -> list:
        R = revenue_function(self) if R is None else R
        lo, hi = self.support
        rows = []
        for r in self.regimes:
            start = min(max(r.lower, lo), hi)
            rows.append({"k": r.index, "s0_k": start, "slope_k": r.slope, "R_k": R(start),
                         "affected_set": r.affected_label()})
        return rows

    def to_csv(self, R: PiecewiseLinear | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "s0_k", "slope_k", "R_k", "affected_set"])
        for row in self.to_rows(R):
            w.writerow([row["k"], f"{row['s0_k']:.12g}", f"{row['slope_k']:.12g}", f"{row['R_k']:.12g}",
                        row["affected_set"]])
        return buf.getvalue()

    def to_json(self) -> str:
        def num(v):
            return None if not math.isfinite(v) else float(f"{v:.12g}")
        doc = {
            "support": [num(v) for v in self.support],
            "anchor": num(self.anchor),
            "anchor_value": num(self.anchor_value),
            "commission": num(self.commission),
            "regimes": [
                {"k": r.index, "lower": num(r.lower), "upper": num(r.upper), "slope": num(r.slope),
                 "move_in": list(r.move_in), "depleted": list(r.depleted), "move_out": list(r.move_out),
                 "shock_depleted": r.shock_depleted}
                for r in self.regimes
            ],
        }
        return json.dumps(doc, indent=2)


def _require_positive_elasticity(net: Network) -> None:
    if any(b <= 0.0 for b in net.beta[1:]):
        raise DomainError("closed-form regimes need strictly positive elasticities at every node")


def _anchor_value(net: Network, prior: Prior) -> float:
    # nobody moves at the prior mean when the baseline is balanced
    return revenue_from_distribution(net, prior.mean(), net.m)


def _slack(v: float) -> float:
    return EVENT_RTOL * max(1.0, abs(v)) if math.isfinite(v) else 0.0


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= EVENT_RTOL * max(1.0, abs(a), abs(b))


def _rise_slope(net, delta, pool_mass, active) -> float:
    r, b0 = net.commission, net.beta[0]
    if not active:
        return float(r * pool_mass)
    num = pool_mass + sum(delta[i] / net.beta[i] for i in active)
    den = b0 * (1.0 / b0 + sum(1.0 / net.beta[i] for i in active))
    return float(r * num / den)


def _fall_slope(net, delta, pool_mass, active) -> float:
    r, b0 = net.commission, net.beta[0]
    if not active:
        return float(r * pool_mass)
    num = pool_mass - sum(delta[i] / net.beta[i] for i in active)
    den = b0 * (1.0 / b0 + sum(1.0 / net.beta[i] for i in active))
    return float(r * num / den)


def _trace_up(net: Network, dist: DistanceTable, start_level: float, stop: float):
    """Positive-shock regimes as ``(lower, upper, slope, move_in, depleted)``.

    ``start_level`` is the node-0 price at the prior mean.  Tracing stops once a
    regime starts at or beyond ``stop``.
    """
    s, m, bt = net.s, net.m, net.beta
    base = net.market_size[0]
    delta = dist.distances / (1.0 - net.commission)
    prices = s - net.b * m
    entry = {i: prices[i] + delta[i] for i in range(1, net.n_nodes)}
    drain = {i: s[i] + delta[i] for i in range(1, net.n_nodes)}
    active, depleted = [], []
    pool_mass = m[0]

    def shock_at(level):
        q0 = pool_mass - sum((s[i] - level + delta[i]) / bt[i] for i in active)
        return level + bt[0] * q0 - base

    level = start_level
    lower = -math.inf
    out = []
    while True:
        events = [entry[i] for i in entry if i not in active and i not in depleted]
        events += [drain[i] for i in active]
        nxt = min(events) if events else math.inf
        upper = shock_at(nxt) if math.isfinite(nxt) else math.inf
        out.append((float(lower), float(upper), _rise_slope(net, delta, pool_mass, active), tuple(sorted(active)),
                    tuple(sorted(depleted))))
        if not math.isfinite(nxt) or upper > stop + _slack(stop):
            return out
        level = nxt
        for i in [i for i in active if _close(drain[i], level)]:
            active.remove(i)
            depleted.append(i)
        for i in sorted(entry):
            if i not in active and i not in depleted and _close(entry[i], level):
                pool_mass += m[i]
                if _close(drain[i], level):
                    depleted.append(i)
                else:
                    active.append(i)
        lower = upper


def _trace_down(net: Network, dist: DistanceTable, start_level: float, stop: float):
    """Negative-shock regimes as ``(lower, upper, slope, move_out, shock_depleted)``, highest first."""
    s, m, bt = net.s, net.m, net.beta
    base = net.market_size[0]
    delta = dist.distances / (1.0 - net.commission)
    prices = s - net.b * m
    entry = {i: prices[i] - delta[i] for i in range(1, net.n_nodes)}
    active = []
    pool_mass = m[0]

    def shock_at(level):
        q0 = pool_mass - sum((s[i] - level - delta[i]) / bt[i] for i in active)
        return level + bt[0] * q0 - base

    def empty_level():
        inv = sum(1.0 / bt[i] for i in active)
        return (sum((s[i] - delta[i]) / bt[i] for i in active) - pool_mass) / inv

    upper = math.inf
    out = []
    if m[0] <= 0.0:
        out.append((-math.inf, upper, 0.0, (), True))
        return out
    while True:
        events = [entry[i] for i in entry if i not in active]
        nxt = max(events) if events else -math.inf
        drained = empty_level() if active else -math.inf
        if active and drained >= nxt - EVENT_RTOL * max(1.0, abs(drained)):
            lower = drained - base
            out.append((float(lower), float(upper), _fall_slope(net, delta, pool_mass, active), tuple(sorted(active)), False))
            if lower >= stop - _slack(stop):
                out.append((-math.inf, float(lower), 0.0, tuple(sorted(active)), True))
            return out
        lower = shock_at(nxt) if math.isfinite(nxt) else -math.inf
        out.append((float(lower), float(upper), _fall_slope(net, delta, pool_mass, active), tuple(sorted(active)), False))
        if not math.isfinite(nxt) or lower < stop - _slack(stop):
            return out
        for i in sorted(entry):
            if i not in active and _close(entry[i], nxt):
                active.append(i)
                pool_mass += m[i]
        upper = lower


def _assemble(up, down, prior: Prior, anchor_value: float, commission: float) -> RegimeTable:
    lo, hi = prior.support
    regimes = []
    for k, (lower, upper, slope, move_in, depleted) in enumerate(up):
        if k > 0 and lower > hi + _slack(hi):
            break
        regimes.append(Regime(k, lower, upper, slope, move_in=move_in, depleted=depleted))
    negative = []
    for k, (lower, upper, slope, move_out, gone) in enumerate(down):
        if k == 0:
            regimes[0] = Regime(0, lower, regimes[0].upper, regimes[0].slope)
            continue
        if upper <= lo + _slack(lo):
            break
        negative.append(Regime(-k, lower, upper, slope, move_out=move_out, shock_depleted=gone))
    regimes = sorted(negative + regimes, key=lambda r: r.index)
    return RegimeTable(tuple(regimes), (lo, hi), prior.mean(), anchor_value, commission)


def regimes_general(net: Network, dist: DistanceTable | None, prior: Prior) -> RegimeTable:
    """Regimes under a balanced-incentive baseline, allowing depletion.

    Nodes that tie at an event enter (or empty) together.
    """
    dist = dist or shortest_distances(net)
    report = check_initial_balance(net, prior)
    if not report.ok:
        raise AssumptionViolated(f"agents at node {report.violating_pair[1]} gain by moving to "
                                 f"node {report.violating_pair[0]} at the prior mean")
    _require_positive_elasticity(net)
    lo, hi = prior.support
    level = prior.mean() + net.market_size[0] - net.beta[0] * net.mass[0]
    up = _trace_up(net, dist, level, hi)
    down = _trace_down(net, dist, level, lo)
    return _assemble(up, down, prior, _anchor_value(net, prior), net.commission)


def regimes_simple(net: Network, dist: DistanceTable | None, prior: Prior) -> RegimeTable:
    """Regimes for a homogeneous-price market with no depletion on the support.

    Distance groups enter one at a time; thresholds and slopes come from the
    group-level formulas rather than an event sweep.
    """
    dist = dist or shortest_distances(net)
    if not check_homogeneous_balance(net, prior).ok:
        raise AssumptionViolated("baseline prices are not all equal to zero")
    dep = check_no_depletion(net, prior, dist)
    if not dep.ok:
        raise AssumptionViolated(f"support violates the no-depletion bound ({dep.binding})")
    _require_positive_elasticity(net)
    r, b0, m0 = net.commission, net.beta[0], net.mass[0]
    base = net.market_size[0]
    lo, hi = prior.support
    scale = 1.0 / (1.0 - r)
    deltas = [d * scale for d in dist.group_distances]
    inv = [sum(1.0 / net.beta[i] for i in g) for g in dist.groups]
    mass = [sum(net.mass[i] for i in g) for g in dist.groups]
    dinv = [sum(dist.distances[i] * scale / net.beta[i] for i in g) for g in dist.groups]

    def threshold(n, sign):
        behind = sum((deltas[n] - deltas[k]) * inv[k] for k in range(n))
        return sign * deltas[n] + b0 * (m0 + sign * behind) - base

    def slope(n, sign):
        if n == 0:
            return float(r * m0)
        num = m0 + sum(mass[k] + sign * dinv[k] for k in range(n))
        den = b0 * (1.0 / b0 + sum(inv[k] for k in range(n)))
        return float(r * num / den)

    groups = len(dist.groups)
    up_edges = [threshold(n, +1.0) for n in range(groups)]
    down_edges = [threshold(n, -1.0) for n in range(groups)]
    regimes = []
    K = 0
    while K < groups and up_edges[K] <= hi + _slack(hi):
        K += 1
    Kt = 0
    while Kt < groups and down_edges[Kt] > lo + _slack(lo):
        Kt += 1
    members = lambda n: tuple(sorted(i for g in dist.groups[:n] for i in g))
    for k in range(1, K + 1):
        upper = up_edges[k] if k < groups else math.inf
        regimes.append(Regime(k, up_edges[k - 1], upper, slope(k, +1.0), move_in=members(k)))
    for k in range(1, Kt + 1):
        lower = down_edges[k] if k < groups else -math.inf
        regimes.append(Regime(-k, lower, down_edges[k - 1], slope(k, -1.0), move_out=members(k)))
    regimes.append(Regime(0, down_edges[0] if groups else -math.inf, up_edges[0] if groups else math.inf,
                          r * m0))
    regimes.sort(key=lambda reg: reg.index)
    table = RegimeTable(tuple(regimes), (lo, hi), prior.mean(), _anchor_value(net, prior), r)
    _guard_depletion(net, dist, table)
    return table


def _guard_depletion(net: Network, dist: DistanceTable, table: RegimeTable) -> None:
    """Reject tables whose group formulas would empty a node inside the support."""
    lo, hi = table.support
    delta = dist.distances / (1.0 - net.commission)
    s, b, base = net.s, net.b, net.market_size[0]
    top = table.regime_at(hi)
    if top.move_in:
        inv = sum(1.0 / b[i] for i in top.move_in)
        pool = net.m[0] + sum(net.m[i] for i in top.move_in)
        level = (hi + base - b[0] * pool + b[0] * sum((s[i] + delta[i]) / b[i] for i in top.move_in)) / (
            1.0 + b[0] * inv)
        if any(s[i] + delta[i] <= level for i in top.move_in):
            raise AssumptionViolated("a supplying node empties inside the support; use regimes_general")
    bottom = table.regime_at(lo)
    if bottom.move_out:
        inv = sum(1.0 / b[i] for i in bottom.move_out)
        pool = net.m[0] + sum(net.m[i] for i in bottom.move_out)
        level = (lo + base - b[0] * pool + b[0] * sum((s[i] - delta[i]) / b[i] for i in bottom.move_out)) / (
            1.0 + b[0] * inv)
        if (lo + base - level) / b[0] <= 0.0:
            raise AssumptionViolated("node 0 empties inside the support; use regimes_general")


def closed_form_distribution(net: Network, shock: float, reference_mean: float,
                             dist: DistanceTable | None = None) -> np.ndarray:
    """Equilibrium distribution from the regime formulas at one shock level.

    ``reference_mean`` is a shock level at which nobody moves.
    """
    dist = dist or shortest_distances(net)
    _require_positive_elasticity(net)
    s, m, bt = net.s, net.m, net.beta
    base = net.market_size[0]
    delta = dist.distances / (1.0 - net.commission)
    level0 = reference_mean + base - bt[0] * m[0]
    q = m.copy()
    if shock >= reference_mean:
        regimes = _trace_up(net, dist, level0, shock)
        lower, upper, _, active, depleted = next(r for r in regimes if r[0] <= shock < r[1] or r is regimes[-1])
        pool = m[0] + sum(m[i] for i in active + depleted)
        inv = sum(1.0 / bt[i] for i in active)
        level = (shock + base - bt[0] * pool + bt[0] * sum((s[i] + delta[i]) / bt[i] for i in active)) / (
            1.0 + bt[0] * inv)
        for i in active:
            q[i] = (s[i] - level + delta[i]) / bt[i]
        for i in depleted:
            q[i] = 0.0
        q[0] = pool - sum(q[i] for i in active)
        return q
    regimes = _trace_down(net, dist, level0, shock)
    lower, upper, _, active, gone = next(r for r in regimes if r[0] <= shock < r[1] or r is regimes[-1])
    pool = m[0] + sum(m[i] for i in active)
    if gone:
        inv = sum(1.0 / bt[i] for i in active)
        level = (sum((s[i] - delta[i]) / bt[i] for i in active) - pool) / inv if active else 0.0
        for i in active:
            q[i] = (s[i] - level - delta[i]) / bt[i]
        q[0] = 0.0
        return q
    inv = sum(1.0 / bt[i] for i in active)
    level = (shock + base - bt[0] * pool + bt[0] * sum((s[i] - delta[i]) / bt[i] for i in active)) / (
        1.0 + bt[0] * inv)
    for i in active:
        q[i] = (s[i] - level - delta[i]) / bt[i]
    q[0] = pool - sum(q[i] for i in active)
    return q


# ---------------------------------------------------------------------------
# revenue curve


def revenue_function(table: RegimeTable, prior: Prior | None = None) -> PiecewiseLinear:
    """Revenue as a function of the posterior mean at node 0.

    Values are chained outward from the prior-mean anchor using the regime
    slopes, so each piece's slope equals its regime slope exactly.
    """
    lo, hi = table.support if prior is None else prior.support
    anchor = min(max(table.anchor, lo), hi)
    pts = {lo, hi, anchor}
    for r in table.regimes:
        for edge in (r.lower, r.upper):
            if lo < edge < hi:
                pts.add(edge)
    x = np.array(sorted(pts))
    x = x[np.concatenate([[True], np.diff(x) > 0.0])]
    slopes = np.array([table.regime_at(0.5 * (a + b)).slope for a, b in zip(x[:-1], x[1:])])
    v = np.empty_like(x)
    k0 = int(np.searchsorted(x, anchor))
    v[k0] = table.anchor_value
    for k in range(k0 + 1, x.size):
        v[k] = v[k - 1] + slopes[k - 1] * (x[k] - x[k - 1])
    for k in range(k0 - 1, -1, -1):
        v[k] = v[k + 1] - slopes[k] * (x[k + 1] - x[k])
    return PiecewiseLinear(x, v)


@dataclass(frozen=True)
class RegularityReport:
    ok: bool
    colinear_triple: tuple | None


def check_regularity(table: RegimeTable, R: PiecewiseLinear | None = None,
                     rtol: float = COLINEAR_RTOL) -> RegularityReport:
    """No three threshold points of the revenue curve lie on one line."""
    R = revenue_function(table) if R is None else R
    lo, hi = table.support
    pts = sorted({lo, hi, *table.thresholds().tolist()})
    vals = [R(p) for p in pts]
    for a, b, c in combinations(range(len(pts)), 3):
        x1, x2, x3 = pts[a], pts[b], pts[c]
        y1, y2, y3 = vals[a], vals[b], vals[c]
        cross = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)
        scale = abs((x2 - x1) * (y3 - y1)) + abs((x3 - x1) * (y2 - y1))
        if abs(cross) <= rtol * max(scale, 1e-300):
            return RegularityReport(False, (x1, x2, x3))
    return RegularityReport(True, None)
