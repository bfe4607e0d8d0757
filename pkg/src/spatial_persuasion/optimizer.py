"""Global information design: the regime-allocation linear program, structure recovery,
the quantile-grid dynamic program and its multi-scenario extension."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .equilibrium import equilibrium_revenue
from .errors import ConfigError, DomainError, GridTooLarge, RecoveryMismatch, SolverStall
from .mechanism import (
    POOL,
    REVEAL,
    DoubleInterval,
    IntervalStructure,
    MonotonePartitional,
    PoolInterval,
    algorithm1_thresholds,
    expected_revenue,
    integrate_against_prior,
    mpc_check,
)
from .model import Network
from .priors import Prior, prior_from_config
from .pwl import PiecewiseLinear, concave_intervals

CUT_TOL = 1e-8
TIGHT_TOL = 1e-7
MAX_CUT_ROUNDS = 500
BRUTE_FORCE_LIMIT = 18


# ---------------------------------------------------------------------------
# regime-allocation program


@dataclass(frozen=True)
class RegimeAllocation:
    """Probability ``p[k]`` and mean-mass ``y[k]`` of posterior means on each linear piece."""

    edges: np.ndarray
    p: np.ndarray
    y: np.ndarray

    def means(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.p > 0.0, self.y / np.where(self.p > 0.0, self.p, 1.0), np.nan)


@dataclass(frozen=True)
class Prop8Result:
    allocation: RegimeAllocation
    objective: float
    rounds: int
    max_violation: float


def lower_quantile_mass(prior: Prior, u: float) -> float:
    """``int_0^u F^{-1}(v) dv``: mean-mass of the lowest ``u`` quantiles."""
    u = min(max(u, 0.0), 1.0)
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return prior.mean()
    return float(prior.first_moment(float(prior.ppf(u))))


def full_revelation_allocation(R: PiecewiseLinear, prior: Prior) -> RegimeAllocation:
    g = R.merged()
    x = g.breakpoints
    p = np.array([prior.mass(a, b) for a, b in zip(x[:-1], x[1:])])
    y = np.array([prior.partial_expectation(a, b) for a, b in zip(x[:-1], x[1:])])
    return RegimeAllocation(x.copy(), p, y)


def allocation_value(R: PiecewiseLinear, alloc: RegimeAllocation) -> float:
    g = R.merged()
    a = g.slopes
    b = g.values[:-1] - a * g.breakpoints[:-1]
    return float(np.dot(a, alloc.y) + np.dot(b, alloc.p))


def solve_prop8(table, R: PiecewiseLinear, prior: Prior, grid_eps: float = 1.0 / 256,
                max_rounds: int = MAX_CUT_ROUNDS) -> Prop8Result:
    """Best posterior-mean allocation over the linear pieces of ``R``.

    Each piece contributes ``slope * y + intercept * p``.  Feasibility of the
    allocation is the lower-tail majorisation ``Y_k >= H(P_k)`` on every prefix,
    where ``H`` integrates the quantile function; it is imposed through tangent
    cuts of the convex ``H``, seeded on the quantile grid and refined lazily.
    """
    if not (0.0 < grid_eps <= 0.5):
        raise DomainError("grid_eps must lie in (0, 0.5]")
    g = R.merged()
    if table is not None and (abs(table.support[0] - prior.lo) > 1e-12 or abs(table.support[1] - prior.hi) > 1e-12):
        raise DomainError("regime table and prior disagree on the support")
    x = g.breakpoints
    K = g.slopes.size
    a = g.slopes
    b = g.values[:-1] - a * x[:-1]
    E = prior.mean()
    # variables: p_0..p_{K-1}, y_0..y_{K-1}
    c = -np.concatenate([b, a])
    A_eq = np.zeros((2, 2 * K))
    A_eq[0, :K] = 1.0
    A_eq[1, K:] = 1.0
    b_eq = np.array([1.0, E])
    rows, rhs = [], []
    for k in range(K):
        lo_row = np.zeros(2 * K)
        lo_row[k], lo_row[K + k] = x[k], -1.0  # lo_k p_k - y_k <= 0
        hi_row = np.zeros(2 * K)
        hi_row[K + k], hi_row[k] = 1.0, -x[k + 1]  # y_k - hi_k p_k <= 0
        rows += [lo_row, hi_row]
        rhs += [0.0, 0.0]

    def cut(prefix, u0):
        # Y <= ... written as  -Y + F^{-1}(u0) P <= F^{-1}(u0) u0 - H(u0)
        slope = float(prior.ppf(u0))
        row = np.zeros(2 * K)
        row[:prefix] = slope
        row[K:K + prefix] = -1.0
        return row, slope * u0 - lower_quantile_mass(prior, u0)

    n_grid = int(math.ceil(1.0 / grid_eps))
    levels = np.unique(np.clip(np.arange(n_grid + 1) * grid_eps, 0.0, 1.0))
    for prefix in range(1, K):
        for u0 in levels:
            row, r = cut(prefix, float(u0))
            rows.append(row)
            rhs.append(r)
    bounds = [(0.0, None)] * K + [(None, None)] * K
    options = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
    violation = math.inf
    for rounds in range(1, max_rounds + 1):
        res = optimize.linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), A_eq=A_eq, b_eq=b_eq,
                               bounds=bounds, method="highs", options=options)
        if res.status != 0:
            raise SolverStall(f"linear program failed: {res.message}")
        p = np.maximum(res.x[:K], 0.0)
        y = res.x[K:]
        P, Y = np.cumsum(p), np.cumsum(y)
        worst, added = 0.0, 0
        for prefix in range(1, K):
            gap = lower_quantile_mass(prior, P[prefix - 1]) - Y[prefix - 1]
            worst = max(worst, gap)
            if gap > CUT_TOL:
                row, r = cut(prefix, float(min(max(P[prefix - 1], 0.0), 1.0)))
                rows.append(row)
                rhs.append(r)
                added += 1
        violation = worst
        if added == 0:
            alloc = RegimeAllocation(x.copy(), p, y)
            return Prop8Result(alloc, allocation_value(R, alloc), rounds, float(max(worst, 0.0)))
    raise SolverStall(f"cutting planes still violated by {violation:.3e} after {max_rounds} rounds")


# ---------------------------------------------------------------------------
# structure recovery


def _quantile_block_mean(prior: Prior, u_lo: float, u_hi: float) -> float:
    return (lower_quantile_mass(prior, u_hi) - lower_quantile_mass(prior, u_lo)) / (u_hi - u_lo)


def _double_interval(prior: Prior, u_start: float, u_end: float, atoms, tol: float) -> DoubleInterval | None:
    """Split the quantile block into a middle block for one atom and the remainder for the other."""
    (x, px), (y, py) = atoms
    lo, hi = float(prior.ppf(u_start)), float(prior.ppf(u_end))
    for inner, p_in, outer, p_out in ((y, py, x, px), (x, px, y, py)):
        left, right = u_start, u_end - p_in
        if right < left:
            continue
        m_left = _quantile_block_mean(prior, left, left + p_in)
        m_right = _quantile_block_mean(prior, right, right + p_in)
        if not (m_left - tol <= inner <= m_right + tol):
            continue
        for _ in range(200):
            mid = 0.5 * (left + right)
            if _quantile_block_mean(prior, mid, mid + p_in) < inner:
                left = mid
            else:
                right = mid
            if right - left <= 1e-15:
                break
        u_in = 0.5 * (left + right)
        z1, z2 = float(prior.ppf(u_in)), float(prior.ppf(u_in + p_in))
        if not (lo < z1 < z2 < hi):
            continue
        # atoms and masses are re-read from the prior so the split preserves the mean exactly
        m_in = prior.mass(z1, z2)
        m_out = prior.mass(lo, hi) - m_in
        inner_exact = prior.conditional_mean(z1, z2)
        outer_exact = (prior.partial_expectation(lo, hi) - prior.partial_expectation(z1, z2)) / m_out
        return DoubleInterval(lo, hi, z1, z2, outer_exact, inner_exact, m_out, m_in)
    return None


def recover_structure(alloc: RegimeAllocation, prior: Prior, tol: float = TIGHT_TOL) -> IntervalStructure:
    """Interval structure that induces the given allocation.

    Tight lower-tail prefixes split the atoms into runs that occupy consecutive
    quantile blocks.  A run with one atom is a pooled interval (dropped when it
    sits inside a single linear piece, where pooling equals revealing); a run with
    two atoms is a double interval.
    """
    keep = np.flatnonzero(alloc.p > tol * 1e-3)
    atoms = [(float(alloc.y[k] / alloc.p[k]), float(alloc.p[k]), int(k)) for k in keep]
    P = 0.0
    Y = 0.0
    runs, current, start = [], [], 0.0
    for mu, p, k in atoms:
        current.append((mu, p, k))
        P += p
        Y += mu * p
        if Y - lower_quantile_mass(prior, P) <= tol:
            runs.append((start, min(P, 1.0), current))
            current, start = [], P
    if current:
        runs.append((start, 1.0, current))
    intervals = []
    for u_start, u_end, run in runs:
        lo, hi = float(prior.ppf(u_start)), float(prior.ppf(u_end))
        if len(run) == 1:
            mu, p, k = run[0]
            a, b = alloc.edges[k], alloc.edges[k + 1]
            if lo >= a - tol and hi <= b + tol:
                continue
            intervals.append(PoolInterval(lo, hi, prior.conditional_mean(lo, hi), prior.mass(lo, hi)))
        elif len(run) == 2:
            di = _double_interval(prior, u_start, u_end, [(run[0][0], run[0][1]), (run[1][0], run[1][1])], tol)
            if di is None:
                raise RecoveryMismatch("two-atom run admits no double-interval split")
            intervals.append(di)
        else:
            raise RecoveryMismatch(f"run with {len(run)} atoms between tight prefixes")
    structure = IntervalStructure(tuple(intervals), prior.support)
    _verify_structure(structure, alloc, prior)
    return structure


def _verify_structure(structure: IntervalStructure, alloc: RegimeAllocation, prior: Prior) -> None:
    G = structure.posterior(prior)
    edges = alloc.edges
    edge_tol = TIGHT_TOL * max(1.0, prior.width)
    p = np.zeros_like(alloc.p)
    y = np.zeros_like(alloc.y)
    for a, b in G.reveal:
        for k in range(edges.size - 1):
            lo, hi = max(a, edges[k]), min(b, edges[k + 1])
            if hi > lo:
                p[k] += prior.mass(lo, hi)
                y[k] += prior.partial_expectation(lo, hi)
    ambiguous = []
    for mu, w in G.atoms:
        k = int(np.clip(np.searchsorted(edges, mu, side="right") - 1, 0, edges.size - 2))
        # a prefix slack of TIGHT_TOL moves an atom of mass w by up to TIGHT_TOL / w
        tol_k = edge_tol + TIGHT_TOL / max(w, 1e-300)
        near = [k]
        if k > 0 and abs(mu - edges[k]) <= tol_k:
            near.append(k - 1)
        if k + 2 < edges.size and abs(mu - edges[k + 1]) <= tol_k:
            near.append(k + 1)
        if len(near) > 1:
            ambiguous.append((mu, w, near))
            continue
        p[k] += w
        y[k] += mu * w
    # an atom on a shared edge may be booked to either side; follow the leftover allocation
    for mu, w, near in ambiguous:
        k = min(near, key=lambda j: abs(alloc.p[j] - p[j] - w))
        p[k] += w
        y[k] += mu * w
    mismatch = max(float(np.max(np.abs(p - alloc.p))), float(np.max(np.abs(y - alloc.y))))
    if mismatch > 1e-7 * max(1.0, prior.width):
        raise RecoveryMismatch(f"structure reproduces the allocation only to {mismatch:.3e}")
    if not mpc_check(G, prior).ok:
        raise RecoveryMismatch("recovered structure is not a contraction of the prior")


# ---------------------------------------------------------------------------
# quantile-grid dynamic program


@dataclass(frozen=True)
class QuantileGrid:
    eps: float
    levels: np.ndarray
    cutoffs: np.ndarray

    @classmethod
    def build(cls, prior: Prior, eps: float) -> "QuantileGrid":
        if not (0.0 < eps <= 0.5):
            raise DomainError("eps must lie in (0, 0.5]")
        n = int(math.ceil(1.0 / eps - 1e-12))
        levels = np.minimum(np.arange(n + 1) * eps, 1.0)
        levels[-1] = 1.0
        cuts = np.array([float(prior.ppf(u)) for u in levels])
        cuts[0], cuts[-1] = prior.lo, prior.hi
        cuts = np.maximum.accumulate(cuts)
        keep = np.concatenate([[True], np.diff(cuts) > 0.0])
        return cls(eps, levels[keep], cuts[keep])


@dataclass(frozen=True)
class CellWeights:
    cutoffs: np.ndarray
    weight: np.ndarray  # weight[i, j] for cell [cutoffs[i], cutoffs[j]], i < j
    pool_better: np.ndarray


def cell_weights(R, prior: Prior, cutoffs) -> CellWeights:
    """Best value of each candidate cell; pooling only unless ``R`` is piecewise linear."""
    c = np.asarray(cutoffs, dtype=float)
    n = c.size
    F = np.array([prior.cdf(z) for z in c])
    M = np.array([prior.first_moment(z) for z in c])
    mass = F[None, :] - F[:, None]
    first = M[None, :] - M[:, None]
    iu, ju = np.triu_indices(n, k=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(mass[iu, ju] > 0.0, first[iu, ju] / np.where(mass[iu, ju] > 0.0, mass[iu, ju], 1.0),
                        0.5 * (c[iu] + c[ju]))
    mean = np.clip(mean, np.maximum(c[iu], prior.lo), np.minimum(c[ju], prior.hi))
    if isinstance(R, PiecewiseLinear):
        pooled = mass[iu, ju] * R(mean)
    else:
        pooled = mass[iu, ju] * np.array([R(float(m)) for m in mean])
    weight = np.full((n, n), -np.inf)
    better = np.ones((n, n), dtype=bool)
    if isinstance(R, PiecewiseLinear):
        J = np.concatenate([[0.0], np.cumsum([integrate_against_prior(R, prior, a, b)
                                              for a, b in zip(c[:-1], c[1:])])])
        revealed = J[ju] - J[iu]
        weight[iu, ju] = np.maximum(pooled, revealed)
        scale = 1e-9 * max(1.0, float(np.max(np.abs(R.values))))
        better[iu, ju] = pooled > revealed + scale
    else:
        weight[iu, ju] = pooled
    return CellWeights(c, weight, better)


@dataclass(frozen=True)
class DPResult:
    mechanism: MonotonePartitional
    value: float
    values: np.ndarray
    grid: np.ndarray


def _mechanism_from_cells(cells: CellWeights, path: list, prior: Prior) -> MonotonePartitional:
    cuts = [cells.cutoffs[path[0]]]
    modes = []
    for i, j in zip(path[:-1], path[1:]):
        cuts.append(cells.cutoffs[j])
        modes.append(POOL if cells.pool_better[i, j] else REVEAL)
    return MonotonePartitional.build(cuts, modes, prior).canonical(prior)


def dp_partitional(R_eval, prior: Prior, eps: float) -> DPResult:
    """Optimal monotone partition whose cutoffs lie on the ``eps`` quantile grid."""
    grid = QuantileGrid.build(prior, eps)
    cells = cell_weights(R_eval, prior, grid.cutoffs)
    return _solve_chain(cells, prior)


def _solve_chain(cells: CellWeights, prior: Prior) -> DPResult:
    n = cells.cutoffs.size
    V = np.full(n, -np.inf)
    V[0] = 0.0
    arg = np.zeros(n, dtype=int)
    for j in range(1, n):
        cand = V[:j] + cells.weight[:j, j]
        k = int(np.argmax(cand))
        V[j], arg[j] = cand[k], k
    path = [n - 1]
    while path[-1] != 0:
        path.append(int(arg[path[-1]]))
    path.reverse()
    return DPResult(_mechanism_from_cells(cells, path, prior), float(V[-1]), V, cells.cutoffs)


def brute_force_partitional(R_eval, prior: Prior, grid) -> DPResult:
    """Exhaustive search over cutoff subsets of ``grid`` (support endpoints are always cutoffs)."""
    pts = np.unique(np.concatenate([[prior.lo], np.asarray(grid, dtype=float), [prior.hi]]))
    pts = pts[(pts >= prior.lo) & (pts <= prior.hi)]
    if np.asarray(grid).size > BRUTE_FORCE_LIMIT:
        raise GridTooLarge(f"{np.asarray(grid).size} candidates exceed the limit of {BRUTE_FORCE_LIMIT}")
    cells = cell_weights(R_eval, prior, pts)
    inner = range(1, pts.size - 1)
    best, best_path = -math.inf, None
    for r in range(len(inner) + 1):
        for subset in itertools.combinations(inner, r):
            path = [0, *subset, pts.size - 1]
            total = 0.0
            for i, j in zip(path[:-1], path[1:]):
                total = total + cells.weight[i, j]
            if total > best:
                best, best_path = total, path
    return DPResult(_mechanism_from_cells(cells, best_path, prior), float(best), np.array([]), pts)


@dataclass(frozen=True)
class MonotoneOptimum:
    mechanism: MonotonePartitional
    value: float
    source: str


def _polish_cutoffs(R: PiecewiseLinear, prior: Prior, mech: MonotonePartitional) -> MonotoneOptimum:
    inner0 = np.array(mech.cutoffs[1:-1])
    if inner0.size == 0:
        return MonotoneOptimum(mech, expected_revenue(R, mech, prior), "dp")

    def best_cells(inner):
        cuts = np.concatenate([[prior.lo], np.sort(np.clip(inner, prior.lo, prior.hi)), [prior.hi]])
        cuts = cuts[np.concatenate([[True], np.diff(cuts) > 0.0])]
        modes = []
        for a, b in zip(cuts[:-1], cuts[1:]):
            pooled = prior.mass(a, b) * R(prior.conditional_mean(a, b))
            modes.append(POOL if pooled > integrate_against_prior(R, prior, a, b) else REVEAL)
        return MonotonePartitional.build(cuts, modes, prior).canonical(prior)

    def loss(inner):
        return -expected_revenue(R, best_cells(inner), prior)

    res = optimize.minimize(loss, inner0, method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 4000 * inner0.size})
    polished = best_cells(res.x)
    return MonotoneOptimum(polished, expected_revenue(R, polished, prior), "dp+polish")


def best_monotone(R: PiecewiseLinear, prior: Prior, eps: float = 1.0 / 256, table=None) -> MonotoneOptimum:
    """Best monotone partitional design found by the exact single-pool routine or the polished DP."""
    candidates = []
    if len(concave_intervals(R)) <= 1:
        design = algorithm1_thresholds(table, R, prior)
        candidates.append(MonotoneOptimum(design.mechanism, expected_revenue(R, design.mechanism, prior), "alg1"))
    dp = dp_partitional(R, prior, eps)
    candidates.append(MonotoneOptimum(dp.mechanism, dp.value, "dp"))
    candidates.append(_polish_cutoffs(R, prior, dp.mechanism))
    return max(candidates, key=lambda c: c.value)


# ---------------------------------------------------------------------------
# scenario model


@dataclass(frozen=True)
class Scenario:
    """A shock direction over nodes whose scalar intensity has prior ``prior``."""

    probability: float
    direction: tuple
    prior: Prior = field(compare=False)

    def intercepts(self, net: Network, intensity: float) -> np.ndarray:
        base = np.array(net.market_size, dtype=float)
        return base + float(intensity) * np.asarray(self.direction, dtype=float)


def scenarios_from_config(doc: list) -> tuple:
    return tuple(Scenario(float(s["probability"]), tuple(float(v) for v in s["direction"]),
                          prior_from_config(s["prior"])) for s in doc)


def scenario_revenue(net: Network, scenario: Scenario):
    """Revenue as a function of the posterior mean intensity in one scenario."""
    if len(scenario.direction) != net.n_nodes:
        raise ConfigError(f"scenario direction needs {net.n_nodes} entries")
    cache = {}

    def revenue(theta: float) -> float:
        key = float(theta)
        if key not in cache:
            cache[key] = equilibrium_revenue(net, scenario.intercepts(net, key))
        return cache[key]

    return revenue


@dataclass(frozen=True)
class MultiScenarioResult:
    results: tuple
    values: tuple
    total: float


def dp_multi_scenario(net: Network, scenarios, eps: float) -> MultiScenarioResult:
    """Reveal the scenario, then design a partition of each scenario's intensity."""
    scenarios = tuple(scenarios)
    if not scenarios:
        raise ConfigError("need at least one scenario")
    total_prob = sum(s.probability for s in scenarios)
    if abs(total_prob - 1.0) > 1e-9:
        raise ConfigError(f"scenario probabilities sum to {total_prob}, not 1")
    results = tuple(dp_partitional(scenario_revenue(net, s), s.prior, eps) for s in scenarios)
    values = tuple(r.value for r in results)
    total = 0.0
    for s, v in zip(scenarios, values):
        total = total + s.probability * v
    return MultiScenarioResult(results, values, float(total))
