"""Network data model, configuration loading and market diagnostics.

Nodes are labelled ``0..n`` and node 0 carries the stochastic demand.  Prices
are linear, ``p_i = s_i - beta_i q_i``, an agent keeps a share ``1 - r`` of the
price at its destination and pays the shortest-path cost to get there.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np
from scipy.sparse import csgraph

from .errors import ConfigError, DisconnectedGraph, NoPairs
from .priors import Prior, prior_from_config

DISTANCE_RTOL = 1e-9
BALANCE_TOL = 1e-7
RATIO_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Network:
    """Undirected repositioning network with linear prices.

    ``market_size[0]`` is the baseline intercept of the shock node; it is added to
    the shock and is 0 in the single-shock model.
    """

    mass: tuple
    beta: tuple
    market_size: tuple
    edges: tuple
    commission: float
    costs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        s = np.array([0.0 if v is None else v for v in self.market_size], dtype=float)
        if s.size and not np.isfinite(s[0]):
            s[0] = 0.0
        n = m.size
        if n < 1 or b.shape != (n,) or s.shape != (n,):
            raise ConfigError("mass, beta and market_size must have one entry per node")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(b)) and np.all(np.isfinite(s))):
            raise ConfigError("node attributes must be finite")
        if np.any(m < 0.0):
            raise ConfigError("masses must be nonnegative")
        if np.any(b < 0.0):
            raise ConfigError("elasticities must be nonnegative")
        if not b[0] > 0.0:
            raise ConfigError("the shock node needs a strictly positive elasticity")
        r = float(self.commission)
        if not (0.0 <= r < 1.0):
            raise ConfigError("commission must lie in [0, 1)")
        weights = np.full((n, n), np.inf)
        np.fill_diagonal(weights, 0.0)
        clean = []
        for edge in self.edges:
            u, v, c = int(edge[0]), int(edge[1]), float(edge[2])
            if not (0 <= u < n and 0 <= v < n):
                raise ConfigError(f"edge ({u}, {v}) references an unknown node")
            if not (np.isfinite(c) and c >= 0.0):
                raise ConfigError(f"edge ({u}, {v}) needs a finite nonnegative cost")
            if u == v:
                if c != 0.0:
                    raise ConfigError("self loops must have zero cost")
                continue
            weights[u, v] = weights[v, u] = min(weights[u, v], c)
            clean.append((u, v, c))
        graph = csgraph.csgraph_from_dense(weights, null_value=np.inf)
        costs = csgraph.shortest_path(graph, method="D", directed=False)
        unreachable = np.flatnonzero(~np.isfinite(costs[0]))
        if unreachable.size:
            raise DisconnectedGraph(unreachable)
        object.__setattr__(self, "mass", tuple(float(v) for v in m))
        object.__setattr__(self, "beta", tuple(float(v) for v in b))
        object.__setattr__(self, "market_size", tuple(float(v) for v in s))
        object.__setattr__(self, "edges", tuple(clean))
        object.__setattr__(self, "commission", r)
        object.__setattr__(self, "costs", costs)

    @property
    def n_nodes(self) -> int:
        return len(self.mass)

    @property
    def m(self) -> np.ndarray:
        return np.asarray(self.mass)

    @property
    def b(self) -> np.ndarray:
        return np.asarray(self.beta)

    @property
    def s(self) -> np.ndarray:
        return np.asarray(self.market_size)

    def intercepts(self, shock) -> np.ndarray:
        """Price intercepts when the posterior mean at node 0 equals ``shock``."""
        out = np.array(self.market_size, dtype=float)
        out[0] = out[0] + float(shock)
        return out

    def with_commission(self, commission: float) -> "Network":
        return replace(self, commission=commission)

    def with_masses(self, mass) -> "Network":
        return replace(self, mass=tuple(mass))


@dataclass(frozen=True)
class DistanceTable:
    """Shortest-path distances from node 0 and the induced distance groups."""

    distances: np.ndarray
    groups: tuple
    group_distances: tuple

    def order(self) -> list:
        """Non-shock nodes sorted by ``(distance, id)``."""
        d = self.distances
        return sorted(range(1, d.size), key=lambda i: (d[i], i))


def shortest_distances(net: Network, rtol: float = DISTANCE_RTOL) -> DistanceTable:
    d = np.asarray(net.costs[0], dtype=float).copy()
    if np.any(~np.isfinite(d)):
        raise DisconnectedGraph(np.flatnonzero(~np.isfinite(d)))
    order = sorted(range(1, d.size), key=lambda i: (d[i], i))
    groups, dists = [], []
    for i in order:
        if groups and abs(d[i] - dists[-1]) <= rtol * max(1.0, abs(dists[-1])):
            groups[-1].append(i)
        else:
            groups.append([i])
            dists.append(float(d[i]))
    return DistanceTable(d, tuple(tuple(g) for g in groups), tuple(dists))


def node_prices(net: Network, prior: Prior) -> np.ndarray:
    """Baseline prices ``s_i - beta_i m_i`` with the prior mean at node 0."""
    return net.intercepts(prior.mean()) - net.b * net.m


# ---------------------------------------------------------------------------
# assumption checks


@dataclass(frozen=True)
class BalanceReport:
    ok: bool
    residuals: np.ndarray


def check_homogeneous_balance(net: Network, prior: Prior, tol: float = BALANCE_TOL) -> BalanceReport:
    """Every baseline price equals the common normalised level 0."""
    res = node_prices(net, prior)
    return BalanceReport(bool(np.all(np.abs(res) <= tol)), res)


@dataclass(frozen=True)
class DepletionReport:
    ok: bool
    upper_bound: float
    lower_bound: float
    upper_slack: float
    lower_slack: float
    binding: str
    k_hat: int


def check_no_depletion(net: Network, prior: Prior, dist: DistanceTable | None = None,
                       tol: float = BALANCE_TOL) -> DepletionReport:
    """Bounds on the state support that keep every node populated.

    The lower bound walks non-shock nodes in ``(distance, id)`` order and stops at
    the first prefix whose bound falls between the entry thresholds of the last
    included and the next node.
    """
    dist = dist or shortest_distances(net)
    r = net.commission
    d = dist.distances
    s, b = net.s, net.b
    others = dist.order()
    if not others:
        inf = math.inf
        return DepletionReport(True, inf, -inf, inf, inf, "none", 0)
    upper = max(s[i] + d[i] / (1.0 - r) for i in others)
    if any(b[i] <= 0.0 for i in others):
        lower, k_hat = -math.inf, len(others)
    else:
        lower, k_hat = None, len(others)
        for k in range(1, len(others) + 1):
            head = others[:k]
            bound = -(net.m[0] + sum(d[i] / ((1.0 - r) * b[i]) for i in head)) / sum(1.0 / b[i] for i in head)
            entry_last = -d[head[-1]] / (1.0 - r)
            entry_next = -d[others[k]] / (1.0 - r) if k < len(others) else -math.inf
            if entry_last + tol >= bound >= entry_next - tol:
                lower, k_hat = bound, k
                break
        if lower is None:
            head = others
            lower = -(net.m[0] + sum(d[i] / ((1.0 - r) * b[i]) for i in head)) / sum(1.0 / b[i] for i in head)
    up_slack = upper - prior.hi
    lo_slack = prior.lo - lower
    ok = up_slack >= -tol and lo_slack >= -tol
    if min(up_slack, lo_slack) > tol:
        binding = "none"
    elif up_slack <= lo_slack:
        binding = "upper"
    else:
        binding = "lower"
    return DepletionReport(bool(ok), float(upper), float(lower), float(up_slack), float(lo_slack), binding, k_hat)


@dataclass(frozen=True)
class InitialBalanceReport:
    ok: bool
    violating_pair: tuple | None
    worst_excess: float


def check_initial_balance(net: Network, prior: Prior, tol: float = BALANCE_TOL) -> InitialBalanceReport:
    """No agent gains by moving at the baseline distribution.

    The reported pair is ``(richer node, poorer node)``: agents at the poorer node
    would pay the trip to the richer one.
    """
    payoff = (1.0 - net.commission) * node_prices(net, prior)
    gain = payoff[None, :] - payoff[:, None] - net.costs  # gain[i, j]: move i -> j
    np.fill_diagonal(gain, -np.inf)
    worst = float(np.max(gain)) if gain.size > 1 else -math.inf
    if worst <= tol:
        return InitialBalanceReport(True, None, worst)
    i, j = np.unravel_index(int(np.argmax(gain)), gain.shape)
    return InitialBalanceReport(False, (int(j), int(i)), worst)


# ---------------------------------------------------------------------------
# market-size classification


@dataclass(frozen=True)
class GroupPairClass:
    near_group: int
    far_group: int
    near_distance: float
    far_distance: float
    label: str
    min_ratio: float
    max_ratio: float


@dataclass(frozen=True)
class MarketClass:
    """Per adjacent distance-group labels and the detected overall layout.

    Group 0 is the shock node itself, at distance 0 with market size equal to the
    prior mean.  ``pattern`` is ``similar``, ``increasing``, ``decreasing`` or
    ``mixed``; ``d_lo``/``d_hi`` bound the monotone transition region.
    """

    pairs: tuple
    pattern: str
    d_lo: float | None
    d_hi: float | None

    @property
    def labels(self) -> tuple:
        return tuple(p.label for p in self.pairs)


def _label(ratio: float, threshold: float) -> str:
    slack = RATIO_TIE_RTOL * max(1.0, threshold)
    if abs(ratio) <= threshold + slack:
        return "similar"
    return "increasing" if ratio > 0 else "decreasing"


def classify_market_sizes(net: Network, dist: DistanceTable, prior: Prior,
                          max_distance: float | None = None) -> MarketClass:
    threshold = 1.0 / (1.0 - net.commission)
    sizes = net.intercepts(prior.mean())
    groups = [((0,), 0.0)] + list(zip(dist.groups, dist.group_distances))
    if max_distance is not None:
        groups = [g for g in groups if g[1] <= max_distance * (1.0 + DISTANCE_RTOL) + DISTANCE_RTOL]
    pairs = []
    for n in range(len(groups) - 1):
        (near, dn), (far, df) = groups[n], groups[n + 1]
        if df - dn <= DISTANCE_RTOL * max(1.0, df):
            continue
        ratios = [(sizes[j] - sizes[i]) / (df - dn) for i in near for j in far]
        labels = {_label(q, threshold) for q in ratios}
        label = labels.pop() if len(labels) == 1 else "mixed"
        pairs.append(GroupPairClass(n, n + 1, dn, df, label, min(ratios), max(ratios)))
    labels = [p.label for p in pairs]
    idx = [k for k, lab in enumerate(labels) if lab != "similar"]
    if not idx:
        return MarketClass(tuple(pairs), "similar", None, None)
    first, last = idx[0], idx[-1]
    core = set(labels[first:last + 1])
    if len(core) == 1 and core <= {"increasing", "decreasing"}:
        return MarketClass(tuple(pairs), core.pop(), pairs[first].near_distance, pairs[last].far_distance)
    return MarketClass(tuple(pairs), "mixed", None, None)


def r_bar(net: Network, dist: DistanceTable, prior: Prior) -> float:
    """Commission level above which every market-size pair is similar."""
    sizes = net.intercepts(prior.mean())
    d = dist.distances
    best = math.inf
    found_pair = False
    for i in range(d.size):
        for j in range(i + 1, d.size):
            if abs(d[i] - d[j]) <= DISTANCE_RTOL * max(1.0, abs(d[i]), abs(d[j])):
                continue
            found_pair = True
            ds = sizes[i] - sizes[j]
            if ds == 0.0:
                continue
            best = min(best, abs((d[i] - d[j]) / ds))
    if not found_pair:
        raise NoPairs("all nodes share one distance to node 0")
    return -math.inf if best == math.inf else 1.0 - best


# ---------------------------------------------------------------------------
# configuration documents

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["nodes", "edges", "commission", "prior"],
    "properties": {
        "nodes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "mass", "beta"],
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "mass": {"type": "number", "minimum": 0},
                    "beta": {"type": "number", "minimum": 0},
                    "market_size": {"type": "number"},
                },
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["u", "v", "cost"],
                "properties": {
                    "u": {"type": "integer", "minimum": 0},
                    "v": {"type": "integer", "minimum": 0},
                    "cost": {"type": "number", "minimum": 0},
                },
            },
        },
        "shock_node": {"type": "integer", "const": 0},
        "commission": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "prior": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "support"],
            "properties": {
                "kind": {"enum": ["uniform", "truncated-gaussian", "finite-mixture-of-uniforms",
                                  "piecewise-linear-CDF"]},
                "params": {"type": "object"},
                "support": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            },
        },
        "scenarios": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["probability", "direction", "prior"],
                "properties": {
                    "probability": {"type": "number", "minimum": 0},
                    "direction": {"type": "array", "items": {"type": "number"}},
                    "prior": {"$ref": "#/properties/prior"},
                },
            },
        },
    },
}


def _locate(error: jsonschema.ValidationError) -> str:
    path = "/".join(str(p) for p in error.absolute_path)
    return f"at '{path or '<root>'}': {error.message}"


def network_from_config(doc: dict) -> tuple[Network, Prior]:
    """Validate a configuration document and build the network and prior."""
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"schema violation {_locate(exc)}") from None
    nodes = sorted(doc["nodes"], key=lambda nd: nd["id"])
    ids = [nd["id"] for nd in nodes]
    if ids != list(range(len(nodes))):
        raise ConfigError("node ids must be exactly 0..n")
    if "market_size" in nodes[0]:
        raise ConfigError("node 0 market_size must be omitted; its demand comes from the prior")
    missing = [nd["id"] for nd in nodes[1:] if "market_size" not in nd]
    if missing:
        raise ConfigError(f"market_size missing for nodes {missing}")
    net = Network(
        mass=tuple(nd["mass"] for nd in nodes),
        beta=tuple(nd["beta"] for nd in nodes),
        market_size=(0.0,) + tuple(nd["market_size"] for nd in nodes[1:]),
        edges=tuple((e["u"], e["v"], e["cost"]) for e in doc["edges"]),
        commission=doc["commission"],
    )
    prior = prior_from_config(doc["prior"])
    return net, prior


def load_config(path) -> tuple[Network, Prior, dict]:
    """Read a JSON configuration file; returns the network, prior and raw document."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    net, prior = network_from_config(doc)
    return net, prior, doc


def config_from_network(net: Network, prior: Prior) -> dict:
    nodes = [{"id": 0, "mass": net.mass[0], "beta": net.beta[0]}]
    nodes += [{"id": i, "mass": net.mass[i], "beta": net.beta[i], "market_size": net.market_size[i]}
              for i in range(1, net.n_nodes)]
    edges = [{"u": u, "v": v, "cost": c} for u, v, c in net.edges]
    return {"nodes": nodes, "edges": edges, "shock_node": 0, "commission": net.commission,
            "prior": prior.to_config()}
