import json
from pathlib import Path

import numpy as np
import pytest

from spatial_persuasion.model import Network, load_config
from spatial_persuasion.priors import Uniform
from spatial_persuasion.pwl import PiecewiseLinear

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
ORACLE = json.loads((Path(__file__).parent / "data" / "oracle.json").read_text())

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def line_network(masses, sizes, costs, commission=0.5):
    n = len(masses)
    edges = tuple((k, k + 1, c) for k, c in zip(range(n - 1), costs))
    return Network(tuple(masses), (1.0,) * n, (0.0, *sizes), edges, commission)


def random_network(rng, max_nodes=8):
    """Random connected network whose prices respect the no-arbitrage bound at the mean.

    Prices are a minimum of two functions that are ``1/(1-r)``-Lipschitz in the
    path metric, so no price gap ever exceeds what moving costs can absorb.
    Returns the network and the prior mean that keeps node 0 at its own price.
    """
    n = int(rng.integers(2, max_nodes + 1))
    edges = [(i, int(rng.integers(0, i)), float(rng.uniform(0.1, 3))) for i in range(1, n)]
    for _ in range(int(rng.integers(0, n))):
        u, v = rng.choice(n, 2, replace=False)
        edges.append((int(u), int(v), float(rng.uniform(0.1, 3))))
    m = rng.uniform(0.2, 5, n)
    b = rng.uniform(0.3, 3, n)
    r = float(rng.uniform(0, 0.9))
    skeleton = Network(tuple(m), tuple(b), (0.0,) * n, tuple(edges), r)
    D = skeleton.costs
    lip = rng.uniform(-0.9, 0.9, 2) / (1 - r)
    a = rng.integers(0, n, 2)
    p = np.minimum(lip[0] * D[a[0]], lip[1] * D[a[1]] + rng.uniform(-1, 1))
    p = p - p[0]
    s = p + b * m
    s[0] = 0.0
    return Network(tuple(m), tuple(b), tuple(s), tuple(edges), r), float(b[0] * m[0])


@pytest.fixture(scope="session")
def oracle():
    return ORACLE


@pytest.fixture
def line3():
    return line_network((2, 2, 2), (2, 2), (1, 1)), Uniform(-2, 6)


@pytest.fixture
def line3_dec():
    return line_network((4, 8, 2), (8, 2), (1, 1)), Uniform(-2, 10)


@pytest.fixture
def line3_mirror():
    return line_network((4, 2, 8), (2, 8), (1, 1)), Uniform(-2, 10)


@pytest.fixture
def line4_dec():
    return load_config(CONFIGS / "line4_dec.json")[:2]


@pytest.fixture
def line4_inc():
    return load_config(CONFIGS / "line4_inc.json")[:2]


@pytest.fixture
def two_node():
    return Network((1, 1), (1, 1), (0, 1), ((0, 1, 1),), 0.5), Uniform(-5, 7)


@pytest.fixture
def two_bump():
    """Two concave bumps separated by a shallow dip; no single pool is optimal."""
    R = PiecewiseLinear([0, 1.9, 2, 2.1, 4], [0, 1, 0.9, 1, 0])
    return R, Uniform(0, 4)


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line; all lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion:>2}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
