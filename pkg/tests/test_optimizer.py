import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_network
from spatial_persuasion.equilibrium import regimes_general, revenue_function
from spatial_persuasion.errors import ConfigError, DomainError, GridTooLarge
from spatial_persuasion.mechanism import (
    POOL,
    REVEAL,
    MonotonePartitional,
    algorithm1_thresholds,
    expected_revenue,
    mpc_check,
)
from spatial_persuasion.model import shortest_distances
from spatial_persuasion.optimizer import (
    QuantileGrid,
    Scenario,
    best_monotone,
    brute_force_partitional,
    dp_multi_scenario,
    dp_partitional,
    full_revelation_allocation,
    recover_structure,
    solve_prop8,
)
from spatial_persuasion.priors import TruncatedGaussian, Uniform

seeds = st.integers(0, 2**32 - 1)


def _setup(fixture):
    net, prior = fixture
    table = regimes_general(net, shortest_distances(net), prior)
    return prior, table, revenue_function(table)


def _uniform_lower_mass(prior, u):
    return prior.lo * u + prior.width * u * u / 2


def _assert_feasible(alloc, prior, tol=1e-8):
    x, p, y = alloc.edges, alloc.p, alloc.y
    assert p.sum() == pytest.approx(1.0, abs=tol)
    assert y.sum() == pytest.approx(prior.mean(), abs=tol * max(1.0, abs(prior.mean())))
    assert np.all(p >= -tol)
    assert np.all(x[:-1] * p <= y + tol) and np.all(y <= x[1:] * p + tol)
    for k in range(1, p.size):
        assert y[:k].sum() >= _uniform_lower_mass(prior, min(p[:k].sum(), 1.0)) - 1e-7


def test_convex_curve_lp_equals_full_revelation(line3, oracle):
    prior, table, R = _setup(line3)
    result = solve_prop8(table, R, prior)
    assert result.objective == pytest.approx(oracle["line3_full_info"], abs=1e-9)
    _assert_feasible(result.allocation, prior)
    full = full_revelation_allocation(R, prior)
    _assert_feasible(full, prior)


@pytest.mark.parametrize("name,key", [("line3_dec", "dec_best_pool"), ("line4_dec", None), ("line4_inc", None)])
def test_lp_agrees_with_single_pool_design(request, oracle, name, key):
    prior, table, R = _setup(request.getfixturevalue(name))
    result = solve_prop8(table, R, prior)
    design = algorithm1_thresholds(table, R, prior)
    alg1 = expected_revenue(R, design.mechanism, prior)
    ref = oracle[key]["value"] if key else oracle[name]["best_pool"]["value"]
    assert alg1 == pytest.approx(ref, abs=1e-9)
    assert result.objective == pytest.approx(alg1, abs=1e-6)
    _assert_feasible(result.allocation, prior)


def test_recovered_double_interval(two_bump, oracle):
    R, prior = two_bump
    structure = recover_structure(solve_prop8(None, R, prior).allocation, prior)
    (iv,) = structure.double_intervals()
    ref = oracle["two_bump"]
    assert (iv.x, iv.y) == pytest.approx(tuple(ref["atoms"]), abs=1e-9)
    assert (iv.inner_lo, iv.inner_hi) == pytest.approx(tuple(ref["inner"]), abs=1e-7)
    assert expected_revenue(R, structure.posterior(prior), prior) == pytest.approx(ref["double_interval_value"],
                                                                                abs=1e-9)
    mono = best_monotone(R, prior)
    assert mono.value == pytest.approx(ref["single_pool_value"], abs=1e-6)


def test_dp_near_optimum_on_convex_curve(line3, oracle):
    prior, _, R = _setup(line3)
    full = oracle["line3_full_info"]
    assert dp_partitional(R, prior, 1 / 64).value == pytest.approx(full, abs=1e-3 * abs(full))


def test_quantile_grid_caps_at_support_end():
    prior = TruncatedGaussian(0.0, 1.0, -1.0, 2.0)
    grid = QuantileGrid.build(prior, 0.3)
    assert grid.cutoffs[0] == -1.0 and grid.cutoffs[-1] == 2.0
    assert np.all(np.diff(grid.cutoffs) > 0)
    with pytest.raises(DomainError):
        QuantileGrid.build(prior, 0.75)


def test_brute_force_limit(line3):
    prior, _, R = _setup(line3)
    with pytest.raises(GridTooLarge):
        brute_force_partitional(R, prior, np.linspace(prior.lo, prior.hi, 30))


def test_mechanisms_with_equal_piece_allocations_earn_the_same(line3):
    # pooling inside a single linear piece leaves every (p_k, y_k) unchanged
    prior, _, R = _setup(line3)
    pooled = MonotonePartitional.build([-2, 0.5, 3, 6], [REVEAL, POOL, REVEAL], prior)
    assert expected_revenue(R, pooled, prior) == pytest.approx(
        expected_revenue(R, MonotonePartitional.full_revelation(prior), prior), abs=1e-9)


def test_scenario_probabilities_must_sum_to_one(line3):
    net, prior = line3
    half = Scenario(0.5, (1.0, 0.0, 0.0), prior)
    with pytest.raises(ConfigError):
        dp_multi_scenario(net, (half,), 1 / 16)
    with pytest.raises(ConfigError):
        dp_multi_scenario(net, (Scenario(1.0, (1.0, 0.0), prior),), 1 / 16)


# properties ----------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(seeds)
def test_recovered_structure_is_feasible(seed):
    rng = np.random.default_rng(seed)
    net, mean = random_network(rng)
    half = rng.uniform(0.5, 6)
    prior = Uniform(mean - half, mean + half)
    table = regimes_general(net, shortest_distances(net), prior)
    R = revenue_function(table)
    result = solve_prop8(table, R, prior)
    _assert_feasible(result.allocation, prior)
    G = recover_structure(result.allocation, prior).posterior(prior)
    assert G.mean() == pytest.approx(prior.mean(), abs=1e-9)
    assert mpc_check(G).ok


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(3, 10))
def test_dp_matches_exhaustive_search(seed, n_cells):
    rng = np.random.default_rng(seed)
    net, mean = random_network(rng)
    half = rng.uniform(0.5, 6)
    prior = Uniform(mean - half, mean + half)
    R = revenue_function(regimes_general(net, shortest_distances(net), prior))
    dp = dp_partitional(R, prior, 1.0 / n_cells)
    brute = brute_force_partitional(R, prior, dp.grid)
    assert dp.value >= brute.value - 1e-12 * max(1.0, abs(brute.value))
    assert dp.value <= brute.value + 1e-9
    assert expected_revenue(R, dp.mechanism, prior) == pytest.approx(dp.value, abs=1e-9)
