"""Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below."""

import json
import time

import numpy as np
import pytest

from conftest import CONFIGS, line_network, random_network
from spatial_persuasion.equilibrium import (
    closed_form_distribution,
    equilibrium_revenue,
    regimes_general,
    regimes_simple,
    revenue_function,
    solve_potential,
)
from spatial_persuasion.mechanism import (
    POOL,
    DoubleInterval,
    MonotonePartitional,
    PosteriorDistribution,
    algorithm1_thresholds,
    check_conditions,
    duality_certificate,
    expected_revenue,
    mpc_check,
    value_of_information,
)
from spatial_persuasion.model import classify_market_sizes, load_config, r_bar, shortest_distances
from spatial_persuasion.optimizer import (
    Scenario,
    best_monotone,
    brute_force_partitional,
    dp_multi_scenario,
    dp_partitional,
    recover_structure,
    scenarios_from_config,
    solve_prop8,
)
from spatial_persuasion.priors import MixtureOfUniforms, PiecewiseLinearCDF, TruncatedGaussian, Uniform

WARDROP_LIMIT = 1e-8
CLOSED_FORM_LIMIT = 1e-6
RUNTIME_LIMIT = 60.0
FD_RTOL = 1e-5
CERT_TOL = 1e-7
ORDER_SLACK = 1e-8
SANDWICH_SLACK = 1e-7
MONOTONE_GAP_RTOL = 1e-6
DYADIC_SLACK = 1e-12
DOUBLE_RESIDUAL = 1e-8
DOUBLE_MARGIN = 1e-6
SCENARIO_TOL = 1e-9
EPS = 1.0 / 256


def _table(net, prior):
    table = regimes_general(net, shortest_distances(net), prior)
    return table, revenue_function(table)


# 1 -------------------------------------------------------------------------

def test_equilibrium_correctness(acceptance):
    rng = np.random.default_rng(20240611)
    worst_residual = worst_gap = 0.0
    start = time.perf_counter()
    for _ in range(200):
        net, mean = random_network(rng, max_nodes=8)
        for s0 in mean + rng.uniform(-15, 15, 20):
            profile = solve_potential(net, s0)
            worst_residual = max(worst_residual, profile.wardrop_residual)
            closed = closed_form_distribution(net, s0, mean)
            worst_gap = max(worst_gap, float(np.max(np.abs(closed - profile.distribution))))
    elapsed = time.perf_counter() - start
    ok = worst_residual <= WARDROP_LIMIT and worst_gap <= CLOSED_FORM_LIMIT and elapsed < RUNTIME_LIMIT
    acceptance(1, ok, f"max Wardrop residual {worst_residual:.2e} (<= {WARDROP_LIMIT:g}), max closed-form gap "
                      f"{worst_gap:.2e} (<= {CLOSED_FORM_LIMIT:g}), {elapsed:.1f}s (< {RUNTIME_LIMIT:g}s)")
    assert ok


# 2 -------------------------------------------------------------------------

def _fd_check(net, prior, rng, n_points=100, h=1e-3):
    table = regimes_simple(net, shortest_distances(net), prior)
    cuts = table.thresholds()
    worst = 0.0
    done = 0
    while done < n_points:
        s0 = rng.uniform(prior.lo + 2 * h, prior.hi - 2 * h)
        if cuts.size and np.min(np.abs(cuts - s0)) < 2 * h:
            continue
        fd = (equilibrium_revenue(net, s0 + h) - equilibrium_revenue(net, s0 - h)) / (2 * h)
        slope = table.regime_at(s0).slope
        worst = max(worst, abs(fd - slope) / max(abs(slope), 1e-12))
        done += 1
    exact_zero = table.regime(0).slope == net.commission * net.mass[0]
    return worst, exact_zero


def test_revenue_slopes(acceptance, line3, line3_dec):
    rng = np.random.default_rng(7)
    w3, z3 = _fd_check(*line3, rng)
    wd, zd = _fd_check(*line3_dec, rng)
    ok = max(w3, wd) <= FD_RTOL and z3 and zd
    acceptance(2, ok, f"finite-difference rel error LINE3 {w3:.1e}, LINE3-DEC {wd:.1e} (<= {FD_RTOL:g}); "
                      f"regime-0 slope equals r*m0 exactly: {z3 and zd}")
    assert ok


# 3 -------------------------------------------------------------------------

def test_single_pool_structure(acceptance, line3, line3_dec, line3_mirror):
    notes, ok = [], True

    net, prior = line3
    table, R = _table(net, prior)
    design = algorithm1_thresholds(table, R, prior)
    cert = duality_certificate(R, design.mechanism, prior, design.slope, tol=CERT_TOL)
    part = design.mechanism.is_full_revelation() and cert.ok
    notes.append(f"LINE3 full revelation+certificate {'ok' if part else 'NO'}")
    ok &= part

    net, prior = line3_dec
    table, R = _table(net, prior)
    design = algorithm1_thresholds(table, R, prior)
    cert = duality_certificate(R, design.mechanism, prior, design.slope, tol=CERT_TOL)
    E = prior.mean()
    part = (design.pooled_mean > E and abs(design.pool_hi - prior.hi) <= CERT_TOL and cert.ok)
    notes.append(f"LINE3-DEC pool [{design.pool_lo:.4g}, {design.pool_hi:.4g}] z*={design.pooled_mean:.4g} "
                 f"vs mean {E:g}, certificate {cert.ok} -> {'ok' if part else 'NO'}")
    ok &= part

    net, prior = line3_mirror
    table, R = _table(net, prior)
    design = algorithm1_thresholds(table, R, prior)
    pooled = not design.mechanism.is_full_revelation()
    part = pooled and design.pooled_mean < prior.mean()
    notes.append(f"mirrored variant {'pool z*=%.4g' % design.pooled_mean if pooled else 'full revelation'} "
                 f"-> {'ok' if part else 'NO'}")
    ok &= part

    acceptance(3, ok, "; ".join(notes) + f" (certificate tol {CERT_TOL:g})")
    assert ok


# 4 -------------------------------------------------------------------------

def test_commission_above_threshold(acceptance, line3, line3_dec, line3_mirror, line4_dec, line4_inc):
    checked, failures = 0, []
    for name, (net, prior) in {"LINE3": line3, "LINE3-DEC": line3_dec, "mirror": line3_mirror,
                               "LINE4-DEC": line4_dec, "LINE4-INC": line4_inc}.items():
        dist = shortest_distances(net)
        threshold = r_bar(net, dist, prior)
        if not np.isfinite(threshold):
            continue
        raised = net.with_commission(threshold + 0.01)
        market = classify_market_sizes(raised, dist, prior)
        table, R = _table(raised, prior)
        mech = algorithm1_thresholds(table, R, prior).mechanism
        checked += 1
        if market.pattern != "similar" or not mech.is_full_revelation():
            failures.append(name)
    ok = checked > 0 and not failures
    acceptance(4, ok, f"{checked} networks with finite threshold, r = threshold + 0.01: "
                      f"{'all similar and full revelation' if not failures else 'failed ' + ', '.join(failures)}")
    assert ok


# 5 -------------------------------------------------------------------------

def test_value_ordering_under_spread(acceptance, line3):
    net, _ = line3
    narrow, wide = Uniform(0, 4), Uniform(-2, 6)
    values = {}
    for label, prior in (("narrow", narrow), ("wide", wide)):
        table, R = _table(net, prior)
        values[label] = value_of_information(R, prior, solver="prop8", table=table)
    slack = values["wide"] - values["narrow"]
    ok = slack >= -ORDER_SLACK
    acceptance(5, ok, f"V*(U[0,4]) = {values['narrow']:.6g} <= V*(U[-2,6]) = {values['wide']:.6g} "
                      f"(slack {slack:.2e} >= {-ORDER_SLACK:g})")
    assert ok


# 6 -------------------------------------------------------------------------

def _sandwich_suite():
    rng = np.random.default_rng(6)
    suite = []
    for _ in range(15):
        net, mean = random_network(rng)
        half = rng.uniform(0.5, 6)
        suite.append((net, Uniform(mean - half, mean + half)))
    suite.append((line_network((2, 2, 2), (2, 2), (1, 1)), Uniform(-2, 6)))
    suite.append((line_network((4, 8, 2), (8, 2), (1, 1)), Uniform(-2, 10)))
    suite.append((line_network((4, 2, 8), (2, 8), (1, 1)), Uniform(-2, 10)))
    suite.append(load_config(CONFIGS / "line4_dec.json")[:2])
    suite.append(load_config(CONFIGS / "line4_inc.json")[:2])
    return suite


def test_optimizer_sandwich(acceptance):
    violations, gaps, with_condition = [], [], 0
    for k, (net, prior) in enumerate(_sandwich_suite()):
        table, R = _table(net, prior)
        base = R(prior.mean())
        dp = dp_partitional(R, prior, EPS).value
        p8 = solve_prop8(table, R, prior, grid_eps=EPS).objective
        scale = max(1.0, abs(p8))
        if base > dp + SANDWICH_SLACK * scale or dp > p8 + SANDWICH_SLACK * scale:
            violations.append(f"#{k} order")
        if check_conditions(table, R, prior).any:
            with_condition += 1
            gap = p8 - best_monotone(R, prior, EPS, table).value
            gaps.append(gap)
            if gap > MONOTONE_GAP_RTOL * abs(p8):
                violations.append(f"#{k} monotone gap {gap:.2e}")
    ok = not violations
    acceptance(6, ok, f"20 instances no-info <= DP <= LP (slack {SANDWICH_SLACK:g}); {with_condition} satisfy a "
                      f"sufficient condition, max LP - best monotone {max(gaps, default=0.0):.2e} "
                      f"(<= {MONOTONE_GAP_RTOL:g}*|LP|)" + (f"; violations {violations}" if violations else ""))
    assert ok


# 7 -------------------------------------------------------------------------

def test_fptas_behaviour(acceptance, line3, line3_dec):
    net, prior = line3_dec
    table, R = _table(net, prior)
    values = [dp_partitional(R, prior, 2.0 ** -k).value for k in (5, 6, 7, 8)]
    monotone = all(b >= a - DYADIC_SLACK * max(1.0, abs(a)) for a, b in zip(values, values[1:]))
    p8 = solve_prop8(table, R, prior, grid_eps=EPS).objective
    lip = float(np.max(np.abs(R.slopes)))
    bound = p8 - 2 * lip * EPS * prior.width
    within = values[-1] >= bound

    net3, prior3 = line3
    _, R3 = _table(net3, prior3)
    dp12 = dp_partitional(R3, prior3, 1.0 / 11)
    brute = brute_force_partitional(R3, prior3, dp12.grid)
    identical = dp12.grid.size == 12 and dp12.value == brute.value

    ok = monotone and within and identical
    acceptance(7, ok, f"dyadic DP values {', '.join(f'{v:.8g}' for v in values)} nondecreasing: {monotone}; "
                      f"DP(1/256) {values[-1]:.6g} >= LP - 2 Lip eps width = {bound:.6g}: {within}; "
                      f"12-point DP == brute force exactly: {identical}")
    assert ok


# 8 -------------------------------------------------------------------------

def _random_prior(rng):
    lo = rng.uniform(-10, 5)
    hi = lo + rng.uniform(0.5, 12)
    kind = rng.integers(0, 4)
    if kind == 0:
        return Uniform(lo, hi)
    if kind == 1:
        k = int(rng.integers(2, 4))
        cuts = np.sort(rng.uniform(lo, hi, 2 * k - 2))
        edges = np.concatenate([[lo], cuts, [hi]])
        intervals = [(edges[2 * i], edges[2 * i + 1] + 1e-3) for i in range(k)]
        intervals[-1] = (intervals[-1][0], hi)
        weights = rng.uniform(0.2, 1, k)
        return MixtureOfUniforms(tuple(weights / weights.sum()), tuple(intervals))
    if kind == 2:
        knots = np.concatenate([[lo], np.sort(rng.uniform(lo, hi, 3)), [hi]])
        levels = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, 3)), [1.0]])
        return PiecewiseLinearCDF(tuple(knots), tuple(levels))
    return TruncatedGaussian(float(rng.uniform(lo, hi)), float(rng.uniform(0.3, 5)), lo, hi)


def _random_mechanism(rng, prior, force_pool=False):
    n_cuts = int(rng.integers(0, 6))
    inner = np.sort(prior.ppf(rng.uniform(0.02, 0.98, n_cuts))) if n_cuts else np.array([])
    cuts = np.unique(np.concatenate([[prior.lo], inner, [prior.hi]]))
    modes = [POOL if rng.random() < 0.5 else "reveal" for _ in range(cuts.size - 1)]
    if force_pool:
        widest = int(np.argmax([prior.mass(a, b) for a, b in zip(cuts, cuts[1:])]))
        modes[widest] = POOL
    return MonotonePartitional.build(cuts, modes, prior)


def test_mpc_feasibility(acceptance):
    rng = np.random.default_rng(8)
    feasible = 0
    for _ in range(500):
        prior = _random_prior(rng)
        feasible += mpc_check(_random_mechanism(rng, prior).posterior(prior)).ok
    rejected = 0
    for _ in range(500):
        prior = _random_prior(rng)
        G = _random_mechanism(rng, prior, force_pool=True).posterior(prior)
        shift = rng.choice([-1, 1]) * rng.uniform(0.01, 0.2) * prior.width
        shifted = PosteriorDistribution(G.reveal, tuple((mu + shift, w) for mu, w in G.atoms), prior)
        rejected += not mpc_check(shifted).ok
    ok = feasible == 500 and rejected == 500
    acceptance(8, ok, f"{feasible}/500 monotone partitional posteriors feasible, "
                      f"{rejected}/500 mean-shifted posteriors rejected")
    assert ok


# 9 -------------------------------------------------------------------------

def test_double_interval_recovery(acceptance, two_bump):
    R, prior = two_bump
    p8 = solve_prop8(None, R, prior, grid_eps=EPS)
    structure = recover_structure(p8.allocation, prior)
    doubles = [iv for iv in structure.intervals if isinstance(iv, DoubleInterval)]
    conditions = check_conditions(None, R, prior)
    dp_value = dp_partitional(R, prior, EPS).value
    revenue = expected_revenue(R, structure.posterior(prior), prior)
    residual = max((iv.system_residual(prior) for iv in doubles), default=np.inf)
    margin = revenue - dp_value
    ok = bool(doubles) and not conditions.any and residual <= DOUBLE_RESIDUAL and margin > DOUBLE_MARGIN
    acceptance(9, ok, f"{len(doubles)} double interval(s), conditions all false: {not conditions.any}, "
                      f"system residual {residual:.1e} (<= {DOUBLE_RESIDUAL:g}), revenue {revenue:.6g} exceeds "
                      f"monotone DP {dp_value:.6g} by {margin:.3g} (> {DOUBLE_MARGIN:g})")
    assert ok


# 10 ------------------------------------------------------------------------

def test_multi_scenario(acceptance):
    net, _, doc = load_config(CONFIGS / "star3_scenarios.json")
    scenarios = scenarios_from_config(doc["scenarios"])
    result = dp_multi_scenario(net, scenarios, EPS)
    first, second = (r.mechanism.to_dict() for r in result.results)
    same_mech = first == second and abs(result.values[0] - result.values[1]) <= SCENARIO_TOL
    weighted = sum(s.probability * v for s, v in zip(scenarios, result.values))
    total_ok = abs(result.total - weighted) <= SCENARIO_TOL

    prior = scenarios[0].prior
    single = Scenario(1.0, (1.0,) + (0.0,) * (net.n_nodes - 1), prior)
    via_scenario = dp_multi_scenario(net, (single,), EPS).results[0]
    direct = dp_partitional(lambda s0: equilibrium_revenue(net, s0), prior, EPS)
    bit_identical = (via_scenario.value == direct.value and via_scenario.mechanism == direct.mechanism
                     and np.array_equal(via_scenario.values, direct.values))
    ok = same_mech and total_ok and bit_identical
    acceptance(10, ok, f"symmetric scenarios equal: {same_mech}; total {result.total:.10g} = weighted sum "
                       f"(tol {SCENARIO_TOL:g}): {total_ok}; single scenario bit-identical: {bit_identical}")
    assert ok
