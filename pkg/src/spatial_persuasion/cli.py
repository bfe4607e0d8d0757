"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 solver or assumption failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .equilibrium import check_regularity, regimes_general, revenue_function
from .errors import ConfigError, DisconnectedGraph, NoPairs, NumericalFailure, PersuasionError
from .mechanism import (
    MonotonePartitional,
    algorithm1_thresholds,
    check_conditions,
    duality_certificate,
    expected_revenue,
)
from .model import (
    check_homogeneous_balance,
    check_initial_balance,
    check_no_depletion,
    classify_market_sizes,
    load_config,
    r_bar,
    shortest_distances,
)
from .optimizer import (
    best_monotone,
    dp_multi_scenario,
    dp_partitional,
    recover_structure,
    scenarios_from_config,
    solve_prop8,
)
from .pwl import concave_intervals

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
SANDWICH_TOL = 1e-7


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12g}"


def _clean(obj):
    """Round floats to 12 significant digits for stable JSON output."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if not math.isfinite(v) else float(f"{v:.12g}")
    return obj


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])


class Context:
    def __init__(self, args):
        self.args = args
        self.net, self.prior, self.doc = load_config(args.input)
        self.dist = shortest_distances(self.net)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self._table = None

    @property
    def table(self):
        if self._table is None:
            self._table = regimes_general(self.net, self.dist, self.prior)
        return self._table

    @property
    def R(self):
        return revenue_function(self.table)


def _curve_rows(R, nu, prior):
    pts = set(np.linspace(prior.lo, prior.hi, 101).tolist())
    pts.update(R.breakpoints.tolist())
    pts.update(nu.breakpoints.tolist())
    return [(z, R(z), nu(z)) for z in sorted(pts)]


def cmd_validate(ctx: Context) -> int:
    net, prior, dist = ctx.net, ctx.prior, ctx.dist
    a1 = check_homogeneous_balance(net, prior)
    a2 = check_no_depletion(net, prior, dist)
    a3 = check_initial_balance(net, prior)
    mark = lambda ok: "✓" if ok else "✗"
    a4_text = "n/a"
    a4_ok = None
    if a3.ok:
        try:
            a4_ok = check_regularity(ctx.table).ok
            a4_text = mark(a4_ok)
        except PersuasionError as exc:
            a4_text = f"n/a ({exc})"
    market = classify_market_sizes(net, dist, prior)
    print(f"A1 {mark(a1.ok)} A2 {mark(a2.ok)} A3 {mark(a3.ok)} A4 {a4_text} {market.pattern}")
    print("balance residuals: " + " ".join(fmt(v) for v in a1.residuals))
    print(f"no-depletion bounds: lower {fmt(a2.lower_bound)} upper {fmt(a2.upper_bound)} binding {a2.binding}")
    if not a3.ok:
        print(f"incentive to move: node {a3.violating_pair[1]} -> node {a3.violating_pair[0]}")
    for pair in market.pairs:
        print(f"groups {pair.near_group}-{pair.far_group} (d {fmt(pair.near_distance)} -> {fmt(pair.far_distance)}): "
              f"{pair.label}")
    if market.d_lo is not None:
        print(f"transition region: [{fmt(market.d_lo)}, {fmt(market.d_hi)}]")
    try:
        threshold = r_bar(net, dist, prior)
        print(f"r_bar {fmt(threshold)}")
        if net.commission > threshold:
            print("commission above r_bar: full revelation is optimal")
    except NoPairs:
        print("r_bar undefined (all nodes equidistant)")
    report = {"A1": a1.ok, "A2": a2.ok, "A3": a3.ok, "A4": a4_ok, "pattern": market.pattern,
              "labels": list(market.labels)}
    _write_json(ctx.out / "validate.json", report)
    return EXIT_OK


def cmd_regimes(ctx: Context) -> int:
    table, R = ctx.table, ctx.R
    (ctx.out / "regimes.csv").write_text(table.to_csv(R))
    (ctx.out / "regimes.json").write_text(table.to_json() + "\n")
    _write_csv(ctx.out / "revenue_curve.csv", ["s0", "R", "nu"], _curve_rows(R, R, ctx.prior))
    for row in table.to_rows(R):
        print(f"k={row['k']:>3} s0={fmt(row['s0_k'])} slope={fmt(row['slope_k'])} R={fmt(row['R_k'])} "
              f"{row['affected_set']}")
    return EXIT_OK


def _single_pool_applies(ctx: Context) -> bool:
    return len(concave_intervals(ctx.R)) <= 1


def _write_design(ctx: Context, mech: MonotonePartitional, slope, extra: dict) -> dict:
    R, prior = ctx.R, ctx.prior
    cert = duality_certificate(R, mech, prior, slope)
    _write_json(ctx.out / "mechanism.json", mech.to_dict())
    _write_csv(ctx.out / "revenue_curve.csv", ["s0", "R", "nu"], _curve_rows(R, cert.nu, prior))
    doc = {"certificate": cert.to_dict(), "revenue": expected_revenue(R, mech, prior),
           "no_information": R(prior.mean()), **extra}
    _write_json(ctx.out / "certificate.json", doc)
    return doc


def cmd_design(ctx: Context) -> int:
    method = ctx.args.method
    R, prior = ctx.R, ctx.prior
    if method == "auto":
        method = "alg1" if _single_pool_applies(ctx) else "prop8"
    conditions = check_conditions(ctx.table, R, prior)
    if method == "alg1":
        design = algorithm1_thresholds(ctx.table, R, prior)
        doc = _write_design(ctx, design.mechanism, design.slope,
                            {"method": "alg1", "pool": [design.pool_lo, design.pool_hi],
                             "pooled_mean": design.pooled_mean, "conditions": conditions.to_dict()})
        mech = design.mechanism
    elif method == "dp":
        dp = dp_partitional(R, prior, ctx.args.eps)
        mech = dp.mechanism
        doc = _write_design(ctx, mech, None, {"method": "dp", "eps": ctx.args.eps, "dp_value": dp.value,
                                              "conditions": conditions.to_dict()})
    else:
        p8 = solve_prop8(ctx.table, R, prior, grid_eps=ctx.args.eps)
        structure = recover_structure(p8.allocation, prior)
        mono = best_monotone(R, prior, ctx.args.eps, ctx.table)
        mech = mono.mechanism
        doubles = structure.double_intervals()
        doc = _write_design(ctx, mech, None, {
            "method": "prop8", "prop8_objective": p8.objective, "best_monotone": mono.value,
            "possible_double_interval": bool(doubles), "conditions": conditions.to_dict(),
            "structure": [asdict(iv) for iv in structure.intervals]})
        _write_csv(ctx.out / "compare.csv", ["mechanism", "revenue"],
                   [("prop8", p8.objective), ("best-monotone", mono.value)])
        if doubles:
            print("prop8 optimum uses a double-interval structure; mechanism.json holds the best monotone design")
    print(f"method {doc['method']}; cutoffs {' '.join(fmt(c) for c in mech.cutoffs)}; "
          f"modes {' '.join(mech.modes)}")
    print(f"revenue {fmt(doc['revenue'])}; certificate {'pass' if doc['certificate']['ok'] else 'fail'}")
    return EXIT_OK


def cmd_prop8(ctx: Context) -> int:
    p8 = solve_prop8(ctx.table, ctx.R, ctx.prior, grid_eps=ctx.args.eps)
    alloc = p8.allocation
    rows = [(k, alloc.edges[k], alloc.edges[k + 1], alloc.p[k], alloc.y[k]) for k in range(alloc.p.size)]
    _write_csv(ctx.out / "allocation.csv", ["piece", "lo", "hi", "p", "y"], rows)
    structure = recover_structure(alloc, ctx.prior)
    _write_json(ctx.out / "structure.json", {"objective": p8.objective, "rounds": p8.rounds,
                                             "intervals": [dict(kind=type(iv).__name__, **asdict(iv))
                                                           for iv in structure.intervals]})
    print(f"objective {fmt(p8.objective)} after {p8.rounds} rounds; {len(structure.intervals)} pooled intervals, "
          f"{len(structure.double_intervals())} double")
    return EXIT_OK


def cmd_dp(ctx: Context) -> int:
    dp = dp_partitional(ctx.R, ctx.prior, ctx.args.eps)
    _write_json(ctx.out / "mechanism.json", dp.mechanism.to_dict())
    _write_csv(ctx.out / "dp_values.csv", ["index", "cutoff", "value"],
               [(k, c, v) for k, (c, v) in enumerate(zip(dp.grid, dp.values))])
    print(f"dp value {fmt(dp.value)} on {dp.grid.size} cutoffs")
    return EXIT_OK


def cmd_compare(ctx: Context) -> int:
    R, prior = ctx.R, ctx.prior
    base = R(prior.mean())
    rows = []

    def timed(name, fn):
        t0 = time.perf_counter()
        value = fn()
        elapsed = time.perf_counter() - t0
        rows.append((name, value, value - base, elapsed if ctx.args.timings else None))
        return value

    timed("no-info", lambda: base)
    timed("full-info", lambda: expected_revenue(R, MonotonePartitional.full_revelation(prior), prior))
    if len(concave_intervals(R)) <= 1:
        timed("alg1", lambda: expected_revenue(R, algorithm1_thresholds(ctx.table, R, prior).mechanism, prior))
    dp = timed(f"dp({fmt(ctx.args.eps)})", lambda: dp_partitional(R, prior, ctx.args.eps).value)
    p8 = timed("prop8", lambda: solve_prop8(ctx.table, R, prior, grid_eps=ctx.args.eps).objective)
    _write_csv(ctx.out / "compare.csv", ["mechanism", "revenue", "V*", "runtime"], rows)
    for name, value, vstar, _ in rows:
        print(f"{name:<12} revenue {fmt(value):>16}  V* {fmt(vstar)}")
    scale = max(1.0, abs(p8))
    if not (base <= dp + SANDWICH_TOL * scale and dp <= p8 + SANDWICH_TOL * scale):
        raise NumericalFailure("no-info <= dp <= prop8 ordering violated")
    return EXIT_OK


def cmd_scenarios(ctx: Context) -> int:
    if "scenarios" not in ctx.doc:
        raise ConfigError("configuration has no 'scenarios' list")
    scenarios = scenarios_from_config(ctx.doc["scenarios"])
    result = dp_multi_scenario(ctx.net, scenarios, ctx.args.eps)
    rows = []
    for k, (s, res) in enumerate(zip(scenarios, result.results)):
        _write_json(ctx.out / f"scenario_{k}_mechanism.json", res.mechanism.to_dict())
        rows.append((k, s.probability, res.value))
    _write_csv(ctx.out / "scenarios.csv", ["scenario", "probability", "value"], rows)
    print(f"total value {fmt(result.total)} over {len(scenarios)} scenarios")
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "regimes": cmd_regimes, "design": cmd_design, "prop8": cmd_prop8,
            "dp": cmd_dp, "compare": cmd_compare, "scenarios": cmd_scenarios}


def _eps(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text}") from None
    if not 0.0 < value <= 0.5:
        raise argparse.ArgumentTypeError("eps must lie in (0, 0.5]")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatial-persuasion",
                                     description="Information design for a platform repositioning market.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--input", required=True, help="network and prior JSON configuration")
    parser.add_argument("--out", default=".", help="output directory (created if missing)")
    parser.add_argument("--eps", type=_eps, default=1.0 / 256, help="quantile grid step")
    parser.add_argument("--seed", type=int, default=0, help="seed recorded for reproducible runs")
    parser.add_argument("--method", choices=["auto", "alg1", "prop8", "dp"], default="auto")
    parser.add_argument("--timings", action="store_true", help="record wall-clock runtimes in compare.csv")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        ctx = Context(args)
        return COMMANDS[args.command](ctx)
    except (ConfigError, DisconnectedGraph, FileNotFoundError, IsADirectoryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PersuasionError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
