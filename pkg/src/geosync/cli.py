"""geosync command-line interface.

Every output file embeds a run manifest (command, resolved options, seed,
input digests, version). Rerunning with the same manifest reproduces the
output byte for byte. Outputs are written to a temporary file and renamed,
so a failed run never leaves a partial file behind.

Exit codes: 0 ok, 1 usage, 2 invalid input, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from geosync import __version__
from geosync.coords import CoordConfig, converge, relative_errors
from geosync.metrics import Cdf, comm_heatmap, compare, heatmap_csv, makespans, summarize
from geosync.planner import PlannerConfig, auto_plan, k_star, make_plan, solve, GroupPlan
from geosync.routing import build_route_plan
from geosync.simulator import Failure, InvariantViolation, SimConfig, run_simulation
from geosync.topology import LatencyTrace, dump_trace, gen_trace, load_matrix, load_trace, tiv_scan
from geosync.workload import WorkloadConfig, WorkloadGenerator
from geosync.sync_filter import dump_updates

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- manifest and file plumbing -----------------------------------------------


def _digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest(command: str, config: dict, seed: int | None, inputs: dict[str, str]) -> dict:
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {role: _digest(path) for role, path in sorted(inputs.items()) if path},
        "version": __version__,
    }


def _atomic_write(path: str, text: str) -> None:
    target = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(out: str | None, text: str) -> None:
    if out:
        _atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _matrix_format(path: str) -> str:
    return "json" if path.endswith(".json") else "csv"


def _read_matrix(path: str, rtt: bool):
    with open(path, encoding="utf-8") as fh:
        return load_matrix(fh, _matrix_format(path), rtt=rtt)


def _read_trace(path: str, rtt: bool = False) -> LatencyTrace:
    with open(path, encoding="utf-8") as fh:
        return load_trace(fh, rtt=rtt)


# -- subcommands --------------------------------------------------------------


def cmd_tracegen(args) -> int:
    base = _read_matrix(args.base, args.rtt)
    config = {"jitter": args.jitter, "knots": args.knots, "duration_ms": args.duration,
              "step_ms": args.step, "rtt": args.rtt}
    trace = gen_trace(base, args.knots, args.jitter, args.duration, args.step, args.seed)
    man = manifest("tracegen", config, args.seed, {"base": args.base})
    _emit(args.out, dump_trace(trace, {"manifest": man}))
    return EXIT_OK


def cmd_tiv(args) -> int:
    m = _read_matrix(args.matrix, args.rtt)
    report = tiv_scan(m)
    lines = [f"violation_fraction {report.violation_fraction:.6f} ({len(report.violations)} of {m.n * (m.n - 1)} pairs)"]
    for v in report.violations:
        lines.append(f"{v.src} -> {v.dst} via {v.relay}: relayed {v.relayed_ms:g} < direct {v.direct_ms:g}")
    print("\n".join(lines))
    if args.out:
        man = manifest("tiv", {"rtt": args.rtt}, None, {"matrix": args.matrix})
        _atomic_write(args.out, _dumps({"manifest": man, **report.to_json()}))
    return EXIT_OK


def _parse_k(text: str) -> int | None:
    if text == "auto":
        return None
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'auto', got {text!r}") from None
    if k < 1:
        raise argparse.ArgumentTypeError("k must be >= 1")
    return k


def cmd_plan(args) -> int:
    m = _read_matrix(args.matrix, args.rtt)
    cfg = PlannerConfig(k=args.k, solver=args.solver, max_exact_n=args.max_exact_n)
    plan = solve(m, args.k, cfg) if args.k is not None else auto_plan(m, cfg)
    routes = build_route_plan(m, plan, args.min_gain)
    ks, (lo, hi) = k_star(m.n) if m.n >= 2 else (1.0, (1, 1))
    config = {"k": args.k, "solver": args.solver, "max_exact_n": args.max_exact_n,
              "min_gain": args.min_gain, "rtt": args.rtt}
    out = {
        "manifest": manifest("plan", config, None, {"matrix": args.matrix}),
        "plan": plan.to_json(),
        "routes": routes.to_json(),
        "k_star": ks,
        "k_range": [lo, hi],
    }
    _emit(args.out, _dumps(out))
    return EXIT_OK


def _load_failures(path: str | None) -> tuple[Failure, ...]:
    if not path:
        return ()
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = data.get("failures", [])
    return tuple(Failure.from_json(f) for f in data)


def _load_plan(path: str) -> GroupPlan:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return GroupPlan.from_json(data.get("plan", data))


def cmd_simulate(args) -> int:
    if args.trace:
        trace = _read_trace(args.trace, args.rtt)
    else:
        trace = LatencyTrace.constant(_read_matrix(args.matrix, args.rtt))
    initial = None
    if args.plan:
        p = _load_plan(args.plan)
        initial = make_plan(trace.at(0), p.assignment, p.aggregators)
    workload = WorkloadConfig(
        updates_per_node=args.updates, keys_per_update=args.keys, keyspace=args.keyspace,
        payload_bytes=args.payload, payload_spread=args.payload_spread,
        conflict_ratio=args.conflict, dup_ratio=args.dup, null_ratio=args.null, zipf_theta=args.zipf,
    )
    config = SimConfig(
        rounds=args.rounds, round_interval_ms=args.interval, mode=args.mode,
        planner=PlannerConfig(k=args.k, solver=args.solver, max_exact_n=args.max_exact_n),
        min_gain=args.min_gain, tiv_routing=not args.no_tiv, filtering=not args.no_filter,
        workload=workload, failures=_load_failures(args.failures),
        retransmit_timeout_ms=args.tau, loss_rate=args.loss, bandwidth_mbps=args.bandwidth,
        seed=args.seed, initial_plan=initial,
    )
    if trace.n < 2:
        raise ValueError("simulation needs at least 2 nodes")
    report = run_simulation(trace, config)
    inputs = {"trace": args.trace, "matrix": args.matrix, "plan": args.plan, "failures": args.failures}
    report.manifest = manifest("simulate", config.to_json(), args.seed, {k: v for k, v in inputs.items() if v})
    _emit(args.out, report.dumps())
    if args.csv:
        _atomic_write(args.csv, report.to_csv())
    return EXIT_OK


def _parse_percentiles(text: str) -> list[float]:
    try:
        ps = [float(x) / 100.0 for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad percentile list {text!r}") from None
    if not ps or any(not 0 < p <= 1 for p in ps):
        raise argparse.ArgumentTypeError("percentiles must lie in (0, 100]")
    return ps


def cmd_analyze(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        report = json.load(fh)
    inputs = {"report": args.report}
    config = {"percentiles": args.percentiles}
    base = None
    if args.baseline:
        with open(args.baseline, encoding="utf-8") as fh:
            base = json.load(fh)
        inputs["baseline"] = args.baseline
    man = manifest("analyze", config, None, inputs)
    header = "# manifest=" + json.dumps(man, sort_keys=True) + "\n"
    samples = makespans(report)
    out = {"manifest": man, "makespan": summarize(samples, args.percentiles)}
    if base is not None:
        out["baseline_makespan"] = summarize(makespans(base), args.percentiles)
        out["comparison"] = compare(report, base, args.percentiles).to_json()
    if args.cdf:
        _atomic_write(args.cdf, Cdf.from_samples(samples).to_csv(header))
    if args.heatmap:
        _atomic_write(args.heatmap, heatmap_csv(comm_heatmap(report), header))
    _emit(args.out, _dumps(out))
    return EXIT_OK


def cmd_coords(args) -> int:
    truth = _read_matrix(args.matrix, args.rtt)
    cfg = CoordConfig(dim=args.dim)
    system, history = converge(truth, args.rounds, args.target, args.seed, cfg)
    errs = relative_errors(system.estimated_matrix(), truth)
    config = {"rounds": args.rounds, "dim": args.dim, "target": args.target, "rtt": args.rtt}
    out = {
        "manifest": manifest("coords", config, args.seed, {"matrix": args.matrix}),
        "rounds_run": len(history),
        # every ordered pair is probed once per round; estimates cover the same pairs
        "probed_pairs": len(history) * truth.n * (truth.n - 1),
        "estimated_pairs": truth.n * (truth.n - 1),
        "median_error_history": history,
        "median_error": float(np.median(errs)) if errs.size else 0.0,
        "p90_error": float(np.quantile(errs, 0.9)) if errs.size else 0.0,
        "coordinates": system.to_json(),
    }
    _emit(args.out, _dumps(out))
    return EXIT_OK


def cmd_workload(args) -> int:
    cfg = WorkloadConfig(
        updates_per_node=args.updates, keys_per_update=args.keys, keyspace=args.keyspace,
        payload_bytes=args.payload, conflict_ratio=args.conflict, dup_ratio=args.dup,
        null_ratio=args.null, zipf_theta=args.zipf,
    )
    gen = WorkloadGenerator(args.nodes, cfg, args.seed)
    config = {"nodes": args.nodes, "epochs": args.epochs, **cfg.to_json()}
    man = manifest("workload", config, args.seed, {})
    parts = [json.dumps({"manifest": man}, sort_keys=True) + "\n"]
    for e in range(args.epochs):
        batch, _ = gen.epoch(e)
        parts.append(dump_updates(batch))
    _emit(args.out, "".join(parts))
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _add_workload_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--updates", type=int, default=5, help="updates per node per round")
    p.add_argument("--keys", type=int, default=2, help="keys written per update")
    p.add_argument("--keyspace", type=int, default=1000)
    p.add_argument("--payload", type=int, default=1024, help="bytes per written key")
    p.add_argument("--conflict", type=float, default=0.0)
    p.add_argument("--dup", type=float, default=0.0)
    p.add_argument("--null", type=float, default=0.0)
    p.add_argument("--zipf", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="geosync", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"geosync {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("tracegen", help="synthesize a time-varying latency trace")
    p.add_argument("--base", required=True, help="base matrix (.csv or .json)")
    p.add_argument("--jitter", type=float, default=0.1)
    p.add_argument("--knots", type=int, default=8)
    p.add_argument("--duration", type=int, default=10_000, help="ms")
    p.add_argument("--step", type=int, default=100, help="ms")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rtt", action="store_true", help="input holds round-trip times; halve them")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tracegen)

    p = sub.add_parser("tiv", help="list triangle-inequality violations")
    p.add_argument("--matrix", required=True)
    p.add_argument("--rtt", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tiv)

    p = sub.add_parser("plan", help="compute a group plan")
    p.add_argument("--matrix", required=True)
    p.add_argument("--k", type=_parse_k, default=None, help="group count or 'auto'")
    p.add_argument("--solver", choices=("exact", "kcenter"), default="exact")
    p.add_argument("--max-exact-n", type=int, default=12)
    p.add_argument("--min-gain", type=float, default=0.05)
    p.add_argument("--rtt", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="run a round-based synchronization simulation")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--trace")
    src.add_argument("--matrix", help="constant matrix instead of a trace")
    how = p.add_mutually_exclusive_group()
    how.add_argument("--plan", help="initial plan JSON (from 'plan')")
    how.add_argument("--auto", action="store_true", help="plan automatically (default)")
    p.add_argument("--mode", choices=("baseline", "grouped"), default="grouped")
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--interval", type=int, default=10, help="round interval, ms")
    p.add_argument("--k", type=_parse_k, default=None)
    p.add_argument("--solver", choices=("exact", "kcenter"), default="exact")
    p.add_argument("--max-exact-n", type=int, default=12)
    p.add_argument("--min-gain", type=float, default=0.05)
    p.add_argument("--no-tiv", action="store_true", help="route inter-aggregator traffic directly")
    p.add_argument("--no-filter", action="store_true", help="forward white data unfiltered")
    _add_workload_flags(p)
    p.add_argument("--payload-spread", type=float, default=0.0)
    p.add_argument("--failures", help="JSON list of failure events")
    p.add_argument("--tau", type=float, default=200.0, help="retransmit timeout, ms")
    p.add_argument("--loss", type=float, default=0.0, help="first-transmission loss rate")
    p.add_argument("--bandwidth", type=float, default=None, help="Mbit/s; adds serialization time")
    p.add_argument("--rtt", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--csv", help="also write one CSV row per round")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="summarize a simulation report")
    p.add_argument("--report", required=True)
    p.add_argument("--baseline")
    p.add_argument("--percentiles", type=_parse_percentiles, default=[0.5, 0.9, 0.99])
    p.add_argument("--cdf")
    p.add_argument("--heatmap")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("coords", help="fit network coordinates to a matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--target", type=float, default=None, help="stop once the median error reaches this")
    p.add_argument("--rtt", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_coords)

    p = sub.add_parser("workload", help="dump a synthetic update stream as JSONL")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--epochs", type=int, default=1)
    _add_workload_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_workload)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ValueError, OSError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
