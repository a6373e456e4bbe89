"""Command-line entry point: simulate, replay-estimate, plan-cob, report."""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import cob
from .harness import (format_report, report, run, trace_from_csv, verify_replay, write_artifacts)
from .mapper import MapCloud, read_ply
from .scenario import ScenarioError, load_scenario

OUT_ENV = "COMPLIANT_QUAD_OUT"


def _outdir(args) -> str:
    return args.out or os.environ.get(OUT_ENV) or "out"


def _simulate_one(job) -> tuple:
    path, overrides, outdir = job
    sc = load_scenario(path, overrides)
    if sc.name == "unnamed":
        sc.name = os.path.splitext(os.path.basename(path))[0]
    trace = run(sc)
    paths = write_artifacts(trace, sc, outdir)
    return report(trace, sc), paths


def cmd_simulate(args) -> int:
    outdir = _outdir(args)
    jobs = [(p, args.set, outdir) for p in args.scenario]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_simulate_one, jobs))
    else:
        results = [_simulate_one(j) for j in jobs]
    for rep, paths in results:
        sys.stdout.write(format_report(rep))
        sys.stdout.write("artifacts: " + " ".join(paths.values()) + "\n\n")
    cob_rows = [r for r, _ in results if "cob_tau_s" in r]
    if len(cob_rows) > 1:
        sys.stdout.write(cob_table(cob_rows))
    return 0


def cob_table(reps) -> str:
    def fmt(v):
        return "never" if v is None else f"{v:.3f}"
    lines = ["kind,tau_r,tau_s,rmse"]
    lines += [f"{r['cob_kind']},{fmt(r['cob_tau_r'])},{fmt(r['cob_tau_s'])},{fmt(r['cob_rmse'])}" for r in reps]
    return "\n".join(lines) + "\n"


def _sidecar(trace_path: str, suffix: str) -> str:
    base = trace_path[: -len(".trace.csv")] if trace_path.endswith(".trace.csv") else trace_path
    return base + suffix


def _scenario_for(trace_path: str, explicit, overrides):
    path = explicit or _sidecar(trace_path, ".scenario.txt")
    if not os.path.exists(path):
        raise ScenarioError(f"no scenario file for {trace_path}; pass --scenario")
    return load_scenario(path, overrides)


def cmd_replay(args) -> int:
    sc = _scenario_for(args.trace, args.scenario, args.set)
    est_path = args.est_inputs or _sidecar(args.trace, ".estin.csv")
    checked, bad = verify_replay(sc, args.trace, est_path)
    print(f"replayed {checked} estimator rows, {len(bad)} mismatches")
    if bad:
        print("first mismatching steps: " + " ".join(str(s) for s in bad[:10]))
        return 1
    return 0


def cmd_report(args) -> int:
    sc = _scenario_for(args.trace, args.scenario, args.set)
    trace = trace_from_csv(args.trace)
    ply = _sidecar(args.trace, ".ply")
    if os.path.exists(ply):
        trace.cloud = MapCloud(points=[tuple(p) for p in read_ply(ply)])
    rep = report(trace, sc)
    if "blocks" in rep and trace.cloud is None:
        rep["blocks"] = 0
    sys.stdout.write(format_report(rep))
    return 0


def _problem(args):
    vals = {"start": "0,0", "goal": None, "wall": None, "a_max": "2", "v_max": "inf", "e": "0.09",
            "kind": "AUTO"}
    if args.problem:
        with open(args.problem, encoding="utf-8") as fh:
            for n, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = (s.strip() for s in line.partition("="))
                if not sep or key not in vals:
                    raise ScenarioError(f"{args.problem}:{n}: unknown or malformed entry {raw.strip()!r}")
                vals[key] = value
    for item in args.set:
        key, _, value = item.partition("=")
        if key not in vals:
            raise ScenarioError(f"unknown problem key {key!r}")
        vals[key] = value
    if vals["goal"] is None:
        raise ScenarioError("plan-cob needs a goal")
    start = tuple(float(v) for v in vals["start"].split(","))
    if len(start) != 2:
        raise ScenarioError("start must be 'x,v'")
    wall = None if vals["wall"] in (None, "", "none") else float(vals["wall"])
    prob = cob.CobProblem(start=start, goal=float(vals["goal"]), wall=wall, a_max=float(vals["a_max"]),
                          v_max=float(vals["v_max"]), e=float(vals["e"]))
    return prob, vals["kind"]


def cmd_plan(args) -> int:
    prob, kind = _problem(args)
    kinds = [cob.NO_COLLISION] + ([cob.collide_plan(prob).kind] if prob.wall is not None else [])
    best = cob.choose_plan(prob) if kind == "AUTO" else cob.plan_of_kind(prob, kind)
    print("kind,total_time,segments")
    for k in kinds:
        p = cob.plan_of_kind(prob, k)
        segs = " ".join("JUMP" if s.jump else f"{s.accel:+.3g}x{s.duration:.4f}" for s in p.segments)
        print(f"{k},{p.total_time:.6f},{segs}")
    print(f"selected: {best.kind} ({best.total_time:.6f} s)")
    if args.phase:
        with open(args.phase, "w", encoding="ascii", newline="\n") as fh:
            fh.write(cob.phase_portrait_csv(best, *prob.start))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="compliant-quad")
    sub = ap.add_subparsers(dest="verb", required=True)

    def overrides(p):
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a scenario key (repeatable)")

    p = sub.add_parser("simulate", help="run one or more scenario files")
    p.add_argument("scenario", nargs="+")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    p.add_argument("--jobs", type=int, default=1)
    overrides(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay-estimate", help="re-run the estimator on a trace's logged inputs")
    p.add_argument("trace")
    p.add_argument("--scenario")
    p.add_argument("--est-inputs")
    overrides(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("plan-cob", help="compare minimum-time plans with and without a wall impact")
    p.add_argument("problem", nargs="?")
    p.add_argument("--phase", help="write the selected plan's (t, x, v) samples as CSV")
    overrides(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("report", help="recompute the summary of a written trace")
    p.add_argument("trace")
    p.add_argument("--scenario")
    overrides(p)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, cob.CobInfeasible, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
