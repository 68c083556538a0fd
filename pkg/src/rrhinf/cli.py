"""Command-line driver: ``rrhinf synth | sweep | simulate | certify``.

Exit codes: 0 ok, 1 certification failed, 2 infeasible, 3 numerical failure,
4 configuration or input error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InfeasibleProgram, NumericalFailure, RRHinfError, SingularMultiplier
from .model import load_problem
from .sim import (DisturbanceSet, DisturbanceSignal, decay_metric, disagreement_cost, disagreement_gain,
                  simulate, write_events_csv, write_trajectory_csv)
from .synthesis import SynthesisResult, load_gains, save_gains, sweep_delta, synthesize, verify_theorem2
from .verify import certify

EXIT_OK, EXIT_FAIL, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2, 3, 4


def _g17(v) -> str:
    return f"{float(v):.17g}"


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from exc


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("RRHINF_THREADS", "1")))
    except ValueError:
        return 1


def _problem(args):
    problem = load_problem(args.config)
    if getattr(args, "delta", None) is not None:
        problem = problem.with_period(args.delta)
    if getattr(args, "eps", None) is not None:
        problem = problem.with_options(eps=args.eps)
    return problem


def _design(args):
    """Problem at the period and options the gains were synthesized for, plus the gains."""
    problem = load_problem(args.config)
    try:
        doc = json.loads(Path(args.gains).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FileNotFoundError(f"cannot read gains file {args.gains}: {exc}") from exc
    gains, values = load_gains(args.gains, problem)
    problem = problem.with_period(doc["period"])
    syn = doc.get("problem", {}).get("synthesis", {})
    changes = {k: syn[k] for k in ("alpha", "pi", "eps", "epsbar") if k in syn}
    if changes:
        problem = problem.with_options(**changes)
    return problem, gains, values


def cmd_synth(args) -> int:
    problem = _problem(args)
    result = synthesize(problem, backend=args.backend)
    check = verify_theorem2(result)
    out = args.output or "gains.json"
    save_gains(result, out)
    print(f"gamma^2 = {result.gamma_sq:.4g}  (gamma^2={_g17(result.gamma_sq)})")
    print(f"status = {result.report.status}  solver = {result.report.solver_status}  "
          f"iterations = {result.report.iterations}  time = {result.report.wall_time:.4g} s")
    worst = max(nd["lambda_max"] for nd in check["nodes"])
    print(f"analysis post-check: {'PASS' if check['passed'] else 'FAIL'} (max eigenvalue {worst:.4g})")
    print(f"gains written to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    problem = load_problem(args.config)
    rows = sweep_delta(problem, args.deltas, args.eps, backend=args.backend, workers=_threads())
    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "eps", "status", "gamma_sq", "wall_ms"])
        for r in rows:
            w.writerow([_g17(r["delta"]), _g17(r["eps"]), r["status"], _g17(r["gamma_sq"]), _g17(r["wall_ms"])])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def _disturbances(problem, kind: str, amplitude: float, seed: int) -> DisturbanceSet:
    if kind == "zero":
        return DisturbanceSet.zero(problem)
    delta = problem.schedule.period

    def make(d):
        if kind == "pulse":
            return DisturbanceSignal("pulse", d, (amplitude,), start=1.0, width=1.0)
        if kind == "sine":
            return DisturbanceSignal("decaying-sine", d, (amplitude,), decay=0.3, freq=2.0)
        return DisturbanceSignal("random-piecewise", d, (amplitude,), width=delta, decay=0.2,
                                 seed=seed + d, support=20.0)

    return DisturbanceSet(make(problem.plant.m_w), tuple(make(s.m_v) for s in problem.sensors))


def cmd_simulate(args) -> int:
    problem, gains, _ = _design(args)
    n = problem.plant.n
    x0 = np.array(args.x0 if args.x0 is not None else [0.0] * n)
    if x0.size != n:
        raise DimensionMismatch(f"x0 needs {n} entries")
    dist = _disturbances(problem, args.disturbance, args.amplitude, args.seed)
    h = problem.schedule.period / args.steps if args.h is None else args.h
    traj = simulate(problem, gains, dist, x0, T=args.T, h=h)
    write_trajectory_csv(traj, problem.graph, args.output)
    if args.events:
        write_events_csv(traj, args.events)
    J = disagreement_cost(traj, problem.graph)[0]
    print(f"J = {J:.4g}  (J={_g17(J)})")
    if np.any(x0) or not dist.is_zero():
        ratio = disagreement_gain(traj, problem.graph, gains.P)
        print(f"gain ratio = {ratio:.4g}  gamma^2 = {gains.gamma_sq:.4g}  (ratio={_g17(ratio)})")
    if np.any(x0):
        print(f"decay max_i |e_i(T)|/|x0| = {decay_metric(traj):.4g}")
    print(f"trajectory written to {args.output}")
    return EXIT_OK


def cmd_certify(args) -> int:
    problem, gains, values = _design(args)
    result = SynthesisResult(problem, gains, None, values)
    report = certify(result, T=args.T, workers=_threads())
    print(report.summary_table())
    if args.json:
        Path(args.json).write_text(report.to_json())
    return EXIT_OK if report.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rrhinf", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="solve the synthesis LMIs and write a gains file")
    p.add_argument("config")
    p.add_argument("--delta", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--backend", default="auto", choices=["auto", "cvxopt", "clarabel"])
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="gamma^2 over a grid of sampling periods and eps values (CSV)")
    p.add_argument("config")
    p.add_argument("--deltas", type=_floats, required=True)
    p.add_argument("--eps", type=_floats, default=[0.1])
    p.add_argument("--backend", default="auto", choices=["auto", "cvxopt", "clarabel"])
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="simulate a design and export the trajectory")
    p.add_argument("config")
    p.add_argument("gains")
    p.add_argument("--disturbance", default="zero", choices=["zero", "pulse", "sine", "random"])
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", type=_floats)
    p.add_argument("--T", type=float, default=50.0)
    p.add_argument("--h", type=float)
    p.add_argument("--steps", type=int, default=50, help="steps per sampling period when --h is not given")
    p.add_argument("-o", "--output", default="trajectory.csv")
    p.add_argument("--events")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("certify", help="eigenvalue post-check plus the simulation battery")
    p.add_argument("config")
    p.add_argument("gains")
    p.add_argument("--T", type=float, default=50.0)
    p.add_argument("--json")
    p.set_defaults(func=cmd_certify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except InfeasibleProgram as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalFailure, SingularMultiplier) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (RRHinfError, OSError, KeyError, ValueError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
