"""Certification of a synthesized design against simulated trajectories.

The report combines the eigenvalue post-check of the analysis matrices with,
for every run of a deterministic test battery, the empirical disagreement
gain, the integrated dissipation inequality and the per-edge Wirtinger
integrals.  A finite battery only lower-bounds the worst-case gain.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .sim import (DisturbanceSet, DisturbanceSignal, decay_metric, disagreement_cost,
                  disagreement_gain, dissipation_check, simulate, wirtinger_check)
from .synthesis import SynthesisResult, verify_theorem2

GAIN_RTOL = 1e-2
DISSIPATION_RTOL = 1e-4
WIRTINGER_TOL = 1e-6
DECAY_TOL = 1e-3
BATTERY_NOTE = ("the battery is finite, so the largest observed ratio only lower-bounds "
                "the worst-case disagreement gain; it does not certify it")


@dataclass(frozen=True)
class BatteryRun:
    name: str
    disturbances: DisturbanceSet
    x0: tuple


def _on(problem, which, make):
    """Disturbance set with ``make(dim)`` on ``w`` (``which == 0``) or on ``v_which``."""
    zero = DisturbanceSet.zero(problem)
    if which == 0:
        return DisturbanceSet(make(problem.plant.m_w), zero.v)
    v = list(zero.v)
    v[which - 1] = make(problem.sensors[which - 1].m_v)
    return DisturbanceSet(zero.w, tuple(v))


def _everywhere(problem, make):
    return DisturbanceSet(make(problem.plant.m_w), tuple(make(s.m_v) for s in problem.sensors))


def default_battery(problem) -> list[BatteryRun]:
    """20 fixed disturbance runs (``x0 = 0``) followed by 5 free-response runs."""
    delta = problem.schedule.period
    N = problem.N
    n = problem.plant.n
    zero_x0 = (0.0,) * n
    runs = []
    # pulses starting just before, on and just after sampling instants
    pulses = [(0, 3.0, 1.0), (1, 5.0 - 1e-3, 0.5), (2, 7.0 + 1e-3, 2 * delta),
              (min(3, N), 2.0 + 0.5 * delta, 0.3 * delta), (0, 11.0 - 0.02 * delta, 4.0),
              (1 % (N + 1), 0.0, 0.5 * delta)]
    for k, (which, start, width) in enumerate(pulses):
        runs.append(BatteryRun(f"pulse-{k}", _on(problem, which, lambda d, s=start, w=width:
                                                     DisturbanceSignal("pulse", d, (1.0,), start=s, width=w)),
                               zero_x0))
    # decaying sines at three frequencies, on w and on every v_i
    for freq in (0.5, 3.0, 20.0):
        runs.append(BatteryRun(f"sine-w-{freq:g}", _on(problem, 0, lambda d, f=freq: DisturbanceSignal(
            "decaying-sine", d, (1.0,), start=1.0, decay=0.2, freq=f)), zero_x0))
        runs.append(BatteryRun(f"sine-all-{freq:g}", _everywhere(problem, lambda d, f=freq: DisturbanceSignal(
            "decaying-sine", d, (0.7,), start=0.3 * delta, decay=0.5, freq=f, phase=0.4)), zero_x0))
    # seeded random piecewise signals with a decaying envelope
    widths = (0.37 * delta, delta, 2.5 * delta, 1.3, 0.05, 4.0, 0.7 * delta, 0.25)
    for seed, width in enumerate(widths):
        def make(d, seed=seed, width=width):
            return DisturbanceSignal("random-piecewise", d, (1.0,), start=0.1 * seed, width=width,
                                     decay=0.1 + 0.05 * seed, seed=1000 + 17 * seed + d, support=20.0)
        runs.append(BatteryRun(f"random-{seed}", _everywhere(problem, make), zero_x0))
    initial = [np.ones(n), np.eye(n)[0], np.eye(n)[min(1, n - 1)], np.eye(n)[n - 1],
               np.resize([1.0, -2.0, 0.5], n)]
    for k, x0 in enumerate(initial):
        runs.append(BatteryRun(f"x0-{k}", DisturbanceSet.zero(problem), tuple(float(v) for v in x0)))
    return runs


@dataclass
class RunReport:
    name: str
    ratio: float
    J: float
    J_degree_form: float
    dissipation_residual: float
    dissipation_scale: float
    wirtinger: dict
    decay: float | None
    tail_bound: float
    passed: bool
    checks: dict = field(default_factory=dict)


@dataclass
class CertificationReport:
    gamma_sq: float
    analysis_check: dict
    runs: list
    max_ratio: float
    passed: bool
    note: str = BATTERY_NOTE

    def to_dict(self) -> dict:
        d = asdict(self)
        for r in d["runs"]:
            r["wirtinger"] = {f"{j}->{i}": v for (j, i), v in r["wirtinger"].items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, default=float)

    def summary_table(self) -> str:
        lines = [f"gamma^2 = {self.gamma_sq:.4g}   max observed ratio = {self.max_ratio:.4g}",
                 f"analysis matrices negative definite: {'PASS' if self.analysis_check['passed'] else 'FAIL'}",
                 f"{'run':<16}{'ratio':>11}{'diss. res':>12}{'min wirt.':>12}{'decay':>11}  result"]
        for r in self.runs:
            decay = f"{r.decay:.4g}" if r.decay is not None else "-"
            lines.append(f"{r.name:<16}{r.ratio:>11.4g}{r.dissipation_residual:>12.4g}"
                         f"{min(r.wirtinger.values(), default=0.0):>12.4g}{decay:>11}  "
                         f"{'PASS' if r.passed else 'FAIL'}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        lines.append(f"note: {self.note}")
        return "\n".join(lines)


def _run_one(result: SynthesisResult, run: BatteryRun, T: float, h: float | None) -> RunReport:
    problem, gains = result.problem, result.gains
    traj = simulate(problem, gains, run.disturbances, np.array(run.x0), T=T, h=h)
    J, J6 = disagreement_cost(traj, problem.graph)
    ratio = disagreement_gain(traj, problem.graph, gains.P)
    diss = dissipation_check(traj, problem, result.values, gains.gamma_sq)
    wirt = wirtinger_check(traj, problem, result.values)
    decay = decay_metric(traj) if not np.allclose(run.x0, 0) else None
    # beyond T with no further disturbance the summed storage bounds the rest of J
    tail = float(gains.gamma_sq * (diss.storage_change + diss.initial_storage) / problem.N)
    checks = {
        "gain": ratio <= gains.gamma_sq * (1 + GAIN_RTOL),
        "dissipation": diss.passed(DISSIPATION_RTOL),
        "wirtinger": all(v >= -WIRTINGER_TOL for v in wirt.values()),
    }
    if decay is not None:
        checks["decay"] = decay <= DECAY_TOL
    scale = diss.disturbance_energy if diss.disturbance_energy > 0 else diss.initial_storage
    return RunReport(run.name, ratio, J, J6, diss.residual, scale, wirt, decay, max(tail, 0.0),
                     all(checks.values()), checks)


def certify(result: SynthesisResult, battery: list[BatteryRun] | None = None, T: float = 50.0,
            h: float | None = None, workers: int | None = None) -> CertificationReport:
    """Run the eigenvalue post-check and every battery run; aggregate PASS/FAIL."""
    battery = default_battery(result.problem) if battery is None else battery
    if workers is None:
        workers = int(os.environ.get("RRHINF_THREADS", "1") or 1)
    post = verify_theorem2(result)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(lambda r: _run_one(result, r, T, h), battery))
    else:
        runs = [_run_one(result, r, T, h) for r in battery]
    max_ratio = max((r.ratio for r in runs), default=0.0)
    passed = post["passed"] and all(r.passed for r in runs)
    return CertificationReport(result.gains.gamma_sq, post, runs, max_ratio, passed)
