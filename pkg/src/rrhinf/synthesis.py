"""Observer/coupling gain synthesis, analysis post-check and sampling-period sweeps."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import __version__
from .errors import (DimensionMismatch, InfeasibleProgram, NumericalFailure, RRHinfError,
                     SchemaError, SingularMultiplier)
from .lmi import build_Xi_analysis, build_Xi_synthesis, declare_variables, park_constraint
from .model import GainSet, Problem, problem_to_config
from .sdp import ConicProgram, LmiConstraint, SolveReport, scalarize, solve

log = logging.getLogger(__name__)

GAINS_FORMAT = "rrhinf-gains"
GAINS_VERSION = 1
MAX_MULTIPLIER_COND = 1e10


def build_program(problem: Problem, tol: float = 1e-8, max_iter: int = 200) -> ConicProgram:
    """Assemble every LMI of the synthesis problem.

    Per node: the synthesis matrix (negative definite), ``Yhat > 0`` and, for
    nodes with in-neighbours, the Park block and ``S >= 0``; ``W >= 0`` for
    nodes with out-neighbours.  The objective maximises ``theta`` unless a
    fixed gamma is configured.
    """
    variables = declare_variables(problem)
    margin = problem.options.margin
    constraints = []
    for i in range(1, problem.N + 1):
        constraints.append(LmiConstraint(f"Xi{i}", build_Xi_synthesis(problem, i, variables), "nsd", margin))
        constraints.append(LmiConstraint(f"Yhat{i}", variables[f"Yhat{i}"].expr, "psd", margin))
        if f"R{i}" in variables:
            constraints.append(LmiConstraint(
                f"Park{i}", park_constraint(variables[f"R{i}"].expr, variables[f"G{i}"].expr), "psd"))
            constraints.append(LmiConstraint(f"S{i}", variables[f"S{i}"].expr, "psd"))
        if f"W{i}" in variables:
            constraints.append(LmiConstraint(f"W{i}", variables[f"W{i}"].expr, "psd"))
    objective = None
    if "theta" in variables:
        constraints.append(LmiConstraint("theta", variables["theta"].expr, "psd"))
        objective = {"theta": 1.0}
    return scalarize(constraints, objective, tol=tol, max_iter=max_iter)


def certificate_matrix(problem: Problem, values: dict) -> np.ndarray:
    """``P = (1/N) sum_i (Yhat_i + S_i (1 - exp(-2 alpha_i tau_i)) / (2 alpha_i))``."""
    n = problem.plant.n
    P = np.zeros((n, n))
    for i in range(1, problem.N + 1):
        P += values[f"Yhat{i}"]
        tau = problem.schedule.tau(i)
        if f"S{i}" in values and tau > 0:
            a = problem.options.alpha[i - 1]
            P += values[f"S{i}"] * (-np.expm1(-2 * a * tau)) / (2 * a)
    P /= problem.N
    return 0.5 * (P + P.T)


def recover_gains(problem: Problem, values: dict) -> tuple[tuple, tuple]:
    """Solve ``X_i' K_i = F_i`` and ``X_i' L_i = U_i`` by LU factorisation."""
    Ks, Ls = [], []
    for i in range(1, problem.N + 1):
        X = values[f"X{i}"]
        cond = np.linalg.cond(X)
        if not np.isfinite(cond) or cond > MAX_MULTIPLIER_COND:
            raise SingularMultiplier(f"X{i} is numerically singular (cond={cond:.3g})")
        lu = sla.lu_factor(X.T)
        if f"F{i}" in values:
            Ks.append(sla.lu_solve(lu, values[f"F{i}"]))
        else:  # no in-neighbours: the coupling gain never acts
            Ks.append(np.zeros((X.shape[0], problem.sensors[i - 1].H.shape[0])))
        Ls.append(sla.lu_solve(lu, values[f"U{i}"]))
    return tuple(Ks), tuple(Ls)


@dataclass
class SynthesisResult:
    problem: Problem
    gains: GainSet
    report: SolveReport
    values: dict = field(repr=False)

    @property
    def gamma_sq(self) -> float:
        return self.gains.gamma_sq


def synthesize(problem: Problem, backend: str = "auto", tol: float = 1e-8,
               max_iter: int = 200) -> SynthesisResult:
    """Solve the synthesis LMIs and recover the gains and certificate ``P``.

    Raises ``InfeasibleProgram``, ``NumericalFailure`` or ``SingularMultiplier``.
    """
    program = build_program(problem, tol=tol, max_iter=max_iter)
    report = solve(program, backend=backend)
    log.info("solve: status=%s gamma^2=%s iters=%d time=%.2fs", report.status, report.gamma_sq,
             report.iterations, report.wall_time)
    if report.status == "infeasible" or (report.theta is not None and report.theta <= 0):
        raise InfeasibleProgram(f"synthesis LMIs infeasible at period {problem.schedule.period}")
    if report.status != "optimal":
        raise NumericalFailure(f"solver returned {report.solver_status!r}")
    values = report.values
    K, L = recover_gains(problem, values)
    P = certificate_matrix(problem, values)
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("certificate matrix P is not positive definite") from exc
    gamma_sq = report.gamma_sq if report.gamma_sq is not None else problem.options.gamma ** 2
    return SynthesisResult(problem, GainSet(K, L, P, float(gamma_sq)), report, values)


def verify_theorem2(result: SynthesisResult, gains: GainSet | None = None,
                    gamma_sq: float | None = None) -> dict:
    """Rebuild the analysis matrices with ``Z = eps X``, ``Q = epsbar X`` and check them.

    Returns per-node eigenvalues, ``lambda_max`` and a ``passed`` flag that also
    requires every Park block to be PSD (to 1e-8 relative).
    """
    problem = result.problem
    gains = gains or result.gains
    gamma = np.sqrt(gamma_sq if gamma_sq is not None else gains.gamma_sq)
    values = result.values
    opts = problem.options
    nodes = []
    ok = True
    for i in range(1, problem.N + 1):
        X = values[f"X{i}"]
        Xi = build_Xi_analysis(problem, i, values, X, opts.eps[i - 1] * X, opts.epsbar[i - 1] * X,
                               gains.K[i - 1], gains.L[i - 1], gamma)
        eig = np.linalg.eigvalsh(Xi)
        entry = {"node": i, "lambda_max": float(eig[-1]), "eigenvalues": eig.tolist()}
        if f"R{i}" in values:
            park = park_constraint(values[f"R{i}"], values[f"G{i}"])
            lam = np.linalg.eigvalsh(0.5 * (park + park.T))
            entry["park_lambda_min"] = float(lam[0])
            if lam[0] < -1e-8 * max(1.0, abs(lam[-1])):
                ok = False
        if eig[-1] >= 0:
            ok = False
        nodes.append(entry)
    return {"passed": ok, "nodes": nodes}


def sweep_delta(problem: Problem, deltas, epsilons, backend: str = "auto", workers: int = 1) -> list[dict]:
    """One synthesis per ``(delta, eps)`` grid point; failures are recorded, not raised."""
    deltas, epsilons = list(deltas), list(epsilons)
    if not deltas or not epsilons:
        raise ValueError("delta and eps lists must be non-empty")
    grid = [(d, e) for d in deltas for e in epsilons]

    def run(point):
        delta, eps = point
        import time
        start = time.perf_counter()
        row = {"delta": delta, "eps": eps, "status": "", "gamma_sq": np.nan, "wall_ms": 0.0}
        try:
            prob = problem.with_period(delta).with_options(eps=eps)
            res = synthesize(prob, backend=backend)
            row["status"] = "optimal"
            row["gamma_sq"] = res.gamma_sq
        except InfeasibleProgram:
            row["status"] = "infeasible"
        except NumericalFailure:
            row["status"] = "numerical-failure"
        except RRHinfError as exc:
            row["status"] = f"error: {type(exc).__name__}"
        row["wall_ms"] = 1000 * (time.perf_counter() - start)
        return row

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, grid))
    return [run(p) for p in grid]


# -- gains file --------------------------------------------------------------

def save_gains(result: SynthesisResult, path) -> None:
    problem = result.problem
    doc = {
        "format": GAINS_FORMAT,
        "version": GAINS_VERSION,
        "generator": f"rrhinf {__version__}",
        "n": problem.plant.n,
        "nodes": problem.N,
        "period": problem.schedule.period,
        "gamma_sq": result.gains.gamma_sq,
        "K": [k.tolist() for k in result.gains.K],
        "L": [l.tolist() for l in result.gains.L],
        "P": result.gains.P.tolist(),
        "variables": {k: v.tolist() for k, v in result.values.items()},
        "solver": {
            "status": result.report.status,
            "solver_status": result.report.solver_status,
            "iterations": result.report.iterations,
            "wall_time": result.report.wall_time,
            "residuals": result.report.residuals,
        },
        "problem": problem_to_config(problem),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_gains(path, problem: Problem | None = None) -> tuple[GainSet, dict]:
    """Read a gains file; returns the gain set and the raw variable values.

    With ``problem`` given, dimensions are checked against it.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"gains file is not valid JSON: {exc}") from exc
    if doc.get("format") != GAINS_FORMAT or doc.get("version") != GAINS_VERSION:
        raise SchemaError("not a version-1 gains file")
    K = tuple(np.array(k, dtype=float) for k in doc["K"])
    L = tuple(np.array(l, dtype=float) for l in doc["L"])
    P = np.array(doc["P"], dtype=float)
    values = {k: np.atleast_2d(np.array(v, dtype=float)) for k, v in doc.get("variables", {}).items()}
    if problem is not None:
        n = problem.plant.n
        if doc["nodes"] != problem.N or doc["n"] != n or P.shape != (n, n):
            raise DimensionMismatch("gains file does not match the problem dimensions")
        for i, (k, l, s) in enumerate(zip(K, L, problem.sensors), start=1):
            if k.shape != (n, s.H.shape[0]) or l.shape != (n, s.m_y):
                raise DimensionMismatch(f"node {i}: gain shapes {k.shape}, {l.shape} do not match")
    return GainSet(K, L, P, float(doc["gamma_sq"])), values
