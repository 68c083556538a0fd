"""Scalarisation of LMI constraints into a standard semidefinite program.

The decision vector ``x`` concatenates the free entries of every variable
(lower triangles for symmetric ones).  Each constraint becomes a pair
``(G, h)`` with ``h - G x`` required to be positive semidefinite, which is the
form taken by :func:`cvxopt.solvers.sdp`.  Rows of ``G``/``h`` are
column-major vectorised ``d x d`` matrices.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .affine import MatrixExpression, Variable
from .errors import DimensionMismatch, NonAffineExpression, NumericalFailure

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class LmiConstraint:
    """``expr >= margin*I`` (sense ``"psd"``) or ``expr <= -margin*I`` (sense ``"nsd"``)."""

    name: str
    expr: MatrixExpression
    sense: str
    margin: float = 0.0

    def __post_init__(self):
        if self.sense not in ("psd", "nsd"):
            raise ValueError(f"unknown constraint sense {self.sense!r}")
        if not isinstance(self.expr, MatrixExpression):
            raise NonAffineExpression(f"{self.name}: constraint must be a MatrixExpression")
        if self.expr.shape[0] != self.expr.shape[1]:
            raise DimensionMismatch(f"{self.name}: constraint matrix must be square")

    def slack(self, M: np.ndarray) -> np.ndarray:
        """Matrix that must be PSD, given the evaluated expression."""
        d = M.shape[0]
        if self.sense == "psd":
            return M - self.margin * np.eye(d)
        return -M - self.margin * np.eye(d)


@dataclass
class ConicProgram:
    variables: list
    offsets: dict
    constraints: list
    G: list
    h: list
    scales: list
    c: np.ndarray
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    @property
    def size(self) -> int:
        return int(self.c.size)

    @property
    def block_dims(self) -> list:
        return [int(round(np.sqrt(h.size))) for h in self.h]

    def split(self, x: np.ndarray) -> dict:
        """Decision vector -> ``{name: slice of x}``."""
        return {v.name: x[self.offsets[v.name]:self.offsets[v.name] + v.size] for v in self.variables}

    def unpack(self, x: np.ndarray) -> dict:
        """Decision vector -> ``{name: matrix value}``."""
        return {v.name: v.from_vector(x[self.offsets[v.name]:self.offsets[v.name] + v.size])
                for v in self.variables}

    def pack(self, values: dict) -> np.ndarray:
        x = np.zeros(self.size)
        for v in self.variables:
            x[self.offsets[v.name]:self.offsets[v.name] + v.size] = v.to_vector(values[v.name])
        return x

    def block_matrix(self, k: int, x: np.ndarray) -> np.ndarray:
        """Unscaled value of constraint ``k``'s expression at ``x`` rebuilt from ``G, h``."""
        d = self.block_dims[k]
        slack = ((self.h[k] - self.G[k] @ x) / self.scales[k]).reshape(d, d, order="F")
        con = self.constraints[k]
        if con.sense == "psd":
            return slack + con.margin * np.eye(d)
        return -(slack + con.margin * np.eye(d))

    def dump(self, path) -> None:
        """Write the program as sparse triplets.

        Format: ``c <index> <value>`` lines, then for every block a
        ``block <k> <dim> <name>`` header followed by ``h <row> <col> <value>``
        and ``G <var index> <row> <col> <value>`` lines (lower triangle, 0-based).
        """
        with open(path, "w") as fh:
            fh.write(f"# sdp: minimize c'x s.t. h_k - sum_i x_i G_k,i >= 0\n")
            fh.write(f"vars {self.size}\n")
            for v in self.variables:
                fh.write(f"var {v.name} {self.offsets[v.name]} {v.size} {'sym' if v.symmetric else 'full'} "
                         f"{v.shape[0]} {v.shape[1]}\n")
            for idx in np.flatnonzero(self.c):
                fh.write(f"c {idx} {self.c[idx]:.17g}\n")
            for k, (G, h) in enumerate(zip(self.G, self.h)):
                d = self.block_dims[k]
                fh.write(f"block {k} {d} {self.constraints[k].name}\n")
                rows, cols = np.tril_indices(d)
                flat = rows + cols * d
                for r, c_, f in zip(rows, cols, flat):
                    if h[f] != 0:
                        fh.write(f"h {r} {c_} {h[f]:.17g}\n")
                sub = G[flat]
                for e, var in zip(*np.nonzero(sub)):
                    fh.write(f"G {var} {rows[e]} {cols[e]} {sub[e, var]:.17g}\n")


def scalarize(constraints, objective: dict | None = None, maximize: bool = True,
              tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
              scale: bool = True) -> ConicProgram:
    """Build a :class:`ConicProgram`.

    ``objective`` maps scalar (1x1) variable names to weights; by default the
    weighted sum is maximised.  Each constraint is divided by the Frobenius
    norm of its data when ``scale`` is set.
    """
    variables: dict[str, Variable] = {}
    for con in constraints:
        for name, var in con.expr.variables.items():
            if name in con.expr.terms:
                if name in variables and variables[name] is not var and variables[name].shape != var.shape:
                    raise DimensionMismatch(f"variable {name} declared with two shapes")
                variables.setdefault(name, var)
    ordered = [variables[k] for k in sorted(variables, key=_var_sort_key)]
    offsets = {}
    pos = 0
    for v in ordered:
        offsets[v.name] = pos
        pos += v.size

    c = np.zeros(pos)
    for name, weight in (objective or {}).items():
        if name not in variables:
            raise KeyError(f"objective variable {name!r} does not appear in any constraint")
        if variables[name].size != 1:
            raise DimensionMismatch("objective terms must be scalar variables")
        c[offsets[name]] = -weight if maximize else weight

    Gs, hs, scales = [], [], []
    for con in constraints:
        d = con.expr.shape[0]
        G = np.zeros((d * d, pos))
        sign = 1.0 if con.sense == "psd" else -1.0
        # psd: h - Gx = C + sum x M - m I  -> h = C - mI, G = -M
        # nsd: h - Gx = -C - sum x M - m I -> h = -C - mI, G = M
        h = (sign * con.expr.const - con.margin * np.eye(d)).ravel(order="F")
        for name, t in con.expr.terms.items():
            var = variables[name]
            G[:, offsets[name]:offsets[name] + var.size] = -sign * t.transpose(0, 2, 1).reshape(var.size, -1).T
        s = np.sqrt(np.sum(G ** 2) + np.sum(h ** 2)) if scale else 1.0
        s = 1.0 / s if s > 0 else 1.0
        Gs.append(G * s)
        hs.append(h * s)
        scales.append(s)
    return ConicProgram(ordered, offsets, list(constraints), Gs, hs, scales, c, tol, max_iter)


def _var_sort_key(name: str):
    head = name.rstrip("0123456789")
    tail = name[len(head):]
    return (int(tail) if tail else 0, head)


@dataclass(frozen=True)
class SolveReport:
    status: str  # "optimal" | "infeasible" | "numerical-failure"
    values: dict = field(repr=False)
    x: np.ndarray = field(repr=False)
    objective: float
    theta: float | None
    gamma_sq: float | None
    residuals: dict  # constraint name -> smallest eigenvalue of the required-PSD slack
    iterations: int
    wall_time: float
    solver_status: str = ""

    def min_residual(self) -> float:
        return min(self.residuals.values()) if self.residuals else 0.0


def _solve_cvxopt(program: ConicProgram, verbose: bool = False):
    from cvxopt import matrix, solvers

    opts = {"show_progress": verbose, "maxiters": program.max_iter,
            "abstol": program.tol, "reltol": program.tol, "feastol": program.tol}
    sol = solvers.sdp(matrix(program.c), Gs=[matrix(G) for G in program.G],
                      hs=[matrix(h.reshape(d, d, order="F")) for h, d in zip(program.h, program.block_dims)], options=opts)
    x = None if sol["x"] is None else np.array(sol["x"]).ravel()
    return sol["status"], x, int(sol.get("iterations", 0) or 0)


def _svec_rows(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat (column-major) indices and weights of the scaled upper-triangle vectorisation."""
    rows, cols = np.triu_indices(d)
    order = np.lexsort((rows, cols))  # column by column
    rows, cols = rows[order], cols[order]
    weight = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows + cols * d, weight


def _solve_clarabel(program: ConicProgram, verbose: bool = False):
    import clarabel
    import scipy.sparse as sp

    A_blocks, b_blocks, cones = [], [], []
    for G, h, d in zip(program.G, program.h, program.block_dims):
        idx, w = _svec_rows(d)
        A_blocks.append(G[idx] * w[:, None])
        b_blocks.append(h[idx] * w)
        cones.append(clarabel.PSDTriangleConeT(d))
    A = sp.csc_matrix(np.vstack(A_blocks))
    b = np.concatenate(b_blocks)
    P = sp.csc_matrix((program.size, program.size))
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = program.max_iter
    settings.tol_gap_abs = settings.tol_gap_rel = program.tol
    settings.tol_feas = program.tol
    solver = clarabel.DefaultSolver(P, program.c, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    mapped = {"Solved": "optimal", "AlmostSolved": "unknown", "PrimalInfeasible": "primal infeasible",
              "AlmostPrimalInfeasible": "primal infeasible"}.get(status, status)
    return mapped, np.array(sol.x), int(sol.iterations)


BACKENDS: dict[str, Callable] = {"cvxopt": _solve_cvxopt, "clarabel": _solve_clarabel}


def register_backend(name: str, fn: Callable) -> None:
    """``fn(program) -> (status, x or None, iterations)`` with cvxopt-style status strings."""
    BACKENDS[name] = fn


def solve(program: ConicProgram, backend: str = "auto", verbose: bool = False,
          feas_tol: float = 1e-9) -> SolveReport:
    """Solve and independently re-check every constraint at the returned point.

    A solution whose slack matrices are PSD to within ``feas_tol`` (relative
    to the constraint scale) is reported ``optimal`` even if the backend
    stopped early; a returned point that violates a constraint is a
    ``numerical-failure``.

    ``backend="auto"`` runs cvxopt and, unless it returns a certified optimum,
    Clarabel as well, keeping the better verified point.
    """
    if backend == "auto":
        first = solve(program, "cvxopt", verbose, feas_tol)
        if first.status == "optimal" and first.solver_status == "optimal":
            return first
        second = solve(program, "clarabel", verbose, feas_tol)
        candidates = [r for r in (first, second) if r.status == "optimal"]
        if candidates:
            return min(candidates, key=lambda r: r.objective)
        if "infeasible" in (first.status, second.status):
            return first if first.status == "infeasible" else second
        return first
    start = time.perf_counter()
    try:
        raw_status, x, iters = BACKENDS[backend](program, verbose)
    except (ArithmeticError, ValueError) as exc:
        raw_status, x, iters = f"error: {exc}", None, 0
    wall = time.perf_counter() - start

    if raw_status == "primal infeasible":
        return SolveReport("infeasible", {}, np.zeros(0), np.nan, None, None, {}, iters, wall, raw_status)
    if x is None or not np.all(np.isfinite(x)):
        return SolveReport("numerical-failure", {}, np.zeros(0), np.nan, None, None, {}, iters, wall, raw_status)

    residuals = {}
    worst_scaled = np.inf
    for k, con in enumerate(program.constraints):
        d = program.block_dims[k]
        scaled_slack = (program.h[k] - program.G[k] @ x).reshape(d, d, order="F")
        lam = np.linalg.eigvalsh(0.5 * (scaled_slack + scaled_slack.T))[0]
        worst_scaled = min(worst_scaled, lam)
        residuals[con.name] = float(lam / program.scales[k])
    values = program.unpack(x)
    theta = float(values["theta"][0, 0]) if "theta" in values else None
    gamma_sq = (1.0 / theta if theta and theta > 0 else np.inf) if theta is not None else None
    objective = float(program.c @ x)

    if worst_scaled < -feas_tol:
        status = "numerical-failure"
    elif raw_status == "optimal" or raw_status == "unknown":
        status = "optimal"
    else:
        status = "numerical-failure"
    return SolveReport(status, values, x, objective, theta, gamma_sq, residuals, iters, wall, raw_status)


def require_optimal(report: SolveReport) -> SolveReport:
    if report.status == "optimal":
        return report
    if report.status == "infeasible":
        from .errors import InfeasibleProgram
        raise InfeasibleProgram(f"no certificate exists ({report.solver_status})")
    raise NumericalFailure(f"solver failed ({report.solver_status})")
