"""Block matrices of the Round-Robin observer LMIs.

Builders take either numpy arrays or :class:`~rrhinf.affine.MatrixExpression`
objects for the decision-dependent arguments.  Two full-size matrices are
assembled per node:

* :func:`build_Xi_analysis` - numeric analysis matrix for given gains and
  multipliers ``X, Z, Q``;
* :func:`build_Xi_synthesis` - affine expression in the synthesis variables
  (``Yhat = Y^{-1}``, ``S, R, W, G, X, F, U`` and ``theta = gamma^{-2}``).

Both use the row/column ordering of ``eta_i`` given by :func:`block_layout`.

Variable naming: ``Yhat{i}``, ``S{i}``, ``R{i}``, ``G{i}``, ``W{i}``,
``X{i}``, ``F{i}``, ``U{i}`` (1-based node index) and ``theta``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affine import MatrixExpression, Variable, bmat, kron
from .errors import DimensionMismatch, EmptyNeighbourhood, NonPositiveGap, PartitionMismatch

# Weight of the Wirtinger term (circle constant), distinct from the per-node pi_i.
WIRTINGER_COEFF = np.pi ** 2 / 4


@dataclass(frozen=True)
class LmiBlockLayout:
    names: tuple
    sizes: tuple

    @property
    def offsets(self) -> tuple:
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.sizes)[:-1]]))

    @property
    def dim(self) -> int:
        return int(sum(self.sizes))

    def slice(self, name: str) -> slice:
        k = self.names.index(name)
        return slice(self.offsets[k], self.offsets[k] + self.sizes[k])


def block_layout(n: int, p: int, m_xi: int) -> LmiBlockLayout:
    """Layout of ``eta_i = [edot; e; e_samples; e(t-tau); e_nbr_t; e_nbr_s; xi]``.

    Nodes without in-neighbours use the reduced vector ``[edot; e; xi]``.
    """
    if p == 0:
        return LmiBlockLayout(("edot", "e", "xi"), (n, n, m_xi))
    return LmiBlockLayout(("edot", "e", "e_samples", "e_delayed", "e_nbr_t", "e_nbr_s", "xi"),
                          (n, n, p * n, n, p * n, p * n, m_xi))


def build_T(p: int, n: int) -> np.ndarray:
    """Successive-difference operator, ``(p+1)n x (p+2)n``."""
    if p < 1 or n < 1:
        raise DimensionMismatch("build_T needs p >= 1 and n >= 1")
    D = np.eye(p + 1, p + 2) - np.eye(p + 1, p + 2, k=1)
    return np.kron(D, np.eye(n))


def build_Psi(R, G, p: int):
    """Block matrix with ``R`` on the diagonal and ``(G + G')/2`` elsewhere, ``p+1`` blocks."""
    if p < 1:
        raise DimensionMismatch("build_Psi needs p >= 1")
    Gs = 0.5 * (G + G.T)
    return bmat([[R if a == b else Gs for b in range(p + 1)] for a in range(p + 1)])


def park_constraint(R, G):
    """``[[R, G], [G', R]]``, required to be positive semidefinite."""
    return bmat([[R, G], [G.T, R]])


def _split_delta(delta, count: int) -> list:
    delta = np.asarray(delta, dtype=float)
    if delta.ndim == 1:
        if delta.size % count:
            raise DimensionMismatch("delta length is not a multiple of the number of gaps")
        delta = delta.reshape(count, -1)
    if delta.shape[0] != count:
        raise DimensionMismatch(f"expected {count} delta blocks, got {delta.shape[0]}")
    return list(delta)


def lemma1_lhs(R, delta, gaps) -> float:
    """``tau * sum_nu delta_nu' R delta_nu / gap_nu`` with ``tau = sum(gaps)``."""
    gaps = np.asarray(gaps, dtype=float)
    if np.any(gaps <= 0):
        raise NonPositiveGap("all gaps must be positive")
    parts = _split_delta(delta, gaps.size)
    tau = gaps.sum()
    return float(tau * sum(d @ R @ d / g for d, g in zip(parts, gaps)))


def lemma1_rhs(Psi, delta) -> float:
    """``delta' Psi delta``."""
    d = np.asarray(delta, dtype=float).ravel()
    return float(d @ Psi @ d)


def build_Psi_bar(R, G, p: int, n: int, alpha: float, tau: float):
    T = build_T(p, n)
    return np.exp(-2 * alpha * tau) * (T.T @ build_Psi(R, G, p) @ T)


def partition3(M, n: int, p: int) -> dict:
    """Split a ``(p+2)n`` square matrix along ``[n, pn, n]``; keys like ``"12"``."""
    size = (p + 2) * n
    if M.shape != (size, size):
        raise PartitionMismatch(f"expected a {size}x{size} matrix, got {M.shape}")
    cuts = [slice(0, n), slice(n, n + p * n), slice(n + p * n, size)]
    return {f"{a + 1}{b + 1}": M[cuts[a], cuts[b]] for a in range(3) for b in range(3)}


def build_Psi_tilde(Psi_bar, Yhat, S, alpha: float, tau: float, n: int, p: int):
    """``Psi_bar`` with ``-2 alpha Yhat - S`` added to block (1,1) and ``e^{-2 alpha tau} S`` to (3,3)."""
    partition3(Psi_bar, n, p)  # shape check
    z = np.zeros
    corr = bmat([
        [-2 * alpha * Yhat - S, z((n, p * n)), z((n, n))],
        [z((p * n, n)), z((p * n, p * n)), z((p * n, n))],
        [z((n, n)), z((n, p * n)), np.exp(-2 * alpha * tau) * S],
    ])
    return Psi_bar + corr


def build_Phi_bar(neighbours, Yhat: dict, W: dict, pi: dict):
    """Neighbour blocks ``(Phi11, Phi12, Phi22)`` in the given neighbour order.

    ``Phi11 = diag(pi_j Yhat_j + c W_j)``, ``Phi22 = diag(c W_j)``,
    ``Phi12 = -Phi22`` with ``c = pi^2/4``.
    """
    neighbours = list(neighbours)
    if not neighbours:
        raise EmptyNeighbourhood("Phi blocks are undefined for a node with no in-neighbours")
    p = len(neighbours)

    def diag(blocks):
        return bmat([[blocks[a] if a == b else None for b in range(p)] for a in range(p)])

    Phi22 = diag([WIRTINGER_COEFF * W[j] for j in neighbours])
    Phi11 = diag([pi[j] * Yhat[j] + WIRTINGER_COEFF * W[j] for j in neighbours])
    return Phi11, -Phi22, Phi22


def _sym(blocks):
    """Assemble a symmetric matrix from its upper-triangular blocks (None = zero)."""
    k = len(blocks)
    full = [[None] * k for _ in range(k)]
    for a in range(k):
        for b in range(a, k):
            blk = blocks[a][b]
            full[a][b] = blk
            if b > a and blk is not None:
                full[b][a] = blk.T
    M = bmat(full)
    if isinstance(M, MatrixExpression):
        return M.symmetrized()
    return 0.5 * (M + M.T)


def _node_data(problem, i: int):
    sensor = problem.sensors[i - 1]
    graph = problem.graph
    p, q = graph.p(i), graph.q(i)
    tau = problem.schedule.tau(i)
    sigma = sum(problem.schedule.tau(j) ** 2 for j in graph.receivers(i))
    return sensor, p, q, tau, sigma


def build_Xi_analysis(problem, i: int, values: dict, X, Z, Q, K, L, gamma: float) -> np.ndarray:
    """Numeric analysis matrix for node ``i``.

    ``values`` holds ``Yhat{j}``, ``S{j}``, ``R{j}``, ``G{j}``, ``W{j}`` for node
    ``i`` and its neighbours (``S, R, G`` only for nodes with in-neighbours).
    """
    plant = problem.plant
    A, n = plant.A, plant.n
    sensor, p, q, tau, sigma = _node_data(problem, i)
    C, H = sensor.C, sensor.H
    B, D = sensor.stacked_B(plant), sensor.stacked_D()
    alpha = problem.options.alpha[i - 1]
    g2inv = 1.0 / gamma ** 2
    Acl = A - L @ C
    Bcl = B - L @ D
    m_xi = B.shape[1]
    Yhat = values[f"Yhat{i}"]
    W_i = values.get(f"W{i}", np.zeros((n, n)))
    KH = K @ H

    if p == 0:
        aa = sigma * W_i - Z - Z.T
        ab = Yhat - X + Z.T @ Acl
        ag = Z.T @ Bcl
        bb = q * g2inv * np.eye(n) + 2 * alpha * Yhat + X.T @ Acl + Acl.T @ X
        bg = X.T @ Bcl
        return _sym([[aa, ab, ag], [None, bb, bg], [None, None, -np.eye(m_xi)]])

    R, S, G = values[f"R{i}"], values[f"S{i}"], values[f"G{i}"]
    one_row = np.ones((1, p))
    one_col = np.ones((p, 1))
    one_mat = np.ones((p, p))
    Pt = partition3(build_Psi_tilde(build_Psi_bar(R, G, p, n, alpha, tau), Yhat, S, alpha, tau, n, p), n, p)
    hood = problem.graph.neighbours(i)
    Phi11, Phi12, Phi22 = build_Phi_bar(
        hood, {j: values[f"Yhat{j}"] for j in hood}, {j: values[f"W{j}"] for j in hood},
        {j: problem.options.pi[j - 1] for j in hood})

    aa = tau ** 2 * R + sigma * W_i - Z - Z.T
    ab = Yhat - X + Z.T @ Acl
    ac = -Z.T @ np.kron(one_row, KH)
    af = np.kron(one_row, -Q + Z.T @ KH)
    ag = Z.T @ Bcl
    bb = (p + q) * g2inv * np.eye(n) - Pt["11"] + X.T @ Acl + Acl.T @ X
    bc = -Pt["12"] - np.kron(one_row, X.T @ KH)
    bd = -Pt["13"]
    be = -g2inv * np.kron(one_row, np.eye(n))
    bf = np.kron(one_row, X.T @ KH + Acl.T @ Q)
    bg = X.T @ Bcl
    cc = -Pt["22"]
    cd = -Pt["23"]
    cf = -np.kron(one_mat, H.T @ K.T @ Q)
    dd = -Pt["33"]
    ee = -Phi11
    ef = -Phi12
    ff = np.kron(one_mat, Q.T @ KH + KH.T @ Q) - Phi22
    fg = np.kron(one_col, Q.T @ Bcl)
    gg = -np.eye(m_xi)
    return _sym([
        [aa, ab, ac, None, None, af, ag],
        [None, bb, bc, bd, be, bf, bg],
        [None, None, cc, cd, None, cf, None],
        [None, None, None, dd, None, None, None],
        [None, None, None, None, ee, ef, None],
        [None, None, None, None, None, ff, fg],
        [None, None, None, None, None, None, gg],
    ])


def declare_variables(problem) -> dict:
    """All synthesis variables, keyed by name."""
    n = problem.plant.n
    graph = problem.graph
    out = {}
    for i in range(1, graph.node_count + 1):
        s = problem.sensors[i - 1]
        out[f"Yhat{i}"] = Variable(f"Yhat{i}", (n, n), symmetric=True)
        out[f"X{i}"] = Variable(f"X{i}", (n, n))
        out[f"U{i}"] = Variable(f"U{i}", (n, s.m_y))
        if graph.p(i) > 0:
            out[f"F{i}"] = Variable(f"F{i}", (n, s.H.shape[0]))
            out[f"S{i}"] = Variable(f"S{i}", (n, n), symmetric=True)
            out[f"R{i}"] = Variable(f"R{i}", (n, n), symmetric=True)
            out[f"G{i}"] = Variable(f"G{i}", (n, n))
        if graph.q(i) > 0:
            out[f"W{i}"] = Variable(f"W{i}", (n, n), symmetric=True)
    if problem.options.gamma is None:
        out["theta"] = Variable("theta", (1, 1))
    return out


def build_Xi_synthesis(problem, i: int, variables: dict) -> MatrixExpression:
    """Synthesis matrix of node ``i`` as an affine expression.

    The gamma terms are written with ``theta = gamma^{-2}`` so the matrix is
    affine in ``theta``; with a fixed gamma in the options ``theta`` is a
    constant.
    """
    plant = problem.plant
    A, n = plant.A, plant.n
    sensor, p, q, tau, sigma = _node_data(problem, i)
    C, H = sensor.C, sensor.H
    B, D = sensor.stacked_B(plant), sensor.stacked_D()
    opts = problem.options
    alpha, eps, epsb = opts.alpha[i - 1], opts.eps[i - 1], opts.epsbar[i - 1]
    m_xi = B.shape[1]
    I_n = np.eye(n)

    v = {k: var.expr for k, var in variables.items()}
    theta = v["theta"] if "theta" in v else np.array([[1.0 / opts.gamma ** 2]])
    Yhat, X, U = v[f"Yhat{i}"], v[f"X{i}"], v[f"U{i}"]
    W_i = v.get(f"W{i}")
    XtA_UC = X.T @ A - U @ C
    XtB_UD = X.T @ B - U @ D

    aa = -eps * (X + X.T)
    if W_i is not None and sigma:
        aa = aa + sigma * W_i
    ab = Yhat - X + eps * XtA_UC
    ag = eps * XtB_UD
    bb_common = XtA_UC + XtA_UC.T
    bg = XtB_UD

    if p == 0:
        bb = kron(theta, q * I_n) + 2 * alpha * Yhat + bb_common
        return _sym([[aa, ab, ag], [None, bb, bg], [None, None, -np.eye(m_xi)]])

    R, S, G = v[f"R{i}"], v[f"S{i}"], v[f"G{i}"]
    FH = v[f"F{i}"] @ H
    one_row = np.ones((1, p))
    one_col = np.ones((p, 1))
    one_mat = np.ones((p, p))
    Pt = partition3(build_Psi_tilde(build_Psi_bar(R, G, p, n, alpha, tau), Yhat, S, alpha, tau, n, p), n, p)
    hood = problem.graph.neighbours(i)
    Phi11, Phi12, Phi22 = build_Phi_bar(
        hood, {j: v[f"Yhat{j}"] for j in hood}, {j: v[f"W{j}"] for j in hood},
        {j: opts.pi[j - 1] for j in hood})

    aa = aa + tau ** 2 * R
    ac = -eps * kron(one_row, FH)
    af = kron(one_row, -epsb * X + eps * FH)
    bb = kron(theta, (p + q) * I_n) - Pt["11"] + bb_common
    bc = -Pt["12"] - kron(one_row, FH)
    bd = -Pt["13"]
    be = -kron(theta, kron(one_row, I_n))
    bf = kron(one_row, FH + epsb * (A.T @ X - C.T @ U.T))
    cc = -Pt["22"]
    cd = -Pt["23"]
    cf = -kron(one_mat, epsb * FH.T)
    dd = -Pt["33"]
    ee = -Phi11
    ef = -Phi12
    ff = kron(one_mat, epsb * (FH + FH.T)) - Phi22
    fg = kron(one_col, epsb * XtB_UD)
    gg = -np.eye(m_xi)
    return _sym([
        [aa, ab, ac, None, None, af, ag],
        [None, bb, bc, bd, be, bf, bg],
        [None, None, cc, cd, None, cf, None],
        [None, None, None, dd, None, None, None],
        [None, None, None, None, ee, ef, None],
        [None, None, None, None, None, ff, fg],
        [None, None, None, None, None, None, gg],
    ])
