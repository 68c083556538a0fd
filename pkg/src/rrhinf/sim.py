"""Hybrid simulation of the plant and the Round-Robin observer network.

Between sampling instants the plant and all observers form a linear ODE with
a held coupling input, integrated by classical RK4 on a grid that contains
every sampling instant.  At each instant ``t_k`` node ``i`` polls the first
neighbour of its k-th permuted neighbourhood and overwrites that one buffer.

Quantities that jump at sampling instants (error derivatives, held samples)
are stored twice on the grid: the left limit and the right limit.  Integrals
are taken step by step with the trapezoid rule using the right limit at the
start and the left limit at the end of each step.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .errors import HorizonNotMultiple, OutOfHistory, StepNotDividingPeriod, ZeroDenominator
from .lmi import WIRTINGER_COEFF
from .network import polled_neighbour

MIN_STEPS_PER_PERIOD = 20


# -- disturbances -------------------------------------------------------------

@dataclass(frozen=True)
class DisturbanceSignal:
    """Finite-energy test signal.

    kinds:
      ``zero``;
      ``pulse`` - ``amplitude`` on ``[start, start + width)``;
      ``decaying-sine`` - ``amplitude * exp(-decay s) * sin(freq s + phase)``, ``s = t - start >= 0``;
      ``random-piecewise`` - seeded Gaussian levels on pieces of length ``width`` covering
      ``[start, start + support)``, multiplied by ``amplitude * exp(-decay (t - start))``.
    """

    kind: str
    dim: int
    amplitude: tuple = ()
    start: float = 0.0
    width: float = 1.0
    decay: float = 0.0
    freq: float = 0.0
    phase: float = 0.0
    seed: int = 0
    support: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "pulse", "decaying-sine", "random-piecewise"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "decaying-sine" and self.decay <= 0:
            raise ValueError("decaying-sine needs a positive decay for finite energy")

    def _amp(self) -> np.ndarray:
        a = np.asarray(self.amplitude if self.amplitude != () else 1.0, dtype=float)
        return np.broadcast_to(a, (self.dim,)).astype(float)

    def _levels(self) -> np.ndarray:
        pieces = max(1, int(np.ceil(self.support / self.width - 1e-12)))
        rng = np.random.default_rng(self.seed)
        return rng.standard_normal((pieces, self.dim))

    def sample(self, t, side: str = "right") -> np.ndarray:
        """Values at times ``t`` (shape ``(len(t), dim)``); ``side`` picks the limit at jumps."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((t.size, self.dim))
        if self.kind == "zero":
            return out
        left = side == "left"

        def inside(a, b):
            return (t > a) & (t <= b) if left else (t >= a) & (t < b)

        amp = self._amp()
        if self.kind == "pulse":
            out[inside(self.start, self.start + self.width)] = amp
        elif self.kind == "decaying-sine":
            s = t - self.start
            on = inside(self.start, np.inf)
            out[on] = amp * (np.exp(-self.decay * s[on]) * np.sin(self.freq * s[on] + self.phase))[:, None]
        else:
            levels = self._levels()
            end = self.start + levels.shape[0] * self.width
            on = inside(self.start, end)
            s = t[on] - self.start
            idx = np.floor(s / self.width + 1e-12).astype(int)
            if left:
                idx = np.ceil(s / self.width - 1e-12).astype(int) - 1
            idx = np.clip(idx, 0, levels.shape[0] - 1)
            out[on] = amp * levels[idx] * np.exp(-self.decay * s)[:, None]
        return out

    def l2_norm_sq(self, T: float = np.inf) -> float:
        """``int_0^T |signal|^2 dt`` in closed form."""
        if self.kind == "zero":
            return 0.0
        a2 = self._amp() ** 2
        if self.kind == "pulse":
            length = max(0.0, min(self.start + self.width, T) - max(self.start, 0.0))
            return float(a2.sum() * length)
        L = max(0.0, T - self.start)
        lam = self.decay
        if self.kind == "decaying-sine":
            # exp(-2 lam s) sin^2(w s + phi) = exp(-2 lam s) (1 - cos(2 w s + 2 phi)) / 2
            base = _exp_integral(2 * lam, L)
            z = complex(-2 * lam, 2 * self.freq)
            if np.isinf(L):
                osc = (np.exp(2j * self.phase) * (-1.0 / z)).real
            else:
                osc = (np.exp(2j * self.phase) * (np.exp(z * L) - 1.0) / z).real
            return float(a2.sum() * 0.5 * (base - osc))
        levels = self._levels()
        total = 0.0
        for k, lev in enumerate(levels):
            lo = k * self.width
            hi = min((k + 1) * self.width, L)
            if hi <= lo:
                break
            total += float((a2 * lev ** 2).sum()) * (_exp_integral(2 * lam, hi) - _exp_integral(2 * lam, lo))
        return total


def _exp_integral(rate: float, L: float) -> float:
    """``int_0^L exp(-rate s) ds``."""
    if rate == 0:
        return float(L)
    if np.isinf(L):
        return 1.0 / rate
    return float(-np.expm1(-rate * L) / rate)


@dataclass(frozen=True)
class DisturbanceSet:
    """Process disturbance ``w`` shared by all nodes and one measurement disturbance per node."""

    w: DisturbanceSignal
    v: tuple

    @staticmethod
    def zero(problem) -> "DisturbanceSet":
        return DisturbanceSet(DisturbanceSignal("zero", problem.plant.m_w),
                              tuple(DisturbanceSignal("zero", s.m_v) for s in problem.sensors))

    def stacked(self, t, side: str = "right") -> np.ndarray:
        """``[w; v_1; ...; v_N]`` at times ``t``."""
        return np.hstack([self.w.sample(t, side)] + [v.sample(t, side) for v in self.v])

    def xi_norm_sq(self, T: float = np.inf) -> float:
        """``sum_i int_0^T |xi_i|^2`` with ``xi_i = [w; v_i]``."""
        return len(self.v) * self.w.l2_norm_sq(T) + sum(v.l2_norm_sq(T) for v in self.v)

    def is_zero(self) -> bool:
        return all(s.kind == "zero" for s in (self.w,) + tuple(self.v))


# -- trajectory ---------------------------------------------------------------

@dataclass
class Trajectory:
    """Simulation record on a uniform grid ``t = 0, h, ..., T``.

    ``xhat`` has shape ``(len(t), N, n)``.  ``edot_left/right`` are the error
    derivatives from the right-hand side; ``held_right/left[(j, i)]`` are the
    sample-instant indices ``l`` whose sample of edge ``j -> i`` is in use
    (negative = zero prehistory).
    """

    t: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    x0: np.ndarray
    period: float
    steps_per_period: int
    edot_right: np.ndarray | None = None
    edot_left: np.ndarray | None = None
    held_right: dict = field(default_factory=dict)
    held_left: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    disturbances: DisturbanceSet | None = None
    xi_right: np.ndarray | None = None

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def e(self) -> np.ndarray:
        return self.x[:, None, :] - self.xhat

    def error_at_instant(self, j: int, l) -> np.ndarray:
        """Error of node ``j`` at sampling instants ``l`` (prehistory gives ``x0``)."""
        l = np.asarray(l)
        idx = np.clip(l * self.steps_per_period, 0, self.t.size - 1)
        out = self.e[idx, j - 1]
        return np.where((l < 0)[..., None], self.x0, out)


def _trapz_steps(right: np.ndarray, left: np.ndarray, h: float) -> float:
    """Integral of a piecewise-smooth signal given limits on each grid point."""
    return float(0.5 * h * (right[:-1].sum(axis=0) + left[1:].sum(axis=0)))


def simulate(problem, gains, disturbances: DisturbanceSet | None = None, x0=None,
             T: float = 10.0, h: float | None = None) -> Trajectory:
    """Integrate plant and observers over ``[0, T]``.

    ``h`` must divide the sampling period into at least 20 steps and ``T``
    must be a whole number of periods.
    """
    plant, graph = problem.plant, problem.graph
    n, N = plant.n, graph.node_count
    delta = problem.schedule.period
    if h is None:
        h = delta / 50
    m = int(round(delta / h))
    if m < MIN_STEPS_PER_PERIOD or abs(m * h - delta) > 1e-9 * delta:
        raise StepNotDividingPeriod(f"step {h} must equal period/m with integer m >= {MIN_STEPS_PER_PERIOD}")
    K = int(round(T / delta))
    if K < 1 or abs(K * delta - T) > 1e-9 * max(T, delta):
        raise HorizonNotMultiple(f"horizon {T} is not a positive multiple of the period {delta}")
    h = delta / m
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
    dist = disturbances if disturbances is not None else DisturbanceSet.zero(problem)

    # z = [x; xhat_1; ...; xhat_N];  zdot = M z + E s(t) + u
    dim = n * (N + 1)
    m_w = plant.m_w
    m_vs = [s.m_v for s in problem.sensors]
    s_dim = m_w + sum(m_vs)
    M = np.zeros((dim, dim))
    E = np.zeros((dim, s_dim))
    M[:n, :n] = plant.A
    E[:n, :m_w] = plant.B2
    v_off = m_w
    for i, s in enumerate(problem.sensors):
        r = slice(n * (i + 1), n * (i + 2))
        L = gains.L[i]
        M[r, r] = plant.A - L @ s.C
        M[r, :n] = L @ s.C
        E[r, :m_w] = L @ s.D2
        E[r, v_off:v_off + s.m_v] = L @ s.D2bar
        v_off += s.m_v
    KH = [gains.K[i] @ problem.sensors[i].H for i in range(N)]

    steps = K * m
    t = np.arange(steps + 1) * h
    t[-1] = K * delta
    half = t[:-1] + 0.5 * h
    S_r = dist.stacked(t, "right") @ E.T
    S_l = dist.stacked(t, "left") @ E.T
    S_mid = dist.stacked(half, "right") @ E.T

    Z = np.zeros((steps + 1, dim))
    z = np.concatenate([x0, np.zeros(n * N)])
    Z[0] = z
    edges = sorted(graph.edges, key=lambda e: (e[1], e[0]))
    buf = {e: np.zeros(n) for e in edges}
    stamp = {e: -1 for e in edges}  # index l of the held sample; < 0 is prehistory
    held_r = {e: np.empty(steps + 1, dtype=int) for e in edges}
    held_l = {e: np.empty(steps + 1, dtype=int) for e in edges}
    buf_r = {e: np.empty((steps + 1, n)) for e in edges}
    U_r = np.zeros((steps + 1, dim))
    U_l = np.zeros((steps + 1, dim))
    events = []
    u = np.zeros(dim)

    for k in range(K):
        n0 = k * m
        for e in edges:
            held_l[e][n0] = stamp[e]
        U_l[n0] = u
        xh = z[n:].reshape(N, n)
        for i in range(1, N + 1):
            j = polled_neighbour(graph, i, k)
            if j is None:
                continue
            buf[(j, i)] = xh[j - 1] - xh[i - 1]
            stamp[(j, i)] = k
            events.append((k, k * delta, i, j))
        u = np.zeros(dim)
        for i in range(1, N + 1):
            tot = sum((buf[(j, i)] for j in graph.neighbours(i)), np.zeros(n))
            u[n * i:n * (i + 1)] = KH[i - 1] @ tot
        for step in range(m):
            idx = n0 + step
            for e in edges:
                cur = stamp[e]
                held_r[e][idx] = cur
                if step:
                    held_l[e][idx] = cur
                buf_r[e][idx] = buf[e]
            U_r[idx] = u
            if step:
                U_l[idx] = u
            g0, gm, g1 = S_r[idx] + u, S_mid[idx] + u, S_l[idx + 1] + u
            k1 = M @ z + g0
            k2 = M @ (z + 0.5 * h * k1) + gm
            k3 = M @ (z + 0.5 * h * k2) + gm
            k4 = M @ (z + h * k3) + g1
            z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            Z[idx + 1] = z
    # final point: left limit only meaningful; right limit = left (no sampling at T is used)
    for e in edges:
        cur = stamp[e]
        held_l[e][steps] = cur
        held_r[e][steps] = cur
        buf_r[e][steps] = buf[e]
    U_l[steps] = u
    U_r[steps] = u

    deriv_r = Z @ M.T + S_r + U_r
    deriv_l = Z @ M.T + S_l + U_l
    # prehistory: the plant and observers are at rest before t = 0
    deriv_l[0] = 0.0
    x = Z[:, :n]
    xhat = Z[:, n:].reshape(-1, N, n)
    edot_r = deriv_r[:, None, :n] - deriv_r[:, n:].reshape(-1, N, n)
    edot_l = deriv_l[:, None, :n] - deriv_l[:, n:].reshape(-1, N, n)
    xi = dist.stacked(t, "right")
    return Trajectory(t, x, xhat, x0, delta, m, edot_r, edot_l, held_r, held_l, buf_r, events, dist, xi)


# -- functionals ----------------------------------------------------------------

def disagreement_cost(traj: Trajectory, graph) -> tuple[float, float]:
    """Disagreement cost in the pairwise form and in the degree-weighted form.

    Pairwise: ``(1/N) int sum_i sum_{j in V_i} |xhat_j - xhat_i|^2``;
    degree form: ``(1/N) int sum_i [(p_i + q_i)|e_i|^2 - 2 e_i' sum_{j in V_i} e_j]``.
    Both use the trapezoid rule on the simulation grid, truncated at ``T``.
    """
    N = graph.node_count
    xh = traj.xhat
    e = traj.e
    pair = np.zeros(traj.t.size)
    for (j, i) in graph.edges:
        pair += np.sum((xh[:, j - 1] - xh[:, i - 1]) ** 2, axis=1)
    degree = np.zeros(traj.t.size)
    for i in range(1, N + 1):
        ei = e[:, i - 1]
        deg = graph.p(i) + graph.q(i)
        nb = sum((e[:, j - 1] for j in graph.neighbours(i)), np.zeros_like(ei))
        degree += deg * np.sum(ei ** 2, axis=1) - 2 * np.sum(ei * nb, axis=1)
    h = traj.h
    return (float(trapezoid(pair, dx=h) / N), float(trapezoid(degree, dx=h) / N))


def disagreement_gain(traj: Trajectory, graph, P, x0=None, disturbances: DisturbanceSet | None = None) -> float:
    """``J / (x0' P x0 + (1/N) |xi|_2^2)`` with norms truncated at ``T``."""
    x0 = traj.x0 if x0 is None else np.asarray(x0, dtype=float)
    dist = traj.disturbances if disturbances is None else disturbances
    N = graph.node_count
    denom = float(x0 @ P @ x0) + (dist.xi_norm_sq(traj.T) / N if dist is not None else 0.0)
    if denom <= 0:
        raise ZeroDenominator("x0 = 0 and zero disturbance: the gain is undefined")
    return disagreement_cost(traj, graph)[0] / denom


def _kernel_weights(alpha: float, tau: float, h: float, L: int):
    u = np.arange(L + 1) * h
    decay = np.exp(-2 * alpha * u)
    s_w = h * decay
    s_w[0] *= 0.5
    s_w[-1] *= 0.5
    kappa = tau * decay * (tau - u)  # weight of edot' R edot at lag u
    return s_w, kappa


def lk_values(traj: Trajectory, i: int, Yhat, S, R, alpha: float, tau: float) -> np.ndarray:
    """Lyapunov-Krasovskii functional of node ``i`` at every grid point."""
    e = traj.e[:, i - 1]
    quad = np.einsum("ka,ab,kb->k", e, Yhat, e)
    if tau == 0:
        return quad
    h = traj.h
    L = int(round(tau / h))
    if abs(L * h - tau) > 1e-9 * tau:
        raise OutOfHistory("delay is not a whole number of simulation steps")
    x0 = traj.x0
    fS = np.concatenate([np.full(L, x0 @ S @ x0), np.einsum("ka,ab,kb->k", e, S, e)])
    edr, edl = traj.edot_right[:, i - 1], traj.edot_left[:, i - 1]
    gR_r = np.concatenate([np.zeros(L), np.einsum("ka,ab,kb->k", edr, R, edr)])
    gR_l = np.concatenate([np.zeros(L), np.einsum("ka,ab,kb->k", edl, R, edl)])
    s_w, kappa = _kernel_weights(alpha, tau, h, L)
    count = traj.t.size
    s_part = np.convolve(fS, s_w)[L:L + count]
    # step [s_m, s_m + h] at lags u (start) and u - 1 (end), u = 1..L
    w_start = np.concatenate([[0.0], 0.5 * h * kappa[1:]])
    w_end = 0.5 * h * kappa[:-1]
    r_part = np.convolve(gR_r, w_start)[L:L + count] + np.convolve(gR_l, w_end)[L:L + count]
    return quad + s_part + r_part


def lk_functional(traj: Trajectory, i: int, t: float, Yhat, S, R, alpha: float, tau: float) -> float:
    """``V_i`` at time ``t`` (a grid point) by direct quadrature over ``[t - tau, t]``."""
    h = traj.h
    n_t = int(round(t / h))
    if n_t < 0 or n_t >= traj.t.size or abs(n_t * h - t) > 1e-9 * max(1.0, t):
        raise OutOfHistory(f"t={t} is not a grid point of the trajectory")
    e = traj.e[:, i - 1]
    val = float(e[n_t] @ Yhat @ e[n_t])
    if tau == 0:
        return val
    L = int(round(tau / h))
    x0 = traj.x0
    total = 0.0
    for mm in range(n_t - L, n_t):
        s0, s1 = mm * h, (mm + 1) * h
        u0, u1 = t - s0, t - s1
        ea = e[mm] if mm >= 0 else x0
        eb = e[mm + 1] if mm + 1 >= 0 else x0
        da = traj.edot_right[mm, i - 1] if mm >= 0 else np.zeros_like(x0)
        db = traj.edot_left[mm + 1, i - 1] if mm + 1 >= 0 else np.zeros_like(x0)
        total += 0.5 * h * (np.exp(-2 * alpha * u0) * (ea @ S @ ea) + np.exp(-2 * alpha * u1) * (eb @ S @ eb))
        total += 0.5 * h * tau * (np.exp(-2 * alpha * u0) * (tau - u0) * (da @ R @ da)
                                  + np.exp(-2 * alpha * u1) * (tau - u1) * (db @ R @ db))
    return val + total


def _node_lk(problem, traj, values, i):
    n = problem.plant.n
    z = np.zeros((n, n))
    return lk_values(traj, i, values[f"Yhat{i}"], values.get(f"S{i}", z), values.get(f"R{i}", z),
                     problem.options.alpha[i - 1], problem.schedule.tau(i))


@dataclass(frozen=True)
class DissipationResult:
    residual: float
    storage_change: float
    decay_term: float
    disagreement_term: float
    disturbance_energy: float
    initial_storage: float

    def passed(self, rtol: float = 1e-4) -> bool:
        scale = self.disturbance_energy if self.disturbance_energy > 0 else self.initial_storage
        return self.residual <= rtol * max(scale, np.finfo(float).tiny)


def dissipation_check(traj: Trajectory, problem, values: dict, gamma_sq: float) -> DissipationResult:
    """Integrated vector dissipation inequality along a trajectory.

    ``residual = 1'V(T) - 1'V(0) - int 1'MV + gamma^-2 sum_i sum_{j in V_i} int |e_i - e_j|^2
    - sum_i int |xi_i|^2``; it is nonpositive when the certificate holds.
    """
    graph = problem.graph
    N = graph.node_count
    V = np.array([_node_lk(problem, traj, values, i) for i in range(1, N + 1)])  # (N, len t)
    Mmat = np.diag([-2 * a for a in problem.options.alpha])
    for (j, i) in graph.edges:
        Mmat[i - 1, j - 1] = problem.options.pi[j - 1]
    MV = np.ones(N) @ Mmat @ V
    h = traj.h
    storage_change = float(V[:, -1].sum() - V[:, 0].sum())
    decay_term = float(trapezoid(MV, dx=h))
    N_J = disagreement_cost(traj, graph)[0] * N
    energy = traj.disturbances.xi_norm_sq(traj.T)
    residual = storage_change - decay_term + N_J / gamma_sq - energy
    return DissipationResult(residual, storage_change, decay_term, N_J / gamma_sq, energy, float(V[:, 0].sum()))


def wirtinger_check(traj: Trajectory, problem, values: dict) -> dict:
    """Per edge ``(j, i)``: ``int_0^T tau_i^2 edot_j' W_j edot_j - (pi^2/4) |e_j - e_j(sample)|^2_{W_j}``."""
    out = {}
    e = traj.e
    for (j, i) in sorted(problem.graph.edges, key=lambda ed: (ed[1], ed[0])):
        W = values.get(f"W{j}")
        if W is None:
            out[(j, i)] = 0.0
            continue
        tau_i = problem.schedule.tau(i)
        ej = e[:, j - 1]

        def integrand(edot, held):
            diff = ej - traj.error_at_instant(j, held)
            return (tau_i ** 2 * np.einsum("ka,ab,kb->k", edot, W, edot)
                    - WIRTINGER_COEFF * np.einsum("ka,ab,kb->k", diff, W, diff))

        right = integrand(traj.edot_right[:, j - 1], traj.held_right[(j, i)])
        left = integrand(traj.edot_left[:, j - 1], traj.held_left[(j, i)])
        out[(j, i)] = _trapz_steps(right, left, traj.h)
    return out


def decay_metric(traj: Trajectory) -> float:
    """``max_i |e_i(T)| / |x0|``."""
    nx0 = np.linalg.norm(traj.x0)
    if nx0 == 0:
        raise ZeroDenominator("x0 = 0")
    return float(np.max(np.linalg.norm(traj.e[-1], axis=1)) / nx0)


# -- export ---------------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_trajectory_csv(traj: Trajectory, graph, path) -> None:
    n = traj.x.shape[1]
    N = traj.xhat.shape[1]
    edges = sorted(graph.edges, key=lambda ed: (ed[1], ed[0]))
    header = ["t"] + [f"x{c + 1}" for c in range(n)]
    header += [f"xhat{i + 1}_{c + 1}" for i in range(N) for c in range(n)]
    header += [f"e{i + 1}_{c + 1}" for i in range(N) for c in range(n)]
    header += [f"buf{j}to{i}_{c + 1}" for (j, i) in edges for c in range(n)]
    e = traj.e
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(traj.t.size):
            row = [traj.t[k], *traj.x[k], *traj.xhat[k].ravel(), *e[k].ravel()]
            for ed in edges:
                row.extend(traj.buffers[ed][k])
            w.writerow([_fmt(v) for v in row])


def write_events_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t_k", "i", "polled_j"])
        for k, tk, i, j in traj.events:
            w.writerow([k, _fmt(tk), i, j])
