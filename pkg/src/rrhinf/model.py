"""Plant, sensors, synthesis options and the JSON problem configuration."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, SchemaError
from .network import ObserverGraph, RoundRobinSchedule, build_graph, node_delays

# Numerical rank threshold relative to the largest singular value.
RANK_RTOL = 1e-8


def _matrix(value, name: str) -> np.ndarray:
    try:
        m = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{name}: not a numeric matrix") from exc
    if m.ndim == 1:
        m = m.reshape(1, -1) if name.startswith(("C", "D", "H")) else m.reshape(-1, 1)
    if m.ndim != 2:
        raise SchemaError(f"{name}: expected a 2-D nested array, got {m.ndim} dimensions")
    m.flags.writeable = False
    return m


@dataclass(frozen=True)
class PlantModel:
    A: np.ndarray
    B2: np.ndarray

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {self.A.shape}")
        if self.B2.shape[0] != n:
            raise DimensionMismatch(f"B2 must have {n} rows, got {self.B2.shape}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m_w(self) -> int:
        return self.B2.shape[1]


@dataclass(frozen=True)
class SensorModel:
    """Measurement ``y = C x + D2 w + D2bar v`` and consensus output map ``H``."""

    C: np.ndarray
    D2: np.ndarray
    D2bar: np.ndarray
    H: np.ndarray

    @property
    def m_y(self) -> int:
        return self.C.shape[0]

    @property
    def m_v(self) -> int:
        return self.D2bar.shape[1]

    def check(self, plant: PlantModel, node: int) -> None:
        n, m_w = plant.n, plant.m_w
        if self.C.shape[1] != n:
            raise DimensionMismatch(f"node {node}: C has {self.C.shape[1]} columns, plant has n={n}")
        if self.D2.shape != (self.m_y, m_w):
            raise DimensionMismatch(f"node {node}: D2 must be {(self.m_y, m_w)}, got {self.D2.shape}")
        if self.D2bar.shape[0] != self.m_y:
            raise DimensionMismatch(f"node {node}: D2bar must have {self.m_y} rows")
        if self.H.shape[1] != n:
            raise DimensionMismatch(f"node {node}: H must have {n} columns, got {self.H.shape}")

    def stacked_B(self, plant: PlantModel) -> np.ndarray:
        """``[B2 0]``, the disturbance matrix for ``xi_i = [w; v_i]``."""
        return np.hstack([plant.B2, np.zeros((plant.n, self.m_v))])

    def stacked_D(self) -> np.ndarray:
        """``[D2 D2bar]``."""
        return np.hstack([self.D2, self.D2bar])


@dataclass(frozen=True)
class SynthesisOptions:
    """Per-node tuning constants.

    ``pi`` are the neighbour weights of the vector dissipation inequality (not
    the circle constant).  ``gamma=None`` requests gamma minimisation;
    otherwise the program is a feasibility problem at that gamma.
    """

    alpha: tuple
    pi: tuple
    eps: tuple
    epsbar: tuple
    margin: float = 1e-7
    gamma: float | None = None

    def validate(self, graph: ObserverGraph) -> None:
        N = graph.node_count
        for name in ("alpha", "pi", "eps", "epsbar"):
            if len(getattr(self, name)) != N:
                raise DimensionMismatch(f"synthesis.{name} must have {N} entries")
        for i in range(N):
            a, p, e, eb, q = self.alpha[i], self.pi[i], self.eps[i], self.epsbar[i], graph.out_degree[i]
            if not a > 0:
                raise SchemaError(f"alpha_{i + 1} must be positive")
            if p < 0 or (q > 0 and not p < 2 * a / q):
                raise SchemaError(f"pi_{i + 1}={p} violates 0 <= pi < 2 alpha / q = {2 * a / max(q, 1)}")
            if not e > 0:
                raise SchemaError(f"eps_{i + 1} must be positive")
            if eb < 0:
                raise SchemaError(f"epsbar_{i + 1} must be nonnegative")
        if not self.margin > 0:
            raise SchemaError("margin must be positive")
        if self.gamma is not None and not self.gamma > 0:
            raise SchemaError("fixed gamma must be positive")


def default_options(graph: ObserverGraph, alpha=0.1, eps=0.1, epsbar=0.0, pi=None,
                    margin: float = 1e-7, gamma: float | None = None) -> SynthesisOptions:
    N = graph.node_count
    alpha_t = _per_node(alpha, N, "alpha")
    if pi is None:
        pi_t = tuple(2 * a / (1 + q) for a, q in zip(alpha_t, graph.out_degree))
    else:
        pi_t = _per_node(pi, N, "pi")
    return SynthesisOptions(alpha_t, pi_t, _per_node(eps, N, "eps"), _per_node(epsbar, N, "epsbar"),
                            float(margin), None if gamma is None else float(gamma))


def _per_node(value, N: int, name: str) -> tuple:
    if np.isscalar(value):
        return (float(value),) * N
    vals = tuple(float(v) for v in value)
    if len(vals) != N:
        raise DimensionMismatch(f"{name}: expected {N} values, got {len(vals)}")
    return vals


@dataclass(frozen=True)
class GainSet:
    K: tuple
    L: tuple
    P: np.ndarray
    gamma_sq: float


@dataclass(frozen=True)
class Problem:
    plant: PlantModel
    sensors: tuple
    graph: ObserverGraph
    schedule: RoundRobinSchedule
    options: SynthesisOptions
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def N(self) -> int:
        return self.graph.node_count

    def with_period(self, period: float) -> "Problem":
        return replace(self, schedule=node_delays(self.graph, period))

    def with_options(self, **changes) -> "Problem":
        opts = self.options
        N = self.N
        for key in ("alpha", "pi", "eps", "epsbar"):
            if key in changes:
                changes[key] = _per_node(changes[key], N, key)
        if "alpha" in changes and "pi" not in changes:
            changes["pi"] = tuple(2 * a / (1 + q) for a, q in zip(changes["alpha"], self.graph.out_degree))
        opts = replace(opts, **changes)
        opts.validate(self.graph)
        return replace(self, options=opts)


def load_problem(config) -> Problem:
    """Build a validated :class:`Problem` from a dict, JSON string or path.

    Missing ``H`` defaults to the identity; missing ``pi`` defaults to
    ``2 alpha_i / (1 + q_i)``.
    """
    if isinstance(config, (str, Path)):
        if Path(str(config)).exists():
            text = Path(config).read_text()
        elif str(config).lstrip().startswith("{"):
            text = str(config)
        else:
            raise SchemaError(f"config file not found: {config}")
        try:
            config = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise SchemaError("config must be a JSON object")
    for key in ("plant", "sensors", "graph", "schedule"):
        if key not in config:
            raise SchemaError(f"config is missing section {key!r}")

    try:
        plant = PlantModel(_matrix(config["plant"]["A"], "A"), _matrix(config["plant"]["B2"], "B2"))
        graph = build_graph(config["graph"]["nodes"], config["graph"].get("edges", []))
        period = config["schedule"]["period"]
    except KeyError as exc:
        raise SchemaError(f"missing field {exc}") from exc
    schedule = node_delays(graph, period)

    raw_sensors = config["sensors"]
    if len(raw_sensors) != graph.node_count:
        raise DimensionMismatch(f"{len(raw_sensors)} sensors for {graph.node_count} nodes")
    sensors = []
    for i, s in enumerate(raw_sensors, start=1):
        try:
            C = _matrix(s["C"], "C")
        except KeyError as exc:
            raise SchemaError(f"sensor {i}: missing C") from exc
        m_y = C.shape[0]
        D2 = _matrix(s["D2"], "D2") if "D2" in s else np.zeros((m_y, plant.m_w))
        D2bar = _matrix(s["D2bar"], "D2bar") if "D2bar" in s else np.zeros((m_y, 1))
        H = _matrix(s["H"], "H") if "H" in s else np.eye(plant.n)
        sensor = SensorModel(C, D2.reshape(m_y, -1), D2bar.reshape(m_y, -1), H)
        sensor.check(plant, i)
        sensors.append(sensor)

    syn = config.get("synthesis", {})
    gamma = syn.get("gamma", "minimize")
    options = default_options(
        graph,
        alpha=syn.get("alpha", 0.1),
        eps=syn.get("eps", 0.1),
        epsbar=syn.get("epsbar", 0.0),
        pi=syn.get("pi"),
        margin=syn.get("margin", 1e-7),
        gamma=None if gamma in (None, "minimize") else float(gamma),
    )
    options.validate(graph)
    extra = {k: v for k, v in config.items() if k not in ("plant", "sensors", "graph", "schedule", "synthesis")}
    return Problem(plant, tuple(sensors), graph, schedule, options, extra)


def problem_to_config(problem: Problem) -> dict:
    opts = problem.options
    cfg = {
        "plant": {"A": problem.plant.A.tolist(), "B2": problem.plant.B2.tolist()},
        "sensors": [{"C": s.C.tolist(), "D2": s.D2.tolist(), "D2bar": s.D2bar.tolist(), "H": s.H.tolist()}
                    for s in problem.sensors],
        "graph": problem.graph.to_config(),
        "schedule": {"period": problem.schedule.period},
        "synthesis": {
            "alpha": list(opts.alpha), "pi": list(opts.pi), "eps": list(opts.eps),
            "epsbar": list(opts.epsbar), "margin": opts.margin,
            "gamma": "minimize" if opts.gamma is None else opts.gamma,
        },
    }
    cfg.update(problem.extra)
    return cfg


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def detectability_report(plant: PlantModel, sensors, rtol: float = RANK_RTOL) -> list[dict]:
    """PBH test of ``(A, C_i)`` per node.

    Returns one dict per node with ``detectable``, ``observable`` and the
    eigenvalues that fail the rank test at relative tolerance ``rtol``.
    """
    A = plant.A
    n = plant.n
    eigs = np.linalg.eigvals(A)
    report = []
    for i, s in enumerate(sensors, start=1):
        failing = [lam for lam in eigs
                   if numerical_rank(np.vstack([A - lam * np.eye(n), s.C]), rtol) < n]
        report.append({
            "node": i,
            "observable": not failing,
            "detectable": all(lam.real < 0 for lam in failing),
            "unobservable_eigenvalues": [complex(l) for l in failing],
        })
    return report


def chua_config(period: float = 0.1, eps: float = 0.1) -> dict:
    """The three-node Chua-circuit benchmark used in the tests and CLI examples."""
    return {
        "plant": {
            "A": [[-3.2, 10.0, 0.0], [1.0, -1.0, 1.0], [0.0, -14.87, 0.0]],
            "B2": [[-0.1246], [-0.4461], [0.3350]],
        },
        "sensors": [
            {"C": [[0.0032, -0.0047, 0.0010]], "D2": [[0.0]], "D2bar": [[0.025]]},
            {"C": [[-0.8986, 0.1312, -1.9703]], "D2": [[0.0]], "D2bar": [[0.025]]},
            {"C": [[1.0, 0.0, 0.0]], "D2": [[0.0]], "D2bar": [[0.025]]},
        ],
        "graph": {"nodes": 3, "edges": [[2, 1], [1, 2], [3, 2]]},
        "schedule": {"period": period},
        "synthesis": {"alpha": 0.1, "eps": eps, "epsbar": 0.0},
    }
