"""Random problem and variable generators shared by the tests."""
import numpy as np

from rrhinf.lmi import declare_variables
from rrhinf.model import load_problem
from rrhinf.network import build_graph


def random_connected_edges(rng, N, max_p=3):
    while True:
        edges = set()
        for i in range(1, N + 1):
            others = [j for j in range(1, N + 1) if j != i]
            p = rng.integers(0, min(max_p, N - 1) + 1)
            for j in rng.choice(others, size=p, replace=False):
                edges.add((int(j), i))
        try:
            build_graph(N, edges)
            return sorted(edges)
        except Exception:
            continue


def random_problem(rng, n=None, N=None, epsbar=None, period=None):
    n = n or int(rng.integers(1, 5))
    N = N or int(rng.integers(2, 5))
    m_w = int(rng.integers(1, 3))
    sensors = []
    for _ in range(N):
        m_y = int(rng.integers(1, 3))
        m_h = int(rng.integers(1, n + 1))
        sensors.append({
            "C": rng.standard_normal((m_y, n)).tolist(),
            "D2": rng.standard_normal((m_y, m_w)).tolist(),
            "D2bar": rng.standard_normal((m_y, int(rng.integers(1, 3)))).tolist(),
            "H": rng.standard_normal((m_h, n)).tolist(),
        })
    edges = random_connected_edges(rng, N)
    q = [sum(1 for (j, _) in edges if j == i) for i in range(1, N + 1)]
    alpha = rng.uniform(0.05, 0.5, N)
    cfg = {
        "plant": {"A": rng.standard_normal((n, n)).tolist(), "B2": rng.standard_normal((n, m_w)).tolist()},
        "sensors": sensors,
        "graph": {"nodes": N, "edges": [list(e) for e in edges]},
        "schedule": {"period": float(period if period is not None else rng.uniform(0.01, 0.3))},
        "synthesis": {
            "alpha": alpha.tolist(),
            "pi": [float(rng.uniform(0, 2 * a / qq)) if qq else 0.3 for a, qq in zip(alpha, q)],
            "eps": rng.uniform(0.05, 1.0, N).tolist(),
            "epsbar": (rng.uniform(0.0, 1.0, N) if epsbar is None else np.full(N, epsbar)).tolist(),
        },
    }
    return load_problem(cfg)


def random_values(rng, problem):
    values = {}
    for name, var in declare_variables(problem).items():
        r, c = var.shape
        if name == "theta":
            values[name] = np.array([[rng.uniform(0.1, 3.0)]])
        elif name.startswith("X"):
            values[name] = 2.0 * np.eye(r) + 0.5 * rng.standard_normal((r, c))
        elif var.symmetric:
            M = rng.standard_normal((r, r))
            values[name] = M @ M.T + 0.1 * np.eye(r)
        else:
            values[name] = rng.standard_normal((r, c))
    return values
