import numpy as np
import pytest

from helpers import random_problem, random_values
from rrhinf.errors import EmptyNeighbourhood, NonPositiveGap, PartitionMismatch
from rrhinf.lmi import (WIRTINGER_COEFF, block_layout, build_Phi_bar, build_Psi, build_Psi_bar,
                        build_Psi_tilde, build_T, build_Xi_analysis, build_Xi_synthesis,
                        declare_variables, lemma1_lhs, lemma1_rhs, park_constraint, partition3)


def _park_feasible_pair(rng, n):
    # [[R, G], [G', R]] >= 0  iff  |R^-1/2 G R^-1/2| <= 1; take G = R^1/2 C R^1/2 with |C| <= 1
    F = rng.standard_normal((n, n))
    R = F @ F.T + 1e-3 * np.eye(n)
    w, V = np.linalg.eigh(R)
    Rh = V @ np.diag(np.sqrt(w)) @ V.T
    C = rng.standard_normal((n, n))
    C *= rng.uniform(0.0, 1.0) / np.linalg.norm(C, 2)
    return R, Rh @ C @ Rh


def test_build_T_is_successive_difference():
    T = build_T(2, 1)
    np.testing.assert_array_equal(T, [[1, -1, 0, 0], [0, 1, -1, 0], [0, 0, 1, -1]])
    assert build_T(3, 2).shape == (8, 10)


def test_build_Psi_structure(rng):
    R, G = _park_feasible_pair(rng, 2)
    Psi = build_Psi(R, G, 2)
    assert Psi.shape == (6, 6)
    np.testing.assert_allclose(Psi[:2, :2], R)
    np.testing.assert_allclose(Psi[2:4, 4:6], 0.5 * (G + G.T))
    np.testing.assert_allclose(Psi, Psi.T)


def test_park_feasible_generator_is_psd(rng):
    for _ in range(50):
        R, G = _park_feasible_pair(rng, 3)
        assert np.linalg.eigvalsh(park_constraint(R, G))[0] > -1e-10


def test_lemma1_monte_carlo(rng):
    worst = np.inf
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        p = int(rng.integers(1, 5))
        R, G = _park_feasible_pair(rng, n)
        gaps = rng.dirichlet(np.ones(p + 1)) * rng.uniform(0.01, 2.0)
        delta = rng.standard_normal((p + 1) * n)
        lhs = lemma1_lhs(R, delta, gaps)
        rhs = lemma1_rhs(build_Psi(R, G, p), delta)
        worst = min(worst, lhs - rhs + 1e-10)
    assert worst >= 0


def test_lemma1_equal_gaps_and_zero_G_is_jensen(rng):
    # with G = 0 and equal gaps the bound is exact: tau sum |d|^2/(tau/m) = m sum |d|^2 >= sum |d|^2
    R = np.eye(2)
    delta = rng.standard_normal(6)
    assert lemma1_lhs(R, delta, [0.1, 0.1, 0.1]) == pytest.approx(3 * delta @ delta)
    assert lemma1_rhs(build_Psi(R, np.zeros((2, 2)), 2), delta) == pytest.approx(delta @ delta)


def test_lemma1_rejects_nonpositive_gap():
    with pytest.raises(NonPositiveGap):
        lemma1_lhs(np.eye(1), [1.0, 1.0], [0.5, 0.0])


def test_partition_and_psi_tilde(rng):
    n, p, alpha, tau = 2, 1, 0.3, 0.4
    R, G = _park_feasible_pair(rng, n)
    Y = np.eye(n)
    S = 2 * np.eye(n)
    Pb = build_Psi_bar(R, G, p, n, alpha, tau)
    # p = 1: T = [[I, -I, 0], [0, I, -I]], Psi = [[R, Gs], [Gs, R]]
    Gs = 0.5 * (G + G.T)
    T = np.block([[np.eye(n), -np.eye(n), np.zeros((n, n))], [np.zeros((n, n)), np.eye(n), -np.eye(n)]])
    np.testing.assert_allclose(Pb, np.exp(-2 * alpha * tau) * T.T @ np.block([[R, Gs], [Gs, R]]) @ T)
    parts = partition3(build_Psi_tilde(Pb, Y, S, alpha, tau, n, p), n, p)
    P0 = partition3(Pb, n, p)
    np.testing.assert_allclose(parts["11"], P0["11"] - 2 * alpha * Y - S)
    np.testing.assert_allclose(parts["33"], P0["33"] + np.exp(-2 * alpha * tau) * S)
    np.testing.assert_allclose(parts["12"], P0["12"])
    with pytest.raises(PartitionMismatch):
        partition3(np.eye(5), n, p)


def test_phi_bar_blocks():
    Y = {2: np.eye(1), 5: 2 * np.eye(1)}
    W = {2: 3 * np.eye(1), 5: np.eye(1)}
    pi = {2: 0.1, 5: 0.2}
    P11, P12, P22 = build_Phi_bar([2, 5], Y, W, pi)
    np.testing.assert_allclose(np.diag(P11), [0.1 + 3 * WIRTINGER_COEFF, 0.4 + WIRTINGER_COEFF])
    np.testing.assert_allclose(P12, -P22)
    np.testing.assert_allclose(np.diag(P22), [3 * WIRTINGER_COEFF, WIRTINGER_COEFF])
    with pytest.raises(EmptyNeighbourhood):
        build_Phi_bar([], {}, {}, {})


def test_block_layout():
    lay = block_layout(3, 2, 2)
    assert lay.dim == 3 + 3 + 6 + 3 + 6 + 6 + 2
    assert lay.slice("e_delayed") == slice(12, 15)
    assert block_layout(3, 0, 2).names == ("edot", "e", "xi")


def test_synthesis_matrix_is_symmetric(rng):
    for _ in range(10):
        prob = random_problem(rng)
        variables = declare_variables(prob)
        for i in range(1, prob.N + 1):
            Xi = build_Xi_synthesis(prob, i, variables)
            assert Xi.asymmetry() < 1e-12
            m_xi = prob.sensors[i - 1].stacked_B(prob.plant).shape[1]
            assert Xi.shape[0] == block_layout(prob.plant.n, prob.graph.p(i), m_xi).dim


def test_substitution_identity_random_instances(rng):
    # the analysis matrix at Z = eps X, Q = epsbar X and recovered gains equals the synthesis matrix
    checked = 0
    while checked < 50:
        prob = random_problem(rng)
        values = random_values(rng, prob)
        variables = declare_variables(prob)
        gamma = 1.0 / np.sqrt(values["theta"][0, 0])
        opts = prob.options
        for i in range(1, prob.N + 1):
            X = values[f"X{i}"]
            L = np.linalg.solve(X.T, values[f"U{i}"])
            K = (np.linalg.solve(X.T, values[f"F{i}"]) if f"F{i}" in values
                 else np.zeros((prob.plant.n, prob.sensors[i - 1].H.shape[0])))
            analysis = build_Xi_analysis(prob, i, values, X, opts.eps[i - 1] * X, opts.epsbar[i - 1] * X,
                                         K, L, gamma)
            synthesis = build_Xi_synthesis(prob, i, variables).evaluate(values)
            scale = max(1.0, np.max(np.abs(synthesis)))
            assert np.max(np.abs(analysis - synthesis)) <= 1e-12 * scale * max(1.0, np.linalg.cond(X))
            checked += 1
            if checked == 50:
                break


def test_fixed_gamma_makes_theta_constant(rng):
    prob = random_problem(rng).with_options(gamma=2.0)
    variables = declare_variables(prob)
    assert "theta" not in variables
    Xi = build_Xi_synthesis(prob, 1, variables)
    assert "theta" not in Xi.terms
