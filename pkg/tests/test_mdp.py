from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from mixlab.mdp import (TabularMdp, action_gaps, bellman_operator, bellman_residual, deterministic_mdp,
                        evaluate_policy_exact, exact_variance_report, greedy_policy, optimality_gap,
                        optimality_gap_by_enumeration, policy_kernel, policy_operator, random_mdp,
                        solve_exact, solve_value_iteration, span_seminorm, sup_norm, validate_policy)

from conftest import small_mdps


# -- construction ---------------------------------------------------------------

def test_rejects_bad_inputs():
    K = np.full((2, 1, 2), 0.5)
    r = np.zeros((2, 1))
    with pytest.raises(ValueError):
        TabularMdp(r, K, 1.0)
    with pytest.raises(ValueError):
        TabularMdp(r, K * 1.1, 0.9)
    with pytest.raises(ValueError):
        TabularMdp(np.zeros((3, 1)), K, 0.9)
    bad = K.copy()
    bad[0, 0] = [1.5, -0.5]
    with pytest.raises(ValueError):
        TabularMdp(r, bad, 0.9)


def test_arrays_are_read_only(small_mdp):
    with pytest.raises(ValueError):
        small_mdp.reward[0, 0] = 5.0
    with pytest.raises(ValueError):
        small_mdp.kernel[0, 0, 0] = 5.0


def test_validate_policy(small_mdp):
    assert validate_policy(small_mdp, [0, 1, 1]).dtype == np.int64
    for bad in ([0, 1], [0, 2, 0], [0.5, 0, 0], [-1, 0, 0]):
        with pytest.raises(ValueError):
            validate_policy(small_mdp, bad)


def test_greedy_ties_go_to_lowest_index():
    q = np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]])
    assert greedy_policy(q).tolist() == [0, 1]


def test_span_and_sup():
    assert span_seminorm([3.0, -1.0, 2.0]) == 4.0
    assert sup_norm([3.0, -5.0]) == 5.0
    with pytest.raises(ValueError):
        span_seminorm([])


def test_deterministic_mdp_values():
    # two-cycle 0 -> 1 -> 0 with reward 1 in state 0: v(0) = 1/(1-g^2)
    g = 0.9
    mdp = deterministic_mdp(np.array([[1], [0]]), np.array([[1.0], [0.0]]), g)
    v, _, _ = solve_exact(mdp)
    assert v[0] == pytest.approx(1.0 / (1.0 - g * g), rel=1e-12)
    assert v[1] == pytest.approx(g / (1.0 - g * g), rel=1e-12)


def test_policy_operator_matches_definition(small_mdp):
    pi = np.array([1, 0, 1])
    q = np.arange(6, dtype=float).reshape(3, 2)
    direct = small_mdp.kernel @ q[np.arange(3), pi]
    assert np.allclose((policy_operator(small_mdp, pi) @ q.ravel()).reshape(3, 2), direct)
    assert np.allclose(policy_kernel(small_mdp, pi), small_mdp.kernel[np.arange(3), pi])


# -- solvers against an independent LP oracle --------------------------------------

def lp_values(mdp: TabularMdp) -> np.ndarray:
    """min sum v  s.t.  v(s) >= r(s,a) + g P_{s,a} v  for all (s,a)."""
    S, A = mdp.n_states, mdp.n_actions
    a_ub, b_ub = [], []
    for s, a in itertools.product(range(S), range(A)):
        row = mdp.gamma * mdp.kernel[s, a].copy()
        row[s] -= 1.0
        a_ub.append(row)
        b_ub.append(-mdp.reward[s, a])
    res = linprog(np.ones(S), A_ub=np.array(a_ub), b_ub=np.array(b_ub), bounds=[(None, None)] * S,
                  method="highs", options={"primal_feasibility_tolerance": 1e-10,
                                           "dual_feasibility_tolerance": 1e-10})
    assert res.success
    return res.x


@given(small_mdps())
def test_solve_exact_matches_lp(mdp):
    v, q, pi = solve_exact(mdp)
    assert np.allclose(v, lp_values(mdp), atol=1e-6 / (1 - mdp.gamma))
    assert bellman_residual(mdp, q) <= 1e-9
    assert np.array_equal(pi, greedy_policy(q))


@given(small_mdps(gammas=(0.9, 0.99, 0.999)))
def test_value_iteration_agrees_with_policy_iteration(mdp):
    _, q_vi, _ = solve_value_iteration(mdp, tol=1e-8)
    _, q_pi, _ = solve_exact(mdp)
    assert sup_norm(q_vi - q_pi) <= 1e-8


@given(small_mdps(), st.integers(0, 2**31 - 1))
def test_bellman_is_gamma_contraction(mdp, seed):
    rng = np.random.default_rng(seed)
    q1, q2 = rng.normal(size=(2,) + mdp.reward.shape) * 5
    lhs = sup_norm(bellman_operator(mdp, q1) - bellman_operator(mdp, q2))
    assert lhs <= mdp.gamma * sup_norm(q1 - q2) + 1e-12


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=10), st.floats(-1e6, 1e6))
def test_span_is_shift_invariant(xs, c):
    x = np.array(xs)
    assert span_seminorm(x + c) == pytest.approx(span_seminorm(x), abs=1e-6)
    assert span_seminorm(x) <= 2 * sup_norm(x)


def test_vi_tolerance_validation(small_mdp):
    with pytest.raises(ValueError):
        solve_value_iteration(small_mdp, tol=0.0)


# -- variance quantities ---------------------------------------------------------

def second_moment_variance(mdp: TabularMdp, pi) -> np.ndarray:
    """Return variance from the second-moment recursion (a different route)."""
    S = mdp.n_states
    idx = np.arange(S)
    v, q = evaluate_policy_exact(mdp, pi)
    g, P, r = mdp.gamma, mdp.kernel, mdp.reward
    P_pi, r_pi = P[idx, pi], r[idx, pi]
    m2_pi = np.linalg.solve(np.eye(S) - g * g * P_pi, r_pi**2 + 2 * g * r_pi * (P_pi @ v))
    m2 = r**2 + 2 * g * r * (P @ v) + g * g * (P @ m2_pi)
    return m2 - q**2


@given(small_mdps(), st.integers(0, 10**6))
def test_return_variance_two_routes(mdp, seed):
    pi = np.random.default_rng(seed).integers(0, mdp.n_actions, mdp.n_states)
    rep = exact_variance_report(mdp, pi)
    oracle = second_moment_variance(mdp, pi)
    assert np.allclose(rep.psi_pi, oracle, atol=1e-8 * max(1.0, np.abs(oracle).max()))


@given(small_mdps())
def test_sigma_qstar_equals_sigma_pistar(mdp):
    _, _, pi = solve_exact(mdp)
    rep = exact_variance_report(mdp, pi)
    assert np.allclose(rep.sigma_qstar, rep.sigma_pi, atol=1e-9)


@given(small_mdps())
def test_nu_below_weighted_sigma(mdp):
    # sqrt(sum_j U_ij^2 s_j^2) <= sum_j U_ij s_j because U >= 0
    _, _, pi = solve_exact(mdp)
    rep = exact_variance_report(mdp, pi)
    u = np.linalg.inv(np.eye(mdp.n_pairs) - mdp.gamma * policy_operator(mdp, pi))
    bound = (u @ rep.sigma_qstar.ravel()).reshape(mdp.reward.shape)
    assert np.all(np.sqrt(rep.nu_sq) <= bound + 1e-9)


def enumerated_nu_sq(mdp: TabularMdp, pi) -> np.ndarray:
    """Exact covariance of U (T_hat q* - T q*) by enumerating joint next-state draws."""
    _, q = evaluate_policy_exact(mdp, pi)
    S, n = mdp.n_states, mdp.n_pairs
    u = np.linalg.inv(np.eye(n) - mdp.gamma * policy_operator(mdp, pi))
    t_q = bellman_operator(mdp, q).ravel()
    v = q.max(axis=1)
    rows = mdp.kernel.reshape(n, S)
    second = np.zeros(n)
    for outcome in itertools.product(range(S), repeat=n):
        w = math.prod(rows[i, s] for i, s in enumerate(outcome))
        t_hat = mdp.reward.ravel() + mdp.gamma * v[list(outcome)]
        z = u @ (t_hat - t_q)
        second += w * z * z
    return second.reshape(mdp.reward.shape)


def test_nu_sq_matches_enumeration():
    rng = np.random.default_rng(3)
    for n_s, n_a in ((2, 2), (3, 1), (2, 3)):
        mdp = random_mdp(n_s, n_a, 0.8, rng)
        _, _, pi = solve_exact(mdp)
        rep = exact_variance_report(mdp, pi)
        assert np.allclose(rep.nu_sq, enumerated_nu_sq(mdp, pi), rtol=1e-9, atol=1e-12)


# -- optimality gap ---------------------------------------------------------------

@given(small_mdps(max_states=3, max_actions=3))
def test_optimality_gap_matches_enumeration(mdp):
    fast = optimality_gap(mdp)
    slow = optimality_gap_by_enumeration(mdp)
    if math.isinf(slow):
        assert math.isinf(fast)
    else:
        assert fast == pytest.approx(slow, rel=1e-7, abs=1e-10)


def test_optimality_gap_all_optimal_is_inf():
    K = np.full((2, 2, 2), 0.5)
    mdp = TabularMdp(np.ones((2, 2)), K, 0.9)
    assert math.isinf(optimality_gap(mdp))
    assert np.all(action_gaps(solve_exact(mdp)[1]) <= 1e-12)
