"""Tabular discounted MDPs: exact Bellman solvers, policies and variance quantities.

Conventions used throughout the package:

* a Q-function is a dense ``(n_states, n_actions)`` float array,
* a value function is a dense ``(n_states,)`` float array,
* a policy is an ``(n_states,)`` integer array of action indices,
* state-action pairs are flattened row-major, ``index = s * n_actions + a``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

KERNEL_TOL = 1e-12
TIE_TOL = 1e-10


class NumericalFailure(RuntimeError):
    """A linear solve or fixed-point computation missed its residual target."""


def _readonly(x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP ``(S, A, r, P, gamma)`` with rewards in ``[0, 1]``.

    ``kernel[s, a]`` is the next-state distribution of the pair ``(s, a)``.
    Arrays are copied and frozen at construction.
    """

    reward: np.ndarray
    kernel: np.ndarray
    gamma: float
    name: str = field(default="mdp", compare=False)

    def __post_init__(self) -> None:
        reward = np.array(self.reward, dtype=np.float64)
        kernel = np.array(self.kernel, dtype=np.float64)
        if reward.ndim != 2:
            raise ValueError(f"reward must be 2-d (n_states, n_actions), got shape {reward.shape}")
        n_s, n_a = reward.shape
        if n_s < 1 or n_a < 1:
            raise ValueError("need at least one state and one action")
        if kernel.shape != (n_s, n_a, n_s):
            raise ValueError(f"kernel shape {kernel.shape} does not match {(n_s, n_a, n_s)}")
        if not np.all(np.isfinite(reward)) or reward.min() < 0.0 or reward.max() > 1.0:
            raise ValueError("rewards must lie in [0, 1]")
        if not np.all(np.isfinite(kernel)) or kernel.min() < 0.0:
            raise ValueError("kernel entries must be finite and nonnegative")
        row_err = np.abs(kernel.sum(axis=2) - 1.0).max()
        if row_err > KERNEL_TOL:
            raise ValueError(f"kernel rows must sum to 1 (max deviation {row_err:.3e})")
        gamma = float(self.gamma)
        if not 0.0 < gamma < 1.0:
            raise ValueError(f"gamma must lie strictly inside (0, 1), got {gamma}")
        object.__setattr__(self, "reward", _readonly(reward))
        object.__setattr__(self, "kernel", _readonly(kernel))
        object.__setattr__(self, "gamma", gamma)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    def __repr__(self) -> str:
        return (f"TabularMdp(name={self.name!r}, n_states={self.n_states}, "
                f"n_actions={self.n_actions}, gamma={self.gamma})")


@dataclass(frozen=True)
class VarianceReport:
    """Exact second-order quantities of a policy.

    psi_pi: variance of the discounted return from each ``(s, a)``.
    sigma_pi: one-step std of ``q^pi(S', pi(S'))`` times ``gamma``.
    sigma_qstar: one-sample Bellman std at the policy's own Q-function.
    weighted_sigma_norm: ``||(I - gamma P^pi)^{-1} sigma_pi||_inf``.
    nu_sq: local minimax parameter, ``diag(U D U^T)`` with ``D = diag(sigma_qstar^2)``.
    """

    psi_pi: np.ndarray
    sigma_pi: np.ndarray
    sigma_qstar: np.ndarray
    weighted_sigma_norm: float
    nu_sq: np.ndarray


# ---------------------------------------------------------------------------
# policies and operators


def validate_policy(mdp: TabularMdp, pi) -> np.ndarray:
    pi = np.asarray(pi)
    if pi.shape != (mdp.n_states,):
        raise ValueError(f"policy must have shape ({mdp.n_states},), got {pi.shape}")
    if not np.issubdtype(pi.dtype, np.integer):
        if not np.all(np.equal(np.mod(pi, 1), 0)):
            raise ValueError("policy entries must be integer action indices")
    pi = pi.astype(np.int64)
    if pi.min() < 0 or pi.max() >= mdp.n_actions:
        raise ValueError("policy entries must be valid action indices")
    return pi


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest action index."""
    return np.argmax(q, axis=1).astype(np.int64)


def state_values(q: np.ndarray) -> np.ndarray:
    return q.max(axis=1)


def policy_kernel(mdp: TabularMdp, pi) -> np.ndarray:
    """State-to-state kernel ``P_pi(s, s') = P_{s, pi(s)}(s')``."""
    pi = validate_policy(mdp, pi)
    return mdp.kernel[np.arange(mdp.n_states), pi]


def policy_operator(mdp: TabularMdp, pi) -> np.ndarray:
    """Matrix of ``P^pi`` on flattened pairs: ``(P^pi q)(s,a) = sum_s' P_{s,a}(s') q(s', pi(s'))``."""
    pi = validate_policy(mdp, pi)
    n_s, n_a = mdp.n_states, mdp.n_actions
    op = np.zeros((n_s * n_a, n_s * n_a))
    cols = np.arange(n_s) * n_a + pi
    op[:, cols] = mdp.kernel.reshape(n_s * n_a, n_s)
    return op


def bellman_operator(mdp: TabularMdp, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != mdp.reward.shape:
        raise ValueError(f"q has shape {q.shape}, expected {mdp.reward.shape}")
    return mdp.reward + mdp.gamma * (mdp.kernel @ q.max(axis=1))


def span_seminorm(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("span of an empty array is undefined")
    return float(x.max() - x.min())


def sup_norm(x) -> float:
    return float(np.abs(np.asarray(x, dtype=np.float64)).max())


# ---------------------------------------------------------------------------
# solvers


def solve_value_iteration(mdp: TabularMdp, tol: float = 1e-10, max_iter: int | None = None):
    """Iterate the Bellman operator until the sup-norm error is below ``tol``.

    Stops once successive iterates differ by at most ``tol (1-gamma) / (2 gamma)``,
    which bounds both ``||q - q*||`` and ``||q - T q|| / (1-gamma)`` by ``tol``.

    Returns ``(v, q, pi)`` with ``pi`` greedy in ``q``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    g = mdp.gamma
    # below a few ulps of ||q*|| <= 1/(1-g) the gap cannot shrink further
    threshold = max(tol * (1.0 - g) / (2.0 * g), 16 * np.finfo(float).eps / (1.0 - g))
    if max_iter is None:
        # geometric contraction from ||q0 - q*|| <= 1/(1-g)
        max_iter = int(math.ceil(math.log(threshold * (1.0 - g)) / math.log(g))) + 10
    q = np.zeros_like(mdp.reward)
    for _ in range(max_iter):
        q_next = bellman_operator(mdp, q)
        gap = sup_norm(q_next - q)
        q = q_next
        if gap <= threshold:
            break
    else:
        raise NumericalFailure("value iteration did not reach its stopping rule")
    return q.max(axis=1), q, greedy_policy(q)


def _solve_checked(a: np.ndarray, b: np.ndarray, tol: float, what: str) -> np.ndarray:
    x = np.linalg.solve(a, b)
    resid = np.abs(a @ x - b).max()
    if not np.isfinite(resid) or resid > tol * max(1.0, np.abs(x).max()):
        raise NumericalFailure(f"{what}: residual {resid:.3e} exceeds {tol:.1e}")
    return x


def evaluate_policy_exact(mdp: TabularMdp, pi):
    """Solve ``(I - gamma P_pi) v = r_pi`` and assemble ``q^pi = r + gamma P v``."""
    pi = validate_policy(mdp, pi)
    idx = np.arange(mdp.n_states)
    p_pi = mdp.kernel[idx, pi]
    r_pi = mdp.reward[idx, pi]
    a = np.eye(mdp.n_states) - mdp.gamma * p_pi
    v = _solve_checked(a, r_pi, 1e-10, "policy evaluation")
    q = mdp.reward + mdp.gamma * (mdp.kernel @ v)
    return v, q


def solve_exact(mdp: TabularMdp, max_iter: int = 1000):
    """Optimal ``(v*, q*, pi*)`` by policy iteration with exact linear solves.

    Seeded by a coarse value-iteration policy; improvement only switches an
    action when it beats the current one by more than round-off, so the loop
    terminates and ties resolve to the lowest optimal index at the end.
    """
    _, _, pi = solve_value_iteration(mdp, tol=1e-6)
    for _ in range(max_iter):
        v, q = evaluate_policy_exact(mdp, pi)
        scale = 1e-12 * max(1.0, float(np.abs(q).max()))
        current = q[np.arange(mdp.n_states), pi]
        better = q.max(axis=1) > current + scale
        if not better.any():
            break
        pi = np.where(better, greedy_policy(q), pi)
    else:
        raise NumericalFailure("policy iteration did not stabilise")
    return v, q, greedy_policy(q)


def bellman_residual(mdp: TabularMdp, q: np.ndarray) -> float:
    return sup_norm(q - bellman_operator(mdp, q))


# ---------------------------------------------------------------------------
# variance quantities


def one_sample_variance(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    """``gamma^2 (P[v^2] - P[v]^2)`` for every pair, clipped at zero."""
    mean = mdp.kernel @ v
    second = mdp.kernel @ (v * v)
    return np.maximum(mdp.gamma**2 * (second - mean * mean), 0.0)


def exact_variance_report(mdp: TabularMdp, pi) -> VarianceReport:
    pi = validate_policy(mdp, pi)
    g = mdp.gamma
    n = mdp.n_pairs
    v_pi, q_pi = evaluate_policy_exact(mdp, pi)

    # sigma^pi uses q^pi(s', pi(s')) = v^pi(s'); sigma(q) uses max_b q^pi(s', b)
    sigma_pi_sq = one_sample_variance(mdp, v_pi)
    sigma_q_sq = one_sample_variance(mdp, q_pi.max(axis=1))

    op = policy_operator(mdp, pi)
    psi = _solve_checked(np.eye(n) - g * g * op, sigma_pi_sq.ravel(), 1e-8, "return variance")
    u = np.linalg.inv(np.eye(n) - g * op)
    if np.abs((np.eye(n) - g * op) @ u - np.eye(n)).max() > 1e-8:
        raise NumericalFailure("resolvent inverse inaccurate")
    sigma_pi = np.sqrt(sigma_pi_sq)
    weighted = float(np.abs(u @ sigma_pi.ravel()).max())
    nu_sq = (u * u) @ sigma_q_sq.ravel()

    shape = mdp.reward.shape
    return VarianceReport(
        psi_pi=np.maximum(psi, 0.0).reshape(shape),
        sigma_pi=sigma_pi,
        sigma_qstar=np.sqrt(sigma_q_sq),
        weighted_sigma_norm=weighted,
        nu_sq=nu_sq.reshape(shape),
    )


# ---------------------------------------------------------------------------
# optimality gap


def action_gaps(q_star: np.ndarray) -> np.ndarray:
    return q_star.max(axis=1, keepdims=True) - q_star


def optimality_gap(mdp: TabularMdp, q_star: np.ndarray | None = None, tie_tol: float = TIE_TOL) -> float:
    """Smallest ``||q* - (r + gamma P^pi q*)||_inf`` over non-optimal deterministic policies.

    Since ``q* - T^pi q* = gamma P_{s,a}[v* - q*(., pi(.))]`` has nonnegative
    entries, the minimum is attained by a policy deviating at a single state
    ``s'`` with a single sub-optimal action ``b``, giving
    ``gamma * gap(s', b) * max_{s,a} P_{s,a}(s')``.  Actions within ``tie_tol``
    of the maximum count as optimal.  Returns ``inf`` when every policy is optimal.
    """
    if q_star is None:
        _, q_star, _ = solve_exact(mdp)
    gaps = action_gaps(q_star)
    suboptimal = gaps > tie_tol
    if not suboptimal.any():
        return math.inf
    reach = mdp.kernel.max(axis=(0, 1))
    cand = mdp.gamma * gaps * reach[:, None]
    return float(cand[suboptimal].min())


def optimality_gap_by_enumeration(mdp: TabularMdp, q_star: np.ndarray | None = None,
                                  tie_tol: float = TIE_TOL) -> float:
    """Reference implementation enumerating all deterministic policies."""
    if q_star is None:
        _, q_star, _ = solve_exact(mdp)
    v_star = q_star.max(axis=1)
    best = math.inf
    for actions in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        pi = np.array(actions)
        v_pi, _ = evaluate_policy_exact(mdp, pi)
        if np.abs(v_pi - v_star).max() <= tie_tol * max(1.0, np.abs(v_star).max()):
            continue
        t_pi = mdp.reward + mdp.gamma * (policy_operator(mdp, pi) @ q_star.ravel()).reshape(q_star.shape)
        best = min(best, sup_norm(q_star - t_pi))
    return best


# ---------------------------------------------------------------------------
# constructors


def random_mdp(n_states: int, n_actions: int, gamma: float, rng: np.random.Generator,
               concentration: float = 1.0, name: str = "random") -> TabularMdp:
    """Dirichlet kernel rows and uniform rewards."""
    kernel = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    # renormalise so rows pass the 1e-12 stochasticity check exactly
    kernel /= kernel.sum(axis=2, keepdims=True)
    reward = rng.uniform(size=(n_states, n_actions))
    return TabularMdp(reward, kernel, gamma, name=name)


def deterministic_mdp(successor: np.ndarray, reward: np.ndarray, gamma: float,
                      name: str = "deterministic") -> TabularMdp:
    successor = np.asarray(successor, dtype=np.int64)
    n_s, n_a = successor.shape
    kernel = np.zeros((n_s, n_a, n_s))
    kernel[np.arange(n_s)[:, None], np.arange(n_a)[None, :], successor] = 1.0
    return TabularMdp(reward, kernel, gamma, name=name)
