"""Split-chain simulation with explicit regeneration coins, and the
Monte-Carlo checks built on it.

Given a certificate ``P^m = p psi + (1 - p) R`` the chain is simulated in
blocks of ``m`` steps.  At each block boundary a coin with success
probability ``p`` is flipped: on success the block end is drawn from ``psi``
(a regeneration), otherwise from ``R(current, .)``.  The ``m - 1`` interior
states are then filled in from the exact bridge law of the original chain
conditioned on both block endpoints, so the path has the law of ``P``.

Random streams: paths are simulated in fixed-size chunks and chunk ``c`` of a
run with seed ``seed`` draws from ``SeedSequence([seed, c])``, so results do
not depend on how chunks are scheduled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .mdp import TabularMdp, policy_kernel, validate_policy
from .mixing import DoeblinDecomposition, MatrixPowers, check_kernel
from .stats import Estimate, dependent_mean_estimate, mean_estimate, variance_estimate

CHUNK_PATHS = 4096
TAIL_TOL = 1e-6


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(chunk)])))


def _cdf(weights: np.ndarray) -> np.ndarray:
    """Row-wise CDF whose last entry is exactly 1."""
    c = np.cumsum(weights, axis=-1)
    c /= c[..., -1:]
    c[..., -1] = 1.0
    return c


def truncation_horizon(gamma: float, tol: float = TAIL_TOL) -> int:
    """Smallest ``H`` with ``gamma^H / (1 - gamma) <= tol``."""
    return max(1, int(math.ceil(math.log(tol * (1.0 - gamma)) / math.log(gamma))))


class SplitChainSampler:
    """Precomputed sampling tables for one certified decomposition."""

    def __init__(self, decomp: DoeblinDecomposition, P) -> None:
        P = check_kernel(P)
        if decomp.n_states != P.shape[0]:
            raise ValueError("decomposition and kernel sizes differ")
        powers = MatrixPowers(P)
        err = decomp.reconstruction_error(P, powers)
        if err > 1e-10:
            raise ValueError(f"decomposition does not certify the kernel (error {err:.3e})")
        self.decomp = decomp
        self.P = P
        n, m = P.shape[0], decomp.m
        self.m = m
        self.n_states = n
        self.cdf_psi = _cdf(decomp.psi)
        self.cdf_r = _cdf(decomp.residual)
        # bridge[k-1, y, z, x] = P(y, x) P^{m-k}(x, z) / P^{m-k+1}(y, z)
        self.cdf_bridge = np.empty((max(m - 1, 0), n, n, n))
        self.bridge_ok = np.zeros((max(m - 1, 0), n, n), dtype=np.bool_)
        for k in range(1, m):
            ahead = powers[m - k]
            weights = P[:, None, :] * ahead.T[None, :, :]  # [y, z, x]
            total = weights.sum(axis=2)
            ok = total > 0.0
            safe = np.where(ok[..., None], weights, 1.0)
            self.cdf_bridge[k - 1] = _cdf(safe)
            self.bridge_ok[k - 1] = ok

    def paths(self, starts, n_blocks: int, rng: np.random.Generator):
        """Simulate ``len(starts)`` paths of ``n_blocks * m`` steps.

        Returns ``states`` of shape ``(n_paths, n_blocks * m + 1)`` and
        boolean ``coins`` of shape ``(n_paths, n_blocks)``.
        """
        starts = np.ascontiguousarray(starts, dtype=np.int64)
        return kernels.split_chain_paths(self.cdf_psi, self.cdf_r, self.cdf_bridge, self.bridge_ok,
                                         self.m, self.decomp.p, starts, int(n_blocks), rng)


@dataclass(frozen=True, eq=False)
class RegenerationTrace:
    states: np.ndarray
    coins: np.ndarray
    regen_times: np.ndarray
    horizon: int
    m: int

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.regen_times)


def _resolve_start(start, n: int, rng: np.random.Generator) -> int:
    arr = np.asarray(start)
    if arr.ndim == 0:
        s = int(arr)
        if not 0 <= s < n:
            raise ValueError("start state out of range")
        return s
    dist = np.asarray(start, dtype=np.float64)
    if dist.shape != (n,) or dist.min() < 0 or abs(dist.sum() - 1.0) > 1e-12:
        raise ValueError("start distribution invalid")
    return int(np.searchsorted(_cdf(dist), rng.random(), side="right"))


def simulate_split_chain(decomp: DoeblinDecomposition, P, start, horizon: int,
                         seed: int) -> RegenerationTrace:
    if horizon < decomp.m:
        raise ValueError("horizon must be at least m")
    sampler = SplitChainSampler(decomp, P)
    rng = chunk_rng(seed, 0)
    s0 = _resolve_start(start, sampler.n_states, rng)
    n_blocks = -(-horizon // decomp.m)
    states, coins = sampler.paths(np.array([s0]), n_blocks, rng)
    ends = (np.flatnonzero(coins[0]) + 1) * decomp.m
    regen = np.concatenate([[0], ends[ends <= horizon]]).astype(np.int64)
    n_coins = horizon // decomp.m
    return RegenerationTrace(states[0, :horizon + 1].copy(), coins[0, :n_coins].copy(),
                             regen, int(horizon), decomp.m)


# ---------------------------------------------------------------------------
# regeneration cycles


@dataclass(frozen=True, eq=False)
class CycleStats:
    """Per-cycle summaries of regeneration cycles ``W_j``, ``j >= 2``.

    ``lengths``, ``rewards`` (discounted reward within the cycle ``g(W)``)
    and ``regen_states`` are concatenated over paths; ``path_index`` says
    which path each cycle came from, in order.
    """

    lengths: np.ndarray
    rewards: np.ndarray
    regen_states: np.ndarray
    path_index: np.ndarray
    gamma: float
    m: int
    p: float

    @property
    def n_cycles(self) -> int:
        return int(self.lengths.size)

    def _groups(self, x: np.ndarray):
        cuts = np.flatnonzero(np.diff(self.path_index)) + 1
        return np.split(x, cuts)

    def mean_length(self) -> Estimate:
        return dependent_mean_estimate(self._groups(self.lengths.astype(float)), max_lag=1)

    def discount_reward_covariance(self) -> Estimate:
        """``Cov(gamma^T, g(W))`` with a 1-dependence-corrected standard error."""
        x = self.gamma ** self.lengths.astype(float)
        y = self.rewards
        z = (x - x.mean()) * (y - y.mean())
        return dependent_mean_estimate(self._groups(z), max_lag=1)

    def lag_correlation(self, stat: np.ndarray, lag: int = 2) -> Estimate:
        """Correlation between a cycle statistic at cycles ``j`` and ``j + lag``.

        Products ``(X_j - mean)(X_{j+lag} - mean)`` are ``lag + 1``-dependent,
        which sets the number of autocovariance terms in the standard error.
        """
        stat = np.asarray(stat, dtype=np.float64)
        mu, sd = stat.mean(), stat.std()
        if sd == 0.0:
            return Estimate(0.0, 0.0)
        c = (stat - mu) / sd
        prods = [g[:-lag] * g[lag:] for g in self._groups(c) if g.size > lag]
        return dependent_mean_estimate(prods, max_lag=lag + 1)


def _cycles_from_paths(states: np.ndarray, coins: np.ndarray, m: int, r_pi: np.ndarray,
                       gamma: float, first_path: int):
    lengths, rewards, regen_states, path_idx = [], [], [], []
    rew = r_pi[states]
    for i in range(states.shape[0]):
        taus = (np.flatnonzero(coins[i]) + 1) * m
        if taus.size < 2:
            continue
        # drop W_1 (before the first regeneration) and the trailing partial cycle
        start, stop = taus[0], taus[-1]
        seg = rew[i, start:stop]
        cyc_len = np.diff(taus)
        offsets = np.arange(stop - start) - np.repeat(taus[:-1] - start, cyc_len)
        g = np.add.reduceat(seg * gamma**offsets, taus[:-1] - start)
        lengths.append(cyc_len)
        rewards.append(g)
        regen_states.append(states[i, taus[:-1]])
        path_idx.append(np.full(cyc_len.size, first_path + i))
    return lengths, rewards, regen_states, path_idx


def regeneration_cycles(mdp: TabularMdp, pi, decomp: DoeblinDecomposition, n_cycles: int,
                        seed: int, blocks_per_path: int | None = None,
                        paths_per_chunk: int = 256) -> CycleStats:
    """Collect at least ``n_cycles`` cycles ``W_j`` (``j >= 2``) under ``P_pi``."""
    pi = validate_policy(mdp, pi)
    P = policy_kernel(mdp, pi)
    r_pi = mdp.reward[np.arange(mdp.n_states), pi]
    sampler = SplitChainSampler(decomp, P)
    if blocks_per_path is None:
        # about 200 cycles per path
        blocks_per_path = int(math.ceil(200.0 / decomp.p))
    parts: tuple[list, list, list, list] = ([], [], [], [])
    have, chunk = 0, 0
    while have < n_cycles:
        rng = chunk_rng(seed, chunk)
        starts = np.searchsorted(sampler.cdf_psi, rng.random(paths_per_chunk), side="right")
        states, coins = sampler.paths(starts, blocks_per_path, rng)
        got = _cycles_from_paths(states, coins, decomp.m, r_pi, mdp.gamma, chunk * paths_per_chunk)
        for acc, new in zip(parts, got):
            acc.extend(new)
        have += sum(x.size for x in got[0])
        chunk += 1
    lengths, rewards, regen_states, path_idx = (np.concatenate(x) for x in parts)
    return CycleStats(lengths, rewards, regen_states, path_idx, mdp.gamma, decomp.m, decomp.p)


def check_negative_covariance(mdp: TabularMdp, pi, decomp: DoeblinDecomposition, n_cycles: int,
                              seed: int) -> Estimate:
    """Estimate of ``Cov(gamma^T, g(W))`` over stationary cycles."""
    return regeneration_cycles(mdp, pi, decomp, n_cycles, seed).discount_reward_covariance()


# ---------------------------------------------------------------------------
# variance of the discounted return


@dataclass(frozen=True, eq=False)
class ReturnVarianceEstimate:
    """Monte-Carlo moments of ``sum_k gamma^k r(S_k, A_k)`` from each ``(s, a)``."""

    mean: np.ndarray
    variance: np.ndarray
    variance_se: np.ndarray
    n_paths: int
    horizon: int


def monte_carlo_cumulative_variance(mdp: TabularMdp, pi, decomp: DoeblinDecomposition,
                                    n_paths: int, seed: int,
                                    horizon: int | None = None) -> ReturnVarianceEstimate:
    """Per-pair sample variance of the truncated discounted return.

    The first transition is drawn from ``P_{s,a}``; the rest of the path
    follows ``P_pi`` through the split chain of ``decomp``.  The horizon
    defaults to the smallest one with tail bias at most ``1e-6``.
    """
    pi = validate_policy(mdp, pi)
    if n_paths < 4:
        raise ValueError("need at least four paths per pair")
    P = policy_kernel(mdp, pi)
    sampler = SplitChainSampler(decomp, P)
    r_pi = mdp.reward[np.arange(mdp.n_states), pi]
    g = mdp.gamma
    H = truncation_horizon(g) if horizon is None else int(horizon)
    n_blocks = -(-(H - 1) // decomp.m) if H > 1 else 0
    disc = g ** np.arange(1, H + 1)
    n_pairs = mdp.n_pairs
    first_cdf = _cdf(mdp.kernel.reshape(n_pairs, mdp.n_states))

    returns = np.empty((n_paths, n_pairs))
    per_chunk = max(1, CHUNK_PATHS // n_pairs)
    done, chunk = 0, 0
    while done < n_paths:
        c = min(per_chunk, n_paths - done)
        rng = chunk_rng(seed, chunk)
        u = rng.random((c, n_pairs))
        first = (first_cdf[None, :, :] <= u[:, :, None]).sum(axis=2).ravel()
        if n_blocks > 0:
            states, _ = sampler.paths(first, n_blocks, rng)
            states = states[:, :H]
        else:
            states = first[:, None]
        tail = r_pi[states] @ disc
        returns[done:done + c] = mdp.reward.ravel()[None, :] + tail.reshape(c, n_pairs)
        done += c
        chunk += 1
    var, se = variance_estimate(returns, axis=0)
    shape = mdp.reward.shape
    return ReturnVarianceEstimate(returns.mean(axis=0).reshape(shape), var.reshape(shape),
                                  se.reshape(shape), int(n_paths), H)


def regeneration_state_counts(stats: CycleStats, n_states: int) -> np.ndarray:
    return np.bincount(stats.regen_states, minlength=n_states)


def empirical_marginals(decomp: DoeblinDecomposition, P, start: int, times, n_paths: int,
                        seed: int) -> dict[int, np.ndarray]:
    """Counts of ``S_n`` over ``n_paths`` independent split-chain paths from ``start``."""
    sampler = SplitChainSampler(decomp, P)
    times = sorted(int(t) for t in times)
    n_blocks = -(-times[-1] // decomp.m)
    counts = {t: np.zeros(sampler.n_states, dtype=np.int64) for t in times}
    done, chunk = 0, 0
    while done < n_paths:
        c = min(CHUNK_PATHS, n_paths - done)
        states, _ = sampler.paths(np.full(c, start), n_blocks, chunk_rng(seed, chunk))
        for t in times:
            counts[t] += np.bincount(states[:, t], minlength=sampler.n_states)
        done += c
        chunk += 1
    return counts
