"""Generative-model access to an MDP with exact sample accounting.

One call to the model returns one independent next state for every pair
``(s, a)``.  Draws use per-pair alias tables and a single seeded stream
consumed in row-major pair order, so a seed fixes the whole run.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .mdp import TabularMdp


def alias_tables(kernel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias tables for every row of ``kernel`` (last axis is the outcome)."""
    lead = kernel.shape[:-1]
    n = kernel.shape[-1]
    rows = kernel.reshape(-1, n)
    prob = np.ones_like(rows)
    alias = np.tile(np.arange(n, dtype=np.int64), (rows.shape[0], 1))
    for i, row in enumerate(rows):
        scaled = row * n
        small = [j for j in range(n) if scaled[j] < 1.0]
        large = [j for j in range(n) if scaled[j] >= 1.0]
        while small and large:
            lo, hi = small.pop(), large.pop()
            prob[i, lo] = scaled[lo]
            alias[i, lo] = hi
            scaled[hi] = scaled[hi] + scaled[lo] - 1.0
            (small if scaled[hi] < 1.0 else large).append(hi)
        # leftovers are 1 up to rounding
        for j in small + large:
            prob[i, j] = 1.0
            alias[i, j] = j
    return prob.reshape(*lead, n), alias.reshape(*lead, n)


@dataclass(frozen=True, eq=False)
class EmpiricalBellmanDraw:
    """One next state per pair, the randomness of one empirical Bellman operator."""

    next_state: np.ndarray


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


class GenerativeModel:
    """Seeded simulator for ``mdp`` that counts every next-state draw."""

    def __init__(self, mdp: TabularMdp, seed: int | np.random.SeedSequence = 0) -> None:
        self.mdp = mdp
        self.rng = make_rng(seed)
        self.prob, self.alias = alias_tables(mdp.kernel)
        self.per_pair = np.zeros(mdp.reward.shape, dtype=np.int64)
        self.n_operators = 0

    @property
    def total(self) -> int:
        return int(self.per_pair.sum())

    def _advance(self, n_operators: int) -> None:
        self.per_pair += n_operators
        self.n_operators += n_operators

    def draw(self) -> EmpiricalBellmanDraw:
        u = self.rng.random(self.mdp.n_pairs).reshape(self.mdp.reward.shape)
        nxt = kernels.alias_draw(self.prob, self.alias, u)
        self._advance(1)
        return EmpiricalBellmanDraw(nxt)

    def recentering_counts(self, n_draws: int) -> np.ndarray:
        """Next-state counts ``(S, A, S)`` from ``n_draws`` empirical operators."""
        if n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        counts = kernels.count_draws(self.prob, self.alias, int(n_draws), self.rng)
        self._advance(int(n_draws))
        return counts

    def q_learning_steps(self, q: np.ndarray, k_steps: int, k_offset: int = 0) -> None:
        """In-place synchronous Q-learning steps ``k_offset + 1 .. k_offset + k_steps``."""
        kernels.ql_steps(self.prob, self.alias, self.mdp.reward, self.mdp.gamma, q,
                         int(k_steps), int(k_offset), self.rng)
        self._advance(int(k_steps))

    def recentered_steps(self, q: np.ndarray, anchor: np.ndarray, recentered: np.ndarray,
                         k_steps: int) -> None:
        """In-place recentered steps with step sizes restarting at ``k = 1``."""
        kernels.vr_steps(self.prob, self.alias, self.mdp.reward, self.mdp.gamma, q,
                         np.ascontiguousarray(anchor), np.ascontiguousarray(recentered),
                         int(k_steps), self.rng)
        self._advance(int(k_steps))


def draw_empirical_operator(gm: GenerativeModel) -> EmpiricalBellmanDraw:
    return gm.draw()


def apply_empirical_operator(draw: EmpiricalBellmanDraw, mdp: TabularMdp, q: np.ndarray) -> np.ndarray:
    """``r(s,a) + gamma * max_b q(next_state(s,a), b)``."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != mdp.reward.shape or draw.next_state.shape != mdp.reward.shape:
        raise ValueError("shape mismatch between draw, MDP and q")
    return mdp.reward + mdp.gamma * q.max(axis=1)[draw.next_state]


def sample_count(gm: GenerativeModel) -> tuple[int, np.ndarray]:
    return gm.total, gm.per_pair.copy()
