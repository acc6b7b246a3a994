"""numba-compiled twins of the kernels in ``_numpy``."""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _alias_one(prob_row, alias_row, u):
    n = prob_row.shape[0]
    x = u * n
    col = np.int64(x)
    if col > n - 1:
        col = n - 1
    if x - col < prob_row[col]:
        return col
    return alias_row[col]


@njit(cache=True)
def _cdf_one(cdf_row, u):
    n = cdf_row.shape[0]
    j = 0
    while j < n - 1 and cdf_row[j] <= u:
        j += 1
    return j


@njit(cache=True)
def ql_steps(prob, alias, reward, gamma, q, k_steps, k_offset, rng):
    n_s, n_a = reward.shape
    v = np.empty(n_s)
    for i in range(k_steps):
        k = k_offset + i + 1
        lam = 1.0 / (1.0 + (1.0 - gamma) * k)
        for s in range(n_s):
            best = q[s, 0]
            for a in range(1, n_a):
                if q[s, a] > best:
                    best = q[s, a]
            v[s] = best
        for s in range(n_s):
            for a in range(n_a):
                nxt = _alias_one(prob[s, a], alias[s, a], rng.random())
                q[s, a] = (1.0 - lam) * q[s, a] + lam * (reward[s, a] + gamma * v[nxt])


@njit(cache=True)
def vr_steps(prob, alias, reward, gamma, q, anchor, recentered, k_steps, rng):
    n_s, n_a = reward.shape
    v = np.empty(n_s)
    v_anchor = np.empty(n_s)
    for s in range(n_s):
        best = anchor[s, 0]
        for a in range(1, n_a):
            if anchor[s, a] > best:
                best = anchor[s, a]
        v_anchor[s] = best
    for i in range(k_steps):
        k = i + 1
        lam = 1.0 / (1.0 + (1.0 - gamma) * k)
        for s in range(n_s):
            best = q[s, 0]
            for a in range(1, n_a):
                if q[s, a] > best:
                    best = q[s, a]
            v[s] = best
        for s in range(n_s):
            for a in range(n_a):
                nxt = _alias_one(prob[s, a], alias[s, a], rng.random())
                target = ((reward[s, a] + gamma * v[nxt])
                          - (reward[s, a] + gamma * v_anchor[nxt])
                          + recentered[s, a])
                q[s, a] = (1.0 - lam) * q[s, a] + lam * target


@njit(cache=True)
def count_draws(prob, alias, n_draws, rng):
    n_s, n_a, _ = prob.shape
    counts = np.zeros((n_s, n_a, n_s), dtype=np.int64)
    for _ in range(n_draws):
        for s in range(n_s):
            for a in range(n_a):
                nxt = _alias_one(prob[s, a], alias[s, a], rng.random())
                counts[s, a, nxt] += 1
    return counts


@njit(cache=True)
def split_chain_paths(cdf_psi, cdf_r, cdf_bridge, bridge_ok, m, p, starts, n_blocks, rng):
    n_paths = starts.shape[0]
    states = np.empty((n_paths, n_blocks * m + 1), dtype=np.int64)
    coins = np.empty((n_paths, n_blocks), dtype=np.bool_)
    cur = np.empty(n_paths, dtype=np.int64)
    end = np.empty(n_paths, dtype=np.int64)
    for i in range(n_paths):
        states[i, 0] = starts[i]
        cur[i] = starts[i]
    for b in range(n_blocks):
        t = b * m
        for i in range(n_paths):
            coins[i, b] = rng.random() < p
        for i in range(n_paths):
            u = rng.random()
            if coins[i, b]:
                end[i] = _cdf_one(cdf_psi, u)
            else:
                end[i] = _cdf_one(cdf_r[cur[i]], u)
        for k in range(1, m):
            for i in range(n_paths):
                u = rng.random()
                prev = cur[i] if k == 1 else states[i, t + k - 1]
                if not bridge_ok[k - 1, prev, end[i]]:
                    raise FloatingPointError("bridge law undefined: P^m(start, end) == 0")
                states[i, t + k] = _cdf_one(cdf_bridge[k - 1, prev, end[i]], u)
        for i in range(n_paths):
            states[i, t + m] = end[i]
            cur[i] = end[i]
    return states, coins
