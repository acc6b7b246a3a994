"""Vectorised numpy implementations of the hot loops.

Every function consumes uniforms from ``rng`` in exactly the same order as its
twin in ``_numba`` so both backends agree bit for bit given the same seed.
"""
from __future__ import annotations

import numpy as np

# cap on uniforms materialised at once when counting recentering draws
_CHUNK_UNIFORMS = 1 << 21


def alias_draw(prob, alias, u):
    """Vectorised alias-table lookup; ``u`` has shape ``prob.shape[:-1]``."""
    n = prob.shape[-1]
    x = u * n
    col = x.astype(np.int64)
    np.minimum(col, n - 1, out=col)
    frac = x - col
    keep = frac < np.take_along_axis(prob, col[..., None], axis=-1)[..., 0]
    other = np.take_along_axis(alias, col[..., None], axis=-1)[..., 0]
    return np.where(keep, col, other)


def cdf_draw(cdf_rows, u):
    """Inverse-CDF draw: index of the first CDF entry strictly above ``u``."""
    return (cdf_rows <= u[:, None]).sum(axis=1)


def ql_steps(prob, alias, reward, gamma, q, k_steps, k_offset, rng):
    n_s, n_a = reward.shape
    for i in range(k_steps):
        k = k_offset + i + 1
        lam = 1.0 / (1.0 + (1.0 - gamma) * k)
        u = rng.random(n_s * n_a).reshape(n_s, n_a)
        nxt = alias_draw(prob, alias, u)
        v = q.max(axis=1)
        q[:] = (1.0 - lam) * q + lam * (reward + gamma * v[nxt])


def vr_steps(prob, alias, reward, gamma, q, anchor, recentered, k_steps, rng):
    n_s, n_a = reward.shape
    v_anchor = anchor.max(axis=1)
    for i in range(k_steps):
        k = i + 1
        lam = 1.0 / (1.0 + (1.0 - gamma) * k)
        u = rng.random(n_s * n_a).reshape(n_s, n_a)
        nxt = alias_draw(prob, alias, u)
        v = q.max(axis=1)
        target = (reward + gamma * v[nxt]) - (reward + gamma * v_anchor[nxt]) + recentered
        q[:] = (1.0 - lam) * q + lam * target


def count_draws(prob, alias, n_draws, rng):
    n_s, n_a, _ = prob.shape
    n_pairs = n_s * n_a
    counts = np.zeros(n_pairs * n_s, dtype=np.int64)
    offsets = (np.arange(n_pairs, dtype=np.int64) * n_s).reshape(n_s, n_a)
    per_chunk = max(1, _CHUNK_UNIFORMS // n_pairs)
    done = 0
    while done < n_draws:
        c = min(per_chunk, n_draws - done)
        u = rng.random(c * n_pairs).reshape(c, n_s, n_a)
        nxt = alias_draw(prob[None], alias[None], u)
        counts += np.bincount((nxt + offsets).ravel(), minlength=n_pairs * n_s)
        done += c
    return counts.reshape(n_s, n_a, n_s)


def split_chain_paths(cdf_psi, cdf_r, cdf_bridge, bridge_ok, m, p, starts, n_blocks, rng):
    n_paths = starts.shape[0]
    states = np.empty((n_paths, n_blocks * m + 1), dtype=np.int64)
    coins = np.empty((n_paths, n_blocks), dtype=np.bool_)
    states[:, 0] = starts
    cur = starts.astype(np.int64)
    for b in range(n_blocks):
        t = b * m
        success = rng.random(n_paths) < p
        u = rng.random(n_paths)
        from_psi = cdf_draw(np.broadcast_to(cdf_psi, (n_paths, cdf_psi.shape[0])), u)
        from_r = cdf_draw(cdf_r[cur], u)
        end = np.where(success, from_psi, from_r)
        coins[:, b] = success
        prev = cur
        for k in range(1, m):
            u = rng.random(n_paths)
            if not np.all(bridge_ok[k - 1, prev, end]):
                raise FloatingPointError("bridge law undefined: P^m(start, end) == 0")
            prev = cdf_draw(cdf_bridge[k - 1, prev, end], u)
            states[:, t + k] = prev
        states[:, t + m] = end
        cur = end
    return states, coins
