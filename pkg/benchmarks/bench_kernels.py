"""Compare the numba and numpy kernel backends on the hot loops.

    python benchmarks/bench_kernels.py [--repeat 3]

Both backends consume the same random stream, so each row also checks that
their outputs agree exactly.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mixlab.hard import make_hard_instance
from mixlab.kernels import get_backend
from mixlab.mdp import random_mdp
from mixlab.mixing import MatrixPowers, decompose
from mixlab.sampler import alias_tables
from mixlab.split_chain import SplitChainSampler


def _time(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases():
    hard = make_hard_instance(0.1, 0.9).mdp
    mid = random_mdp(20, 4, 0.95, np.random.default_rng(0))
    for label, mdp, steps in (("ql hard 2x2", hard, 200_000), ("ql random 20x4", mid, 20_000)):
        prob, alias = alias_tables(mdp.kernel)

        def run(b, mdp=mdp, prob=prob, alias=alias, steps=steps):
            q = np.zeros(mdp.reward.shape)
            b.ql_steps(prob, alias, mdp.reward, mdp.gamma, q, steps, 0, np.random.default_rng(1))
            return q
        yield label, steps * mdp.n_pairs, run

    prob, alias = alias_tables(hard.kernel)
    yield "recentering counts 2x2", 500_000 * 4, \
        lambda b: b.count_draws(prob, alias, 500_000, np.random.default_rng(2))

    P = random_mdp(6, 1, 0.9, np.random.default_rng(3)).kernel[:, 0]
    d = decompose(MatrixPowers(P)[3], 3)
    sampler = SplitChainSampler(d, P)
    starts = np.arange(1024) % 6

    def split(b):
        return b.split_chain_paths(sampler.cdf_psi, sampler.cdf_r, sampler.cdf_bridge, sampler.bridge_ok,
                                   d.m, d.p, starts, 200, np.random.default_rng(4))[0]
    yield "split chain 1024 paths x 600", 1024 * 600, split


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    nb, npy = get_backend("numba"), get_backend("numpy")
    print(f"{'case':32s} {'draws':>10s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  same")
    for label, draws, fn in cases():
        fn(nb)  # compile outside the timed region
        t_nb, out_nb = _time(lambda: fn(nb), args.repeat)
        t_np, out_np = _time(lambda: fn(npy), args.repeat)
        same = np.array_equal(out_nb, out_np)
        print(f"{label:32s} {draws:10d} {t_nb * 1e3:10.1f} {t_np * 1e3:10.1f} {t_np / t_nb:8.1f}  {same}")


if __name__ == "__main__":
    main()
