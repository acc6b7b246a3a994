from __future__ import annotations

import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from mixlab.mdp import TabularMdp

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def dirichlet_kernel(rng: np.random.Generator, n: int, concentration: float = 1.0,
                     floor: float = 0.0) -> np.ndarray:
    P = rng.dirichlet(np.full(n, concentration), size=n) + floor
    return P / P.sum(axis=1, keepdims=True)


@st.composite
def ergodic_kernels(draw, max_states: int = 6):
    """Random kernels with a positive floor, so every one is uniformly ergodic."""
    n = draw(st.integers(2, max_states))
    seed = draw(st.integers(0, 2**32 - 1))
    floor = draw(st.sampled_from([1e-3, 1e-2, 0.1]))
    conc = draw(st.sampled_from([0.3, 1.0, 3.0]))
    return dirichlet_kernel(np.random.default_rng(seed), n, conc, floor)


@st.composite
def small_mdps(draw, max_states: int = 4, max_actions: int = 3, gammas=(0.5, 0.8, 0.9, 0.95)):
    n_s = draw(st.integers(2, max_states))
    n_a = draw(st.integers(1, max_actions))
    seed = draw(st.integers(0, 2**32 - 1))
    gamma = draw(st.sampled_from(gammas))
    rng = np.random.default_rng(seed)
    K = rng.dirichlet(np.ones(n_s), size=(n_s, n_a)) + 1e-2
    K /= K.sum(axis=2, keepdims=True)
    return TabularMdp(rng.uniform(size=(n_s, n_a)), K, gamma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_mdp():
    rng = np.random.default_rng(7)
    K = rng.dirichlet(np.ones(3), size=(3, 2))
    return TabularMdp(rng.uniform(size=(3, 2)), K, 0.9, name="small")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, line = results[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {line}")
