from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixlab.algorithms import (Constants, LearnerResult, ScheduleError, canonical_setting, k2_conditions,
                               lipschitz_falsifier, make_schedule, optimal_policies, perturbed_fixed_point,
                               q_learning, recentered_operator, run_combined, step_size,
                               theoretical_sample_bound, with_constants)
from mixlab.hard import make_hard_instance
from mixlab.mdp import bellman_operator, random_mdp, solve_exact, sup_norm
from mixlab.sampler import GenerativeModel
from mixlab.stats import loglog_slope

from conftest import small_mdps


# -- schedules ----------------------------------------------------------------------

def test_general_schedule_arithmetic():
    s = make_schedule("general", (2, 2), 0.9, 1.0, 0.1, 5.0)
    d = 4 * (math.ceil(math.log(1 / (0.1 * 1.0))) + 1)
    assert d == 16
    assert s.k0 == math.ceil(math.log(2 * d / (0.1 * 0.1)) / 0.1**3)
    assert s.k_star == math.ceil(math.log(8 * d / (0.1 * 0.1)) / 0.1**3)
    assert s.l_star == math.ceil(math.log2(5.0))
    assert s.n_ls == tuple(math.ceil(3 * 4**l * math.log(8 * d / 0.1) / 0.1**2) for l in (1, 2, 3))
    assert (s.k0, s.k_star, s.n_ls) == (8071, 9458, (8586, 34343, 137369))
    assert s.b == 5.0
    assert theoretical_sample_bound(s) == 4 * s.total_operators == 866972


def test_uniform_schedule_arithmetic():
    g, eps, delta, t = 0.9, 0.5, 0.1, 16.0
    s = make_schedule("uniform", (2, 2), g, eps, delta, t, warm_start="q_learning")
    d = 4 * (math.ceil(math.log(1 / (math.sqrt(0.1) * eps))) + 1)
    assert s.l_star == math.ceil(math.log2(4.0 / eps)) == 3
    assert s.k_star == math.ceil(math.log(2 * d / (0.1 * delta)) / 0.1**3)
    assert s.n_ls[0] == math.ceil(4 * math.log(8 * d / delta) / 0.01)
    assert s.k0 == math.ceil(t * math.log(2 * d * t / (0.1 * delta)) / 0.1**3)
    nested = make_schedule("uniform", (2, 2), g, eps, delta, t)
    assert nested.k0 == 0 and nested.warm_start.setting == "general"
    assert nested.warm_start.epsilon == 4.0
    assert nested.warm_start.delta == pytest.approx(delta / 4)
    assert nested.total_operators == nested.warm_start.total_operators + sum(s.n_ls) + 3 * s.k_star


def test_unique_or_lipschitz_schedule():
    s = make_schedule("unique-or-lipschitz", (2, 2), 0.9, 0.5, 0.1, 5.0, gap_Delta=0.5, lipschitz_L=1.0)
    assert (s.k0, s.k_star, s.n_ls, s.n_target) == (18445, 4161, (1865,), 8322)
    assert s.b == pytest.approx(1 / math.sqrt(0.1))
    assert s.k_star == math.ceil(s.n_target / (2 * s.l_star))
    cond = k2_conditions(s)
    assert {"lhs", "unique_rhs", "unique_ok", "lipschitz_rhs", "lipschitz_ok"} <= set(cond)
    with pytest.raises(ScheduleError):
        k2_conditions(make_schedule("general", (2, 2), 0.9, 1.0, 0.1, 5.0))


@given(st.sampled_from(["general", "uniform"]), st.floats(0.5, 0.999), st.integers(0, 6),
       st.floats(1.0, 200.0))
def test_epoch_batches_quadruple(setting, gamma, halvings, t):
    eps = (math.sqrt(t) if setting == "uniform" else t) / 2**halvings
    s = make_schedule(setting, (3, 2), gamma, eps, 0.05, t)
    assert s.l_star == halvings
    for a, b in zip(s.n_ls, s.n_ls[1:]):
        assert abs(b - 4 * a) <= 4
    assert s.validate() is s


def test_validate_catches_tampering():
    s = make_schedule("general", (2, 2), 0.9, 1.0, 0.1, 5.0)
    with pytest.raises(ScheduleError):
        dataclasses.replace(s, k0=s.k0 - 1).validate()
    with pytest.raises(ScheduleError):
        dataclasses.replace(s, n_ls=s.n_ls[:-1]).validate()


def test_schedule_errors():
    with pytest.raises(ScheduleError):
        make_schedule("general", (2, 2), 0.9, 6.0, 0.1, 5.0)
    with pytest.raises(ScheduleError):
        make_schedule("uniform", (2, 2), 0.9, 3.0, 0.1, 5.0)
    with pytest.raises(ScheduleError):
        make_schedule("general", (2, 2), 1.0, 1.0, 0.1, 5.0)
    with pytest.raises(ScheduleError):
        make_schedule("general", (2, 2), 0.9, 1.0, 1.5, 5.0)
    with pytest.raises(ScheduleError):
        make_schedule("nonsense", (2, 2), 0.9, 1.0, 0.1, 5.0)
    with pytest.raises(ScheduleError):
        make_schedule("custom", (2, 2), 0.9, 1.0, 0.1, 5.0, k0=1)
    with pytest.raises(ScheduleError):
        Constants(c0=0.0)


def test_setting_aliases():
    assert canonical_setting("GeneralOptimalMixing") == "general"
    assert canonical_setting("uniform-mixing") == "uniform"
    assert canonical_setting("UniqueOrLipschitz") == "unique_or_lipschitz"


def test_with_constants_rebuilds():
    s = make_schedule("general", (2, 2), 0.9, 1.0, 0.1, 5.0)
    s2 = with_constants(s, Constants(2.0, 1.0, 1.0))
    assert s2.k0 == math.ceil(2 * math.log(3200) * 1000) and s2.k_star == s.k_star


def test_step_size():
    assert step_size(0, 0.9) == 1.0
    assert step_size(10, 0.9) == pytest.approx(0.5)


# -- learners -------------------------------------------------------------------------

@given(small_mdps(max_states=3, max_actions=2), st.integers(0, 10**6))
def test_combined_sample_accounting(mdp, seed):
    s = make_schedule("custom", mdp.reward.shape, mdp.gamma, 1.0, 0.1, 2.0, k0=13, k_star=7,
                      n_ls=(5, 9))
    gm = GenerativeModel(mdp, seed)
    res = run_combined(gm, s, solve_exact(mdp)[1])
    assert res.samples_used == theoretical_sample_bound(s) == mdp.n_pairs * (13 + 5 + 9 + 2 * 7)
    assert len(res.per_epoch_errors) == 3


def test_nested_warm_start_accounting():
    h = make_hard_instance(0.1, 0.9)
    s = make_schedule("uniform", (2, 2), 0.9, 1.0, 0.1, 5.0)
    res = run_combined(GenerativeModel(h.mdp, 0), s, solve_exact(h.mdp)[1])
    assert res.warm_start is not None
    assert res.samples_used == theoretical_sample_bound(s)


def test_run_combined_dimension_check(small_mdp):
    s = make_schedule("general", (2, 2), 0.9, 1.0, 0.1, 5.0)
    with pytest.raises(ScheduleError):
        run_combined(GenerativeModel(small_mdp, 0), s)


def test_result_helpers():
    r = LearnerResult(np.zeros((1, 1)), [4.0, 1.9, 0.9], 10, 0.0)
    assert r.final_error == 0.9 and r.success(1.0) and not r.success(0.5)
    assert r.halving_holds(4.0) and not r.halving_holds(3.0)
    with pytest.raises(ValueError):
        LearnerResult(np.zeros((1, 1)), [], 0, 0.0).success(1.0)


def test_hard_family_learner_smoke():
    h = make_hard_instance(0.1, 0.9)
    q_star = solve_exact(h.mdp)[1]
    s = make_schedule("general", (2, 2), 0.9, 1.0, 0.1, 5.0)
    res = run_combined(GenerativeModel(h.mdp, 0), s, q_star)
    assert res.success(1.0) and res.halving_holds(s.b)


@pytest.mark.slow
def test_q_learning_error_decays_like_inverse_root():
    mdp = random_mdp(4, 2, 0.5, np.random.default_rng(0))
    q_star = solve_exact(mdp)[1]
    ks = [250, 1000, 4000, 16000, 64000]
    errs = np.zeros((40, len(ks)))
    for seed in range(40):
        gm, q, done = GenerativeModel(mdp, seed), None, 0
        for j, k in enumerate(ks):
            q = q_learning(gm, k - done, q_init=q, k_offset=done)
            done = k
            errs[seed, j] = sup_norm(q - q_star)
    slope, _ = loglog_slope(ks, errs.mean(axis=0))
    assert slope == pytest.approx(-0.5, abs=0.15)


# -- recentred operator -------------------------------------------------------------------

@given(small_mdps(), st.integers(0, 10**6))
def test_recentred_operator_contracts(mdp, seed):
    rng = np.random.default_rng(seed)
    anchor, rec, q1, q2 = rng.normal(size=(4,) + mdp.reward.shape)
    lhs = sup_norm(recentered_operator(mdp, anchor, rec, q1) - recentered_operator(mdp, anchor, rec, q2))
    assert lhs <= mdp.gamma * sup_norm(q1 - q2) + 1e-12


@given(small_mdps(), st.integers(0, 10**6))
def test_perturbed_fixed_point(mdp, seed):
    rng = np.random.default_rng(seed)
    anchor = rng.normal(size=mdp.reward.shape)
    rec = bellman_operator(mdp, anchor) + rng.normal(scale=0.1, size=mdp.reward.shape)
    q_bar = perturbed_fixed_point(mdp, anchor, rec)
    assert sup_norm(recentered_operator(mdp, anchor, rec, q_bar) - q_bar) <= 1e-10
    # exact recentring gives back q*
    q_exact = perturbed_fixed_point(mdp, anchor, bellman_operator(mdp, anchor))
    assert sup_norm(q_exact - solve_exact(mdp)[1]) <= 1e-9


def test_optimal_policies_enumerates_ties():
    q = np.array([[1.0, 1.0], [0.0, 2.0]])
    assert sorted(p.tolist() for p in optimal_policies(q)) == [[0, 1], [1, 1]]


def test_lipschitz_falsifier():
    # every policy has the same dynamics: the left side is always zero
    h = make_hard_instance(0.1, 0.9)
    q_star = solve_exact(h.mdp)[1]
    assert not lipschitz_falsifier(h.mdp, q_star, 1e-9, 50, seed=0).falsified
    mdp = random_mdp(3, 3, 0.9, np.random.default_rng(1))
    q_star = solve_exact(mdp)[1]
    probe = lipschitz_falsifier(mdp, q_star, 1e-6, 200, seed=0)
    assert probe.falsified and probe.max_ratio > 0
    assert not lipschitz_falsifier(mdp, q_star, probe.max_ratio * 2, 200, seed=0).falsified
