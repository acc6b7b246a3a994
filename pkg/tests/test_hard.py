from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from mixlab.hard import (F_FLOOR, RegionWarning, alternative_threshold, f_boundary, f_lower_bound_check,
                         f_value, from_t_minorize, hard_kernel, hard_report, hellinger_between_models,
                         in_region, make_alternative, make_hard_instance, nu_squared_closed_form,
                         policy_minorization, qstar_gap, worst_policy_nu)
from mixlab.mdp import exact_variance_report, solve_exact

GRID_P = [0.01, 0.02, 0.05, 0.1]
GRID_G = [0.9, 0.95, 0.99, 0.995]


def region_grid():
    return [(p, g) for p in GRID_P for g in GRID_G if g >= 1 - p]


def df_dgamma_reference(p: float, g: float) -> float:
    num = 2 * (1 - p) * p**2 * ((g - 1) ** 2 - 4 * g**2 * p**3 - 2 * g * (2 - 3 * g) * p**2
                                - (4 * g**2 - 7 * g + 3) * p)
    return num / (g * (2 * p - 1) + 1) ** 5


def test_region_warning():
    with pytest.warns(RegionWarning):
        make_hard_instance(0.3, 0.9)
    with pytest.raises(ValueError):
        make_hard_instance(0.0, 0.9)
    assert in_region(0.1, 0.9) and not in_region(0.1, 0.85) and not in_region(0.05, 0.9)


def test_instance_shape():
    h = from_t_minorize(10, 0.95)
    assert h.p == pytest.approx(0.1) and h.t_minorize == pytest.approx(10)
    assert np.allclose(h.mdp.kernel[:, 0], hard_kernel(0.1))
    assert np.allclose(h.mdp.kernel[:, 0], h.mdp.kernel[:, 1])


@pytest.mark.parametrize("p,g", region_grid())
def test_value_gap_closed_form(p, g):
    v = solve_exact(make_hard_instance(p, g).mdp)[0]
    assert v[0] - v[1] == pytest.approx(1 / (1 - g * (1 - 2 * p)), rel=1e-10)
    assert v[0] + v[1] == pytest.approx(1 / (1 - g), rel=1e-10)


@pytest.mark.parametrize("p,g", region_grid())
def test_nu_closed_form_matches_matrix(p, g):
    h = make_hard_instance(p, g)
    mat = exact_variance_report(h.mdp, np.zeros(2, dtype=np.int64)).nu_sq[0, 0]
    assert nu_squared_closed_form(h) == pytest.approx(mat, rel=1e-8)
    assert f_value(p, g) == pytest.approx((1 - g) ** 2 * p * mat / g**2, rel=1e-8)


@pytest.mark.parametrize("p,g", region_grid())
def test_nu_lower_bound_scale(p, g):
    # max nu^2 >= t / (3^5 (1 - g)^2)
    h = make_hard_instance(p, g)
    _, rep = worst_policy_nu(h.mdp)
    assert rep.nu_sq.max() >= (1 / p) / (3**5 * (1 - g) ** 2)


@pytest.mark.parametrize("p,g", [(0.05, 0.96), (0.1, 0.93), (0.01, 0.995), (0.08, 0.97)])
def test_f_derivative_matches_reference_expression(p, g):
    h = 1e-6
    numeric = (f_value(p, g + h) - f_value(p, g - h)) / (2 * h)
    assert numeric == pytest.approx(df_dgamma_reference(p, g), rel=1e-5)
    assert numeric > 0


def test_f_floor():
    assert F_FLOOR == 2 / 81
    for p in np.linspace(1e-4, 0.1, 50):
        assert f_boundary(p) == pytest.approx(f_value(p, 1 - p), rel=1e-8)
        assert f_boundary(p) >= 2 / 81
    chk = f_lower_bound_check(0.05, 0.97)
    assert chk.passes and chk.in_region


def test_nu_symmetry_under_action_swap():
    # nu^pi(1, a1) = nu^{pi~}(1, a2) with pi~ the action-swapped policy
    h = make_hard_instance(0.1, 0.9)
    for pi in itertools.product(range(2), repeat=2):
        pi = np.array(pi)
        a = exact_variance_report(h.mdp, pi).nu_sq
        b = exact_variance_report(h.mdp, 1 - pi).nu_sq
        assert a[0, 0] == pytest.approx(b[0, 1], rel=1e-10)
        assert a[1, 0] == pytest.approx(b[1, 1], rel=1e-10)


def test_hellinger_product_rule():
    rng = np.random.default_rng(0)
    K1 = rng.dirichlet(np.ones(2), size=(2, 2))
    K2 = rng.dirichlet(np.ones(2), size=(2, 2))
    from mixlab.mdp import TabularMdp

    m1, m2 = TabularMdp(np.zeros((2, 2)), K1, 0.9), TabularMdp(np.zeros((2, 2)), K2, 0.9)
    # direct sum over the 16 joint outcomes of one draw per pair
    bc = 0.0
    for outcome in itertools.product(range(2), repeat=4):
        p1 = math.prod(K1.reshape(4, 2)[i, s] for i, s in enumerate(outcome))
        p2 = math.prod(K2.reshape(4, 2)[i, s] for i, s in enumerate(outcome))
        bc += math.sqrt(p1 * p2)
    assert hellinger_between_models(m1, m2) == pytest.approx(math.sqrt(1 - bc), rel=1e-10)
    assert hellinger_between_models(m1, m1) == pytest.approx(0.0, abs=1e-7)


def test_alternative_threshold():
    h = make_hard_instance(0.1, 0.9)
    assert alternative_threshold(h) == pytest.approx(2 * max(100.0, 243 * 1000))
    with pytest.raises(ValueError):
        make_alternative(h, 1000)


@pytest.mark.parametrize("p,g", [(0.1, 0.9), (0.05, 0.97), (0.1, 0.99)])
def test_alternative_properties(p, g):
    h = make_hard_instance(p, g)
    n = math.ceil(alternative_threshold(h))
    alt = make_alternative(h, n)
    K = alt.mdp_bar.kernel
    assert np.all(K >= 0) and np.allclose(K.sum(axis=2), 1.0, atol=1e-12)
    assert alt.perturbation <= p / 2
    assert alt.hellinger <= 1 / (2 * math.sqrt(n))
    assert min(policy_minorization(alt.mdp_bar)) >= p
    assert qstar_gap(h, alt) > 0


def test_hard_report_keys():
    rep = hard_report(make_hard_instance(0.1, 0.9), n=500_000)
    assert rep["t_minorize"] == pytest.approx(5.0) and rep["t_nominal"] == pytest.approx(10.0)
    assert rep["nu_sq_closed_form"] == pytest.approx(rep["nu_sq_matrix"], rel=1e-8)
    assert rep["alternative"]["above_threshold"]
