"""The two-state hard family and its perturbed alternative.

States ``0`` and ``1`` (the "first" and "second" state), two actions with
identical dynamics: stay with probability ``1 - p``, switch with ``p``.
Reward 1 in state 0 and 0 in state 1.  With ``p = 1 / t`` the family spans
minorization times ``t`` for ``gamma >= 1 - 1/t``.

Hellinger convention: ``d_Hel(P1, P2)^2 = 1 - BC(P1, P2)`` where ``BC`` is the
Bhattacharyya affinity; for product measures the affinities multiply.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .mdp import TabularMdp, exact_variance_report, solve_exact, sup_norm
from .mixing import decompose

F_FLOOR = 2.0 / 81.0


class RegionWarning(UserWarning):
    """Parameters fall outside the region where the lower-bound analysis applies."""


def hard_kernel(p: float) -> np.ndarray:
    return np.array([[1.0 - p, p], [p, 1.0 - p]])


def in_region(p: float, gamma: float) -> bool:
    return 0.0 < p <= 0.1 and 0.9 <= gamma < 1.0 and gamma >= 1.0 - p - 1e-15


@dataclass(frozen=True, eq=False)
class HardInstance:
    p: float
    gamma: float
    mdp: TabularMdp

    @property
    def t_minorize(self) -> float:
        """The nominal minorization time ``1/p`` the family is indexed by."""
        return 1.0 / self.p


def make_hard_instance(p: float, gamma: float) -> HardInstance:
    p, gamma = float(p), float(gamma)
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    if not (0.0 < p <= 0.1 and 0.9 <= gamma < 1.0):
        warnings.warn(f"p={p}, gamma={gamma} outside p in (0, 0.1], gamma in [0.9, 1)",
                      RegionWarning, stacklevel=2)
    P = hard_kernel(p)
    mdp = TabularMdp(np.array([[1.0, 1.0], [0.0, 0.0]]), np.stack([P, P], axis=1), gamma,
                     name=f"hard_p{p:g}_g{gamma:g}")
    return HardInstance(p, gamma, mdp)


def from_t_minorize(t: float, gamma: float) -> HardInstance:
    return make_hard_instance(1.0 / float(t), gamma)


def nu_squared_closed_form(h: HardInstance) -> float:
    """Local minimax parameter at (state 0, action 0) in closed form."""
    p, g = h.p, h.gamma
    num = g**2 * (1 - p) * p * (1 - 2 * g * (1 - p) + g**2 * (1 - 2 * p + 2 * p**2))
    den = (1 - g) ** 2 * (1 - g + 2 * g * p) ** 4
    return num / den


def f_value(p: float, gamma: float) -> float:
    """``(1 - gamma)^2 p nu^2 / gamma^2`` from the closed form (no instance built)."""
    g = gamma
    return (1 - p) * p**2 * (1 - 2 * g * (1 - p) + g**2 * (1 - 2 * p + 2 * p**2)) / (1 - g + 2 * g * p) ** 4


def f_boundary(p: float) -> float:
    """``f(p, 1 - p)`` simplified."""
    return (1 - p) * (2 * p**2 - 6 * p + 5) / (3 - 2 * p) ** 4


@dataclass(frozen=True)
class FCheck:
    f_value: float
    passes: bool
    in_region: bool


def f_lower_bound_check(p: float, gamma: float) -> FCheck:
    f = f_value(p, gamma)
    return FCheck(f, f >= F_FLOOR, in_region(p, gamma))


# ---------------------------------------------------------------------------
# alternative instance


def alternative_threshold(h: HardInstance) -> float:
    t = h.t_minorize
    return 2.0 * max((1.0 - h.gamma) ** -2, 3.0**5 * t**3)


@dataclass(frozen=True, eq=False)
class AlternativeInstance:
    base: HardInstance
    n: int
    mdp_bar: TabularMdp
    hellinger: float
    perturbation: float
    policy: np.ndarray
    pair: tuple


def _all_policies(n_states: int, n_actions: int):
    return [np.array(a, dtype=np.int64) for a in itertools.product(range(n_actions), repeat=n_states)]


def worst_policy_nu(mdp: TabularMdp):
    """Policy with the largest ``||nu^pi||_inf`` among optimal ones, and its report.

    Ties go to the first policy in lexicographic order.  On the hard family
    every policy is optimal.
    """
    _, q_star, _ = solve_exact(mdp)
    best = None
    for pi in _all_policies(mdp.n_states, mdp.n_actions):
        v_pi = q_star[np.arange(mdp.n_states), pi]
        if np.abs(v_pi - q_star.max(axis=1)).max() > 1e-10:
            continue
        rep = exact_variance_report(mdp, pi)
        val = float(rep.nu_sq.max())
        if best is None or val > best[2] * (1 + 1e-12):
            best = (pi, rep, val)
    return best[0], best[1]


def make_alternative(h: HardInstance, n: int, enforce_threshold: bool = True,
                     pair: tuple = (0, 0)) -> AlternativeInstance:
    """Perturb the kernel in the direction that moves ``q*`` the most.

    ``P_bar(s,a,s') = P(s,a,s') (1 + U[pair, (s,a)] (v*(s') - (P^pi q*)(s,a)) / (sqrt(2n) ||nu^pi||))``
    with ``U = (I - gamma P^pi)^{-1}``.  ``pair`` is the perturbed coordinate;
    on the hard family every coordinate ties so the default is (0, 0).
    """
    if n < 1:
        raise ValueError("n must be positive")
    if enforce_threshold and n < alternative_threshold(h) - 1e-9:
        raise ValueError(f"n={n} below the validity threshold {alternative_threshold(h):.6g}")
    mdp = h.mdp
    pi, rep = worst_policy_nu(mdp)
    from .mdp import policy_operator

    v_star, q_star, _ = solve_exact(mdp)
    S, A = mdp.n_states, mdp.n_actions
    op = policy_operator(mdp, pi)
    U = np.linalg.inv(np.eye(S * A) - mdp.gamma * op)
    row = U[pair[0] * A + pair[1]].reshape(S, A)
    pq = (op @ q_star.ravel()).reshape(S, A)
    nu_norm = math.sqrt(float(rep.nu_sq.max()))
    scale = 1.0 / (math.sqrt(2.0 * n) * nu_norm)
    delta = mdp.kernel * row[:, :, None] * (v_star[None, None, :] - pq[:, :, None]) * scale
    kernel_bar = mdp.kernel + delta
    # rows sum to one analytically; remove the rounding residue
    kernel_bar /= kernel_bar.sum(axis=2, keepdims=True)
    mdp_bar = TabularMdp(mdp.reward, kernel_bar, mdp.gamma, name=f"{mdp.name}_alt_n{n}")
    return AlternativeInstance(h, int(n), mdp_bar, hellinger_between_models(mdp, mdp_bar),
                               float(np.abs(kernel_bar - mdp.kernel).max()), pi, tuple(pair))


def hellinger_between_models(m1: TabularMdp, m2: TabularMdp) -> float:
    """Hellinger distance between the one-draw-per-pair product laws."""
    if m1.kernel.shape != m2.kernel.shape:
        raise ValueError("models have different shapes")
    affinity = np.sqrt(m1.kernel * m2.kernel).sum(axis=2)
    prod = float(np.prod(affinity))
    return math.sqrt(max(0.0, 1.0 - prod))


def qstar_gap(h: HardInstance, alt: AlternativeInstance) -> float:
    return sup_norm(solve_exact(h.mdp)[1] - solve_exact(alt.mdp_bar)[1])


def policy_minorization(mdp: TabularMdp) -> list:
    """One-step column-minimum coefficient ``p_1`` for every deterministic policy."""
    out = []
    for pi in _all_policies(mdp.n_states, mdp.n_actions):
        Pm = mdp.kernel[np.arange(mdp.n_states), pi]
        d = decompose(Pm, 1)
        out.append(0.0 if d is None else d.p)
    return out


def hard_report(h: HardInstance, n: int | None = None) -> dict:
    from .mixing import minorization_time

    rep_nu = worst_policy_nu(h.mdp)[1]
    v_star, q_star, _ = solve_exact(h.mdp)
    t_min, decomp = minorization_time(hard_kernel(h.p))
    f = f_lower_bound_check(h.p, h.gamma)
    out = {
        "p": h.p, "gamma": h.gamma, "t_nominal": h.t_minorize,
        "t_minorize": t_min, "certificate": {"m": decomp.m, "p": decomp.p},
        "v_star": v_star.tolist(), "v_gap": float(v_star[0] - v_star[1]),
        "v_gap_formula": 1.0 / (1.0 - h.gamma * (1.0 - 2.0 * h.p)),
        "nu_sq_closed_form": nu_squared_closed_form(h),
        "nu_sq_matrix": float(exact_variance_report(h.mdp, np.zeros(2, dtype=np.int64)).nu_sq[0, 0]),
        "nu_sq_max": float(rep_nu.nu_sq.max()),
        "f_value": f.f_value, "f_passes": f.passes, "in_region": f.in_region,
        "alternative_threshold": alternative_threshold(h),
    }
    if n is not None:
        alt = make_alternative(h, n, enforce_threshold=False)
        out["alternative"] = {
            "n": alt.n, "hellinger": alt.hellinger, "hellinger_bound": 1.0 / (2.0 * math.sqrt(n)),
            "perturbation": alt.perturbation, "perturbation_bound": h.p / 2.0,
            "policy_p1": policy_minorization(alt.mdp_bar),
            "qstar_gap": qstar_gap(h, alt),
            "above_threshold": n >= alternative_threshold(h),
        }
    return out
