"""Q-learning, variance-reduced Q-learning, and their parameter schedules.

Every step of both learners draws one full empirical Bellman operator (one
next state per pair), so ``k`` steps cost ``|S||A| k`` samples.

Settings and their schedules (``t`` is the minorization-time bound, ``SA``
the number of pairs, ``g`` the discount):

``general``  one optimal policy mixes.
    ``d = SA (ceil(ln(1/((1-g) eps))) + 1)``,
    ``k0 = c0 ln(2d/((1-g) delta)) / (1-g)^3``,
    ``k* = c1 ln(8d/((1-g) delta)) / (1-g)^3``,
    ``n_l = 3 c2 4^l ln(8d/delta) / (1-g)^2``, ``l* = ceil(log2(t/eps))``,
    epochs start from radius ``b = t``.
``uniform``  every policy mixes.
    ``d = SA (ceil(ln(1/(sqrt(1-g) eps))) + 1)``,
    ``k* = c1 ln(2d/((1-g) delta)) / (1-g)^3``,
    ``n_l = c2 4^l ln(8d/delta) / (1-g)^2``, ``l* = ceil(log2(sqrt(t)/eps))``,
    ``b = sqrt(t)``.  The warm start is either a full ``general`` run at
    ``eps = sqrt(t)``, ``delta / (l* + 1)`` (default) or plain Q-learning with
    ``k0 = c0 t ln(2 d t/((1-g) delta)) / (1-g)^3``.
``unique_or_lipschitz``  optimal policies mix uniformly and are unique or
    Lipschitz.  Driven by a target
    ``n* = c1 t ln4(8 SA l*/delta) / (eps^2 (1-g)^2)`` with
    ``l* = ceil(log4(n* (1-g)^2 / (8 ln((16 SA/delta) ln n*))))``,
    ``n_l = 4^l log4(16 l* SA/delta) / (1-g)^2``, ``k* = ceil(n*/(2 l*))``,
    ``k0 = c0 t^2 ln(4 SA/((1-g) delta)) / (1-g)^2``, ``b = 1/sqrt(1-g)``.
``custom``  all of ``k0, k*, n_l, l*`` given explicitly.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .mdp import TabularMdp, greedy_policy, policy_operator, sup_norm
from .sampler import GenerativeModel

SETTINGS = ("general", "unique_or_lipschitz", "uniform", "custom")
_ALIASES = {
    "general": "general",
    "generaloptimalmixing": "general",
    "unique_or_lipschitz": "unique_or_lipschitz",
    "uniqueorlipschitz": "unique_or_lipschitz",
    "uniform": "uniform",
    "uniformmixing": "uniform",
    "custom": "custom",
}


class ScheduleError(ValueError):
    """Schedule parameters are invalid or inconsistent with their setting."""


def canonical_setting(name: str) -> str:
    key = str(name).replace("-", "_").lower()
    key = _ALIASES.get(key, _ALIASES.get(key.replace("_", ""), None))
    if key is None:
        raise ScheduleError(f"unknown setting {name!r}; expected one of {SETTINGS}")
    return key


def step_size(k: int, gamma: float) -> float:
    return 1.0 / (1.0 + (1.0 - gamma) * k)


@dataclass(frozen=True)
class Constants:
    c0: float = 1.0
    c1: float = 1.0
    c2: float = 1.0

    def __post_init__(self) -> None:
        if min(self.c0, self.c1, self.c2) <= 0:
            raise ScheduleError("constants must be positive")


@dataclass(frozen=True)
class LearnerSchedule:
    """All parameters of one combined run.

    ``n_ls[l - 1]`` is the recentering batch of epoch ``l``.  When
    ``warm_start`` is set, the initial estimate comes from running that
    schedule in full instead of ``k0`` Q-learning steps (``k0`` is then 0).
    """

    setting: str
    n_states: int
    n_actions: int
    gamma: float
    epsilon: float
    delta: float
    t_minorize_bound: float
    k0: int
    k_star: int
    n_ls: tuple
    l_star: int
    b: float
    constants: Constants = field(default_factory=Constants)
    beta: float | None = None
    lipschitz_L: float | None = None
    gap_Delta: float | None = None
    warm_start: "LearnerSchedule | None" = None
    n_target: int | None = None

    def step_size(self, k: int) -> float:
        return step_size(k, self.gamma)

    def n_l(self, l: int) -> int:
        if not 1 <= l <= self.l_star:
            raise IndexError(f"epoch {l} outside 1..{self.l_star}")
        return self.n_ls[l - 1]

    @property
    def warm_start_operators(self) -> int:
        return self.warm_start.total_operators if self.warm_start is not None else self.k0

    @property
    def total_operators(self) -> int:
        return self.warm_start_operators + sum(self.n_ls) + self.l_star * self.k_star

    def validate(self) -> "LearnerSchedule":
        """Reject parameters that break the setting's invariants."""
        if canonical_setting(self.setting) != self.setting:
            raise ScheduleError(f"non-canonical setting {self.setting!r}")
        if self.k0 < 0 or self.k_star < 1 or self.l_star < 0:
            raise ScheduleError("need k0 >= 0, k* >= 1, l* >= 0")
        if len(self.n_ls) != self.l_star or any(int(n) != n or n < 1 for n in self.n_ls):
            raise ScheduleError("n_ls must hold l* positive integers")
        if not 0.0 < self.gamma < 1.0:
            raise ScheduleError("gamma must lie in (0, 1)")
        if self.setting == "custom":
            return self
        expected = make_schedule(
            self.setting, (self.n_states, self.n_actions), self.gamma, self.epsilon, self.delta,
            self.t_minorize_bound, self.constants, beta=self.beta, lipschitz_L=self.lipschitz_L,
            gap_Delta=self.gap_Delta,
            warm_start="general" if self.warm_start is not None else "q_learning")
        if expected != self:
            raise ScheduleError(f"schedule parameters inconsistent with setting {self.setting!r}")
        return self

    def to_dict(self) -> dict:
        d = {
            "setting": self.setting, "n_states": self.n_states, "n_actions": self.n_actions,
            "gamma": self.gamma, "epsilon": self.epsilon, "delta": self.delta,
            "t_minorize_bound": self.t_minorize_bound, "k0": self.k0, "k_star": self.k_star,
            "n_ls": list(self.n_ls), "l_star": self.l_star, "b": self.b,
            "constants": {"c0": self.constants.c0, "c1": self.constants.c1, "c2": self.constants.c2},
            "beta": self.beta, "lipschitz_L": self.lipschitz_L, "gap_Delta": self.gap_Delta,
            "n_target": self.n_target, "total_operators": self.total_operators,
        }
        d["warm_start"] = self.warm_start.to_dict() if self.warm_start is not None else None
        return d


def _ceil(x: float) -> int:
    # guard against 4^l-style products landing a hair above an integer
    r = round(x)
    return int(r) if abs(x - r) <= 1e-9 * max(1.0, abs(x)) else int(math.ceil(x))


def _check_common(gamma: float, epsilon: float, delta: float, t: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise ScheduleError("gamma must lie in (0, 1)")
    if not epsilon > 0.0:
        raise ScheduleError("epsilon must be positive")
    if not 0.0 < delta < 1.0:
        raise ScheduleError("delta must lie in (0, 1)")
    if not t >= 1.0:
        raise ScheduleError("a minorization time is at least 1")


def _general(dims, gamma, epsilon, delta, t, c: Constants) -> LearnerSchedule:
    if epsilon > t:
        raise ScheduleError(f"general setting needs epsilon <= t_minorize ({epsilon} > {t})")
    sa = dims[0] * dims[1]
    h = 1.0 - gamma
    d = sa * (math.ceil(math.log(1.0 / (h * epsilon))) + 1)
    d = max(d, sa)
    k0 = _ceil(c.c0 / h**3 * math.log(2 * d / (h * delta)))
    k_star = _ceil(c.c1 / h**3 * math.log(8 * d / (h * delta)))
    l_star = max(0, math.ceil(math.log2(t / epsilon) - 1e-12))
    n_ls = tuple(_ceil(3 * c.c2 * 4**l / h**2 * math.log(8 * d / delta)) for l in range(1, l_star + 1))
    return LearnerSchedule("general", dims[0], dims[1], gamma, epsilon, delta, t, k0, k_star,
                           n_ls, l_star, float(t), c)


def _uniform(dims, gamma, epsilon, delta, t, c: Constants, warm_start: str) -> LearnerSchedule:
    root_t = math.sqrt(t)
    if epsilon > root_t:
        raise ScheduleError(f"uniform setting needs epsilon <= sqrt(t_minorize) ({epsilon} > {root_t})")
    sa = dims[0] * dims[1]
    h = 1.0 - gamma
    d = sa * (math.ceil(math.log(1.0 / (math.sqrt(h) * epsilon))) + 1)
    d = max(d, sa)
    k_star = _ceil(c.c1 / h**3 * math.log(2 * d / (h * delta)))
    l_star = max(0, math.ceil(math.log2(root_t / epsilon) - 1e-12))
    n_ls = tuple(_ceil(c.c2 * 4**l / h**2 * math.log(8 * d / delta)) for l in range(1, l_star + 1))
    if warm_start == "general":
        ws = _general(dims, gamma, root_t, delta / (l_star + 1), t, c)
        k0 = 0
    elif warm_start == "q_learning":
        ws = None
        k0 = _ceil(c.c0 * t / h**3 * math.log(2 * d * t / (h * delta)))
    else:
        raise ScheduleError(f"unknown warm start {warm_start!r}")
    return LearnerSchedule("uniform", dims[0], dims[1], gamma, epsilon, delta, t, k0, k_star,
                           n_ls, l_star, root_t, c, warm_start=ws)


def _log4(x: float) -> float:
    return math.log(x) / math.log(4.0)


def _unique_or_lipschitz(dims, gamma, epsilon, delta, t, c: Constants, beta, L, Delta) -> LearnerSchedule:
    sa = dims[0] * dims[1]
    h = 1.0 - gamma
    l_star = 1
    n_target = 0.0
    # l* enters n* only through a logarithm; two passes settle it
    for _ in range(2):
        n_target = c.c1 * t / (epsilon**2 * h**2) * _log4(8 * sa * l_star / delta)
        inner = 8.0 * math.log((16 * sa / delta) * math.log(max(n_target, math.e)))
        l_star = max(1, math.ceil(_log4(n_target * h**2 / inner)))
    n_target = c.c1 * t / (epsilon**2 * h**2) * _log4(8 * sa * l_star / delta)
    n_target_int = _ceil(n_target)
    n_ls = tuple(_ceil(4**l / h**2 * _log4(16 * l_star * sa / delta)) for l in range(1, l_star + 1))
    k_star = max(1, _ceil(n_target_int / (2 * l_star)))
    k0 = _ceil(c.c0 * t**2 / h**2 * math.log(4 * sa / (h * delta)))
    return LearnerSchedule("unique_or_lipschitz", dims[0], dims[1], gamma, epsilon, delta, t, k0,
                           k_star, n_ls, l_star, 1.0 / math.sqrt(h), c,
                           beta=0.1 if beta is None else float(beta), lipschitz_L=L, gap_Delta=Delta,
                           n_target=n_target_int)


def make_schedule(setting: str, dims, gamma: float, epsilon: float, delta: float,
                  t_minorize_bound: float, constants: Constants | None = None, *,
                  beta: float | None = None, lipschitz_L: float | None = None,
                  gap_Delta: float | None = None, warm_start: str = "general",
                  k0: int | None = None, k_star: int | None = None, n_ls=None,
                  l_star: int | None = None, b: float | None = None) -> LearnerSchedule:
    setting = canonical_setting(setting)
    c = constants or Constants()
    dims = (int(dims[0]), int(dims[1]))
    gamma, epsilon, delta, t = float(gamma), float(epsilon), float(delta), float(t_minorize_bound)
    if setting == "custom":
        if k0 is None or k_star is None or n_ls is None:
            raise ScheduleError("custom schedule needs k0, k_star and n_ls")
        n_ls = tuple(int(n) for n in n_ls)
        ls = len(n_ls) if l_star is None else int(l_star)
        sched = LearnerSchedule("custom", dims[0], dims[1], gamma, epsilon, delta, t, int(k0),
                                int(k_star), n_ls, ls, float(b if b is not None else t), c)
        return sched.validate()
    _check_common(gamma, epsilon, delta, t)
    if setting == "general":
        return _general(dims, gamma, epsilon, delta, t, c)
    if setting == "uniform":
        return _uniform(dims, gamma, epsilon, delta, t, c, warm_start)
    return _unique_or_lipschitz(dims, gamma, epsilon, delta, t, c, beta, lipschitz_L, gap_Delta)


def theoretical_sample_bound(schedule: LearnerSchedule, mdp_dims=None) -> int:
    """``|S||A| (k0 + sum_l n_l + l* k*)``, with a nested warm start counted in full."""
    if mdp_dims is None:
        mdp_dims = (schedule.n_states, schedule.n_actions)
    return int(mdp_dims[0]) * int(mdp_dims[1]) * schedule.total_operators


def k2_conditions(schedule: LearnerSchedule) -> dict:
    """Sample-size thresholds of the unique/Lipschitz analysis (constant ``c1``).

    These are reported, not enforced: the analysis only says they hold for
    some unspecified constant.
    """
    if schedule.setting != "unique_or_lipschitz":
        raise ScheduleError("only defined for the unique_or_lipschitz setting")
    h = 1.0 - schedule.gamma
    n = float(schedule.n_target)
    lhs = n / math.log(n) ** 2
    base = schedule.constants.c1 * math.log(schedule.n_states * schedule.n_actions / schedule.delta)
    beta = schedule.beta
    out = {"lhs": lhs}
    if schedule.gap_Delta is not None and schedule.gap_Delta > 0:
        D = schedule.gap_Delta
        out["unique_rhs"] = base / h**3 * max(1.0, 1.0 / (D**2 * h**beta))
        out["unique_ok"] = lhs >= out["unique_rhs"]
        if schedule.lipschitz_L is not None:
            L = schedule.lipschitz_L
            out["lipschitz_rhs"] = base / h ** (3 + beta) * min(1.0 / D**2, L**2 / h**2)
            out["lipschitz_ok"] = lhs >= out["lipschitz_rhs"]
    return out


# ---------------------------------------------------------------------------
# learners


@dataclass
class LearnerResult:
    q_hat: np.ndarray
    per_epoch_errors: list
    samples_used: int
    wall_time: float
    warm_start: "LearnerResult | None" = None

    @property
    def final_error(self) -> float | None:
        return self.per_epoch_errors[-1] if self.per_epoch_errors else None

    def success(self, epsilon: float) -> bool:
        if self.final_error is None:
            raise ValueError("no ground truth was supplied")
        return self.final_error <= epsilon

    def halving_holds(self, b: float) -> bool:
        """``||q_l - q*|| <= 2^-l b`` for every recorded ``l`` (``l = 0`` is the warm start)."""
        return all(e <= b * 2.0**-l for l, e in enumerate(self.per_epoch_errors))


def q_learning(gm: GenerativeModel, k_steps: int, q_init=None, k_offset: int = 0) -> np.ndarray:
    """Synchronous Q-learning from ``q_init`` (zeros by default)."""
    if k_steps < 0:
        raise ValueError("k_steps must be nonnegative")
    shape = gm.mdp.reward.shape
    q = np.zeros(shape) if q_init is None else np.array(q_init, dtype=np.float64)
    if q.shape != shape:
        raise ValueError("q_init has the wrong shape")
    if k_steps:
        gm.q_learning_steps(q, k_steps, k_offset)
    return q


def recentering_mean(gm: GenerativeModel, anchor: np.ndarray, n_l: int) -> np.ndarray:
    """Average of ``n_l`` empirical Bellman operators at ``anchor``."""
    counts = gm.recentering_counts(n_l)
    mdp = gm.mdp
    return mdp.reward + mdp.gamma * (counts.astype(np.float64) @ anchor.max(axis=1)) / n_l


def vr_epoch(gm: GenerativeModel, q_anchor, n_l: int, k_star: int) -> np.ndarray:
    """One outer epoch: recentering batch then ``k_star`` recentered steps from the anchor."""
    if n_l < 1 or k_star < 1:
        raise ValueError("n_l and k_star must be >= 1")
    anchor = np.ascontiguousarray(q_anchor, dtype=np.float64)
    recentered = recentering_mean(gm, anchor, n_l)
    q = anchor.copy()
    gm.recentered_steps(q, anchor, recentered, k_star)
    return q


def run_combined(gm: GenerativeModel, schedule: LearnerSchedule, ground_truth=None) -> LearnerResult:
    """Warm start followed by ``l*`` variance-reduced epochs."""
    schedule.validate()
    if (schedule.n_states, schedule.n_actions) != gm.mdp.reward.shape:
        raise ScheduleError("schedule dimensions do not match the model")
    err = (lambda q: sup_norm(q - ground_truth)) if ground_truth is not None else None
    t0 = time.perf_counter()
    start = gm.total
    warm = None
    if schedule.warm_start is not None:
        warm = run_combined(gm, schedule.warm_start, ground_truth)
        q = warm.q_hat.copy()
    else:
        q = q_learning(gm, schedule.k0)
    errors = [err(q)] if err else []
    for l in range(1, schedule.l_star + 1):
        q = vr_epoch(gm, q, schedule.n_l(l), schedule.k_star)
        if err:
            errors.append(err(q))
    return LearnerResult(q, errors, gm.total - start, time.perf_counter() - t0, warm)


# ---------------------------------------------------------------------------
# recentred operator, perturbed fixed point, Lipschitz falsifier


def recentered_operator(mdp: TabularMdp, anchor: np.ndarray, recentered: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Population operator ``J(q) = T(q) - T(anchor) + recentered``."""
    from .mdp import bellman_operator

    return bellman_operator(mdp, q) - bellman_operator(mdp, anchor) + recentered


def perturbed_reward(mdp: TabularMdp, anchor: np.ndarray, recentered: np.ndarray) -> np.ndarray:
    from .mdp import bellman_operator

    return mdp.reward - bellman_operator(mdp, anchor) + recentered


def perturbed_fixed_point(mdp: TabularMdp, anchor, recentered, tol: float = 1e-12,
                          max_iter: int = 1_000_000) -> np.ndarray:
    """Fixed point of ``J`` by iterating ``q <- r_bar + gamma P max q``."""
    r_bar = perturbed_reward(mdp, anchor, recentered)
    q = np.zeros_like(r_bar)
    threshold = tol * (1.0 - mdp.gamma)
    for _ in range(max_iter):
        nxt = r_bar + mdp.gamma * (mdp.kernel @ q.max(axis=1))
        if sup_norm(nxt - q) <= threshold:
            return nxt
        q = nxt
    raise RuntimeError("perturbed fixed point iteration did not converge")


def optimal_policies(q_star: np.ndarray, tie_tol: float = 1e-10, limit: int = 4096):
    """All deterministic greedy policies of ``q_star`` (or the lowest-index one if too many)."""
    best = q_star.max(axis=1, keepdims=True)
    choices = [np.flatnonzero(row >= b - tie_tol) for row, b in zip(q_star, best[:, 0])]
    if math.prod(len(c) for c in choices) > limit:
        return [greedy_policy(q_star)]
    return [np.array(p, dtype=np.int64) for p in itertools.product(*choices)]


@dataclass(frozen=True)
class LipschitzProbe:
    max_ratio: float
    n_probes: int
    falsified: bool


def lipschitz_falsifier(mdp: TabularMdp, q_star: np.ndarray, L: float, n_probes: int,
                        seed: int, radii=(1e-3, 1e-2, 1e-1, 1.0)) -> LipschitzProbe:
    """Search for ``q~`` violating ``||(P^pi~ - P^pi*)(q~ - q*)|| <= L ||q~ - q*||^2``.

    ``pi~`` is greedy in ``q~``; the left side is minimised over optimal
    ``pi*`` so a reported violation holds for every optimal policy.  The check
    can refute the condition but never certify it.
    """
    rng = np.random.default_rng(seed)
    stars = [policy_operator(mdp, pi) for pi in optimal_policies(q_star)]
    worst = 0.0
    for i in range(n_probes):
        radius = radii[i % len(radii)]
        direction = rng.uniform(-1.0, 1.0, size=q_star.shape)
        diff = radius * direction / sup_norm(direction)
        q_t = q_star + diff
        op_t = policy_operator(mdp, greedy_policy(q_t))
        lhs = min(sup_norm((op_t - op_s) @ diff.ravel()) for op_s in stars)
        worst = max(worst, lhs / sup_norm(diff) ** 2)
    return LipschitzProbe(worst, n_probes, worst > L)


def with_constants(schedule: LearnerSchedule, constants: Constants) -> LearnerSchedule:
    """Rebuild a non-custom schedule under new constants."""
    if schedule.setting == "custom":
        return replace(schedule, constants=constants)
    return make_schedule(schedule.setting, (schedule.n_states, schedule.n_actions), schedule.gamma,
                         schedule.epsilon, schedule.delta, schedule.t_minorize_bound, constants,
                         beta=schedule.beta, lipschitz_L=schedule.lipschitz_L,
                         gap_Delta=schedule.gap_Delta,
                         warm_start="general" if schedule.warm_start is not None else "q_learning")
