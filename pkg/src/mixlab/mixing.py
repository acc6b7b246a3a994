"""Mixing and minorization times of finite Markov kernels.

Definitions used here:

* ``t_mix``: smallest ``t >= 1`` with ``max_s TV(P^t(s, .), eta) <= 1/4``.
* ``(m, p)``-Doeblin certificate: ``P^m(s, .) >= p psi(.)`` for every ``s``.
  For fixed ``m`` the largest such ``p`` is the sum of the column minima of
  ``P^m`` with ``psi`` proportional to those minima.
* ``t_minorize``: infimum of ``m / p`` over certificates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

STOCH_TOL = 1e-12
CERT_TOL = 1e-10
TV_THRESHOLD = 0.25
# slack on threshold comparisons so exact ties are not lost to rounding
CMP_TOL = 1e-12
# ceiling on the exact minorization scan (reported as a boundary hit)
EXACT_SEARCH_CAP = 4096


class NotErgodicError(ValueError):
    """No Doeblin certificate exists within the searched horizon."""


class HorizonError(RuntimeError):
    """A search ran past its horizon without finding what it looked for."""


def check_kernel(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise ValueError(f"kernel must be a nonempty square matrix, got shape {P.shape}")
    if not np.all(np.isfinite(P)) or P.min() < 0.0:
        raise ValueError("kernel entries must be finite and nonnegative")
    err = np.abs(P.sum(axis=1) - 1.0).max()
    if err > STOCH_TOL:
        raise ValueError(f"kernel rows must sum to 1 (max deviation {err:.3e})")
    return P


def check_distribution(mu, n: int | None = None) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim != 1 or (n is not None and mu.shape[0] != n):
        raise ValueError(f"distribution has shape {mu.shape}, expected ({n},)")
    if mu.min() < 0.0 or abs(mu.sum() - 1.0) > STOCH_TOL:
        raise ValueError("not a probability vector")
    return mu


def tv_distance(mu, nu) -> float:
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    if mu.shape != nu.shape:
        raise ValueError(f"dimension mismatch: {mu.shape} vs {nu.shape}")
    check_distribution(mu)
    check_distribution(nu)
    return float(0.5 * np.abs(mu - nu).sum())


def worst_tv(Pn: np.ndarray, eta: np.ndarray) -> float:
    """``max_s TV(Pn(s, .), eta)``."""
    return float(0.5 * np.abs(Pn - eta[None, :]).sum(axis=1).max())


class MatrixPowers:
    """Lazily extended cache ``P^1, P^2, ...`` with guarded row renormalisation."""

    def __init__(self, P) -> None:
        self.P = check_kernel(P)
        self._powers = [np.eye(self.P.shape[0]), self.P.copy()]

    def __getitem__(self, k: int) -> np.ndarray:
        if k < 0:
            raise ValueError("negative power")
        while len(self._powers) <= k:
            nxt = self._powers[-1] @ self.P
            np.maximum(nxt, 0.0, out=nxt)
            rows = nxt.sum(axis=1, keepdims=True)
            if np.abs(rows - 1.0).max() > STOCH_TOL:
                nxt /= rows
            self._powers.append(nxt)
        return self._powers[k]


@dataclass(frozen=True, eq=False)
class DoeblinDecomposition:
    """Certificate ``P^m = p psi + (1 - p) R``."""

    m: int
    p: float
    psi: np.ndarray
    residual: np.ndarray

    def __post_init__(self) -> None:
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("m must be a positive integer")
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        psi = check_distribution(self.psi)
        res = check_kernel(self.residual)
        if res.shape[0] != psi.shape[0]:
            raise ValueError("psi and residual sizes differ")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "residual", res)

    @property
    def ratio(self) -> float:
        return self.m / self.p

    @property
    def n_states(self) -> int:
        return self.psi.shape[0]

    def reconstruction_error(self, P, powers: MatrixPowers | None = None) -> float:
        Pm = (powers or MatrixPowers(P))[self.m]
        recon = self.p * self.psi[None, :] + (1.0 - self.p) * self.residual
        return float(np.abs(recon - Pm).max())

    def certifies(self, P, tol: float = CERT_TOL, powers: MatrixPowers | None = None) -> bool:
        return self.reconstruction_error(P, powers) <= tol

    def weaken(self, q: float) -> "DoeblinDecomposition":
        """The ``(m, q)`` certificate implied by this one for ``0 < q <= p``."""
        if not 0.0 < q <= self.p:
            raise ValueError(f"q must lie in (0, {self.p}]")
        if q == self.p:
            return self
        res = ((self.p - q) * self.psi[None, :] + (1.0 - self.p) * self.residual) / (1.0 - q)
        res /= res.sum(axis=1, keepdims=True)
        return DoeblinDecomposition(self.m, q, self.psi, res)


def decompose(Pm: np.ndarray, m: int) -> DoeblinDecomposition | None:
    """Column-minimum certificate for ``P^m``; ``None`` when ``p_m = 0``."""
    colmin = Pm.min(axis=0)
    p = float(colmin.sum())
    if p <= 0.0:
        return None
    psi = colmin / p
    n = Pm.shape[0]
    if p >= 1.0 - STOCH_TOL:
        return DoeblinDecomposition(m, 1.0, psi, np.tile(psi, (n, 1)))
    res = (Pm - p * psi[None, :]) / (1.0 - p)
    np.maximum(res, 0.0, out=res)
    res /= res.sum(axis=1, keepdims=True)
    return DoeblinDecomposition(m, p, psi, res)


def minorization_coefficients(P, m_max: int) -> np.ndarray:
    """``p_m`` for ``m = 1..m_max`` (index 0 is ``m = 1``)."""
    powers = MatrixPowers(P)
    return np.array([powers[m].min(axis=0).sum() for m in range(1, m_max + 1)])


def default_ergodicity_horizon(n_states: int) -> int:
    # a transient state reaches the recurrent class within n steps and a
    # primitive n-by-n matrix is positive from power (n-1)^2 + 1 on
    return n_states * n_states + 2


@dataclass(frozen=True)
class MinorizationResult:
    t_minorize: float
    decomposition: DoeblinDecomposition
    m_searched: int
    on_boundary: bool


def minorization_search(P, m_max: int | None = None,
                        powers: MatrixPowers | None = None) -> MinorizationResult:
    """Minimise ``m / p_m`` over ``m``.

    With ``m_max=None`` the search is exact: since ``p_m <= 1`` every
    ``m`` larger than the best ratio found so far cannot improve it, so the
    scan stops there.  With an explicit ``m_max`` the scan is truncated and
    ``on_boundary`` flags a minimiser sitting on the last searched ``m``.
    """
    P = check_kernel(P)
    powers = powers or MatrixPowers(P)
    n = P.shape[0]
    if m_max is not None and m_max < 1:
        raise ValueError("m_max must be >= 1")
    horizon = default_ergodicity_horizon(n)
    best: DoeblinDecomposition | None = None
    m = 0
    while True:
        m += 1
        if m_max is not None and m > m_max:
            break
        if best is None and m_max is None and m > horizon:
            break
        if best is not None and m > best.ratio:
            break
        if m_max is None and m > EXACT_SEARCH_CAP:
            break
        cand = decompose(powers[m], m)
        if cand is not None and (best is None or cand.ratio < best.ratio * (1.0 - CMP_TOL)):
            best = cand
    searched = m - 1
    if best is None:
        raise NotErgodicError(f"no Doeblin certificate for m <= {searched}: not uniformly ergodic at this horizon")
    limit = m_max if m_max is not None else EXACT_SEARCH_CAP
    on_boundary = searched >= limit and best.ratio > limit
    return MinorizationResult(best.ratio, best, searched, on_boundary)


def minorization_time(P, m_max: int | None = None) -> tuple[float, DoeblinDecomposition]:
    res = minorization_search(P, m_max)
    return res.t_minorize, res.decomposition


def stationary_distribution(P, m_max: int | None = None) -> np.ndarray:
    """Unique stationary law of a uniformly ergodic kernel."""
    P = check_kernel(P)
    n = P.shape[0]
    powers = MatrixPowers(P)
    horizon = m_max if m_max is not None else default_ergodicity_horizon(n)
    if not any(powers[m].min(axis=0).sum() > 0.0 for m in range(1, horizon + 1)):
        raise NotErgodicError(f"no Doeblin certificate for m <= {horizon}")
    a = np.vstack([(np.eye(n) - P).T, np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    eta, *_ = np.linalg.lstsq(a, b, rcond=None)
    eta = np.maximum(eta, 0.0)
    eta /= eta.sum()
    resid = np.abs(eta @ P - eta).max()
    if resid > 1e-10:
        raise HorizonError(f"stationary solve residual {resid:.3e} exceeds 1e-10")
    return eta


def mixing_time(P, n_max: int = 100_000, eta: np.ndarray | None = None,
                powers: MatrixPowers | None = None) -> int:
    P = check_kernel(P)
    if eta is None:
        eta = stationary_distribution(P)
    powers = powers or MatrixPowers(P)
    for t in range(1, n_max + 1):
        if worst_tv(powers[t], eta) <= TV_THRESHOLD + CMP_TOL:
            return t
    raise HorizonError(f"worst-start TV still above 1/4 at n_max={n_max}")


def separation_time(P, q: float, phi, m_max: int = 10_000) -> int:
    P = check_kernel(P)
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    phi = check_distribution(phi, P.shape[0])
    powers = MatrixPowers(P)
    target = q * phi
    for m in range(1, m_max + 1):
        if np.all(powers[m].min(axis=0) >= target - CMP_TOL):
            return m
    raise HorizonError(f"no m <= {m_max} with inf_s P^m(s, .) >= q phi")


def tv_decay(P, eta: np.ndarray, n_max: int, powers: MatrixPowers | None = None):
    powers = powers or MatrixPowers(P)
    return [(n, worst_tv(powers[n], eta)) for n in range(1, n_max + 1)]


def decay_bound(decomp: DoeblinDecomposition, n: int) -> float:
    return 2.0 * (1.0 - decomp.p) ** (n // decomp.m)


def decay_dominated(decay, decomp: DoeblinDecomposition, tol: float = CERT_TOL) -> bool:
    return all(tv <= decay_bound(decomp, n) + tol for n, tv in decay)


@dataclass(frozen=True, eq=False)
class MixingReport:
    t_mix: int
    t_minorize: float
    best_decomposition: DoeblinDecomposition
    stationary: np.ndarray
    tv_decay: list
    checks: dict = field(default_factory=dict)
    on_boundary: bool = False

    @property
    def all_hold(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        d = self.best_decomposition
        return {
            "t_mix": self.t_mix,
            "t_minorize": self.t_minorize,
            "certificate": {"m": d.m, "p": d.p, "psi": d.psi.tolist()},
            "stationary": self.stationary.tolist(),
            "tv_decay": [[n, tv] for n, tv in self.tv_decay],
            "checks": dict(self.checks),
            "on_boundary": self.on_boundary,
        }


def verify_equivalence(P, m_max: int | None = None, decay_blocks: int = 10) -> MixingReport:
    """Compute both times and check the equivalence inequalities.

    Checks ``t_minorize <= 22 t_mix``, ``t_mix <= log(16) m / p`` for the best
    certificate, and TV decay dominance for ``n <= decay_blocks * m``.
    """
    P = check_kernel(P)
    powers = MatrixPowers(P)
    eta = stationary_distribution(P)
    t_mix = mixing_time(P, eta=eta, powers=powers)
    res = minorization_search(P, m_max, powers=powers)
    decomp = res.decomposition
    decay = tv_decay(P, eta, max(decay_blocks * decomp.m, t_mix), powers=powers)
    checks = {
        "t_minorize_le_22_t_mix": res.t_minorize <= 22.0 * t_mix + CMP_TOL,
        "t_mix_le_log16_ratio": t_mix <= math.log(16.0) * decomp.ratio + CMP_TOL,
        "tv_decay_dominated": decay_dominated(decay, decomp),
    }
    return MixingReport(t_mix, res.t_minorize, decomp, eta, decay, checks, res.on_boundary)
