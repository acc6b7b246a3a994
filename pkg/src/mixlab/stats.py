"""Small statistical helpers shared by the Monte-Carlo checks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _st


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float

    def within(self, target: float, n_se: float = 3.0) -> bool:
        return abs(self.value - target) <= n_se * self.se

    def z(self, target: float = 0.0) -> float:
        if self.se == 0.0:
            return 0.0 if self.value == target else math.copysign(math.inf, self.value - target)
        return (self.value - target) / self.se


def mean_estimate(x) -> Estimate:
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 2:
        raise ValueError("need at least two observations")
    return Estimate(float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)))


def variance_estimate(x, axis: int = 0):
    """Unbiased sample variance with a delta-method standard error.

    ``se^2 = (m4 - s^4 (n - 3) / (n - 1)) / n`` where ``m4`` is the fourth
    central sample moment.  Works along ``axis`` and returns arrays.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[axis]
    if n < 4:
        raise ValueError("need at least four observations")
    centred = x - x.mean(axis=axis, keepdims=True)
    s2 = (centred**2).sum(axis=axis) / (n - 1)
    m4 = (centred**4).mean(axis=axis)
    var_of_s2 = np.maximum(m4 - s2**2 * (n - 3) / (n - 1), 0.0) / n
    return s2, np.sqrt(var_of_s2)


def dependent_mean_estimate(z_groups, max_lag: int) -> Estimate:
    """Mean of a stationary ``max_lag``-dependent sequence split into groups.

    Each group is one independent sequence (e.g. one simulated path); the
    long-run variance adds autocovariances up to ``max_lag`` computed within
    groups only.
    """
    groups = [np.asarray(g, dtype=np.float64) for g in z_groups if len(g) > 0]
    if not groups:
        raise ValueError("no observations")
    allz = np.concatenate(groups)
    n = allz.size
    mu = allz.mean()
    gam = [float(((allz - mu) ** 2).sum())]
    for lag in range(1, max_lag + 1):
        tot = 0.0
        for g in groups:
            if g.size > lag:
                c = g - mu
                tot += float((c[:-lag] * c[lag:]).sum())
        gam.append(tot)
    long_run = (gam[0] + 2.0 * sum(gam[1:])) / n
    # a negative long-run estimate can only come from noise; fall back to lag 0
    if long_run <= 0.0:
        long_run = gam[0] / n
    return Estimate(float(mu), math.sqrt(long_run / n))


def clopper_pearson(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    """One-sided exact binomial bounds ``(lower, upper)`` at ``confidence``."""
    if trials <= 0 or not 0 <= successes <= trials:
        raise ValueError("invalid binomial counts")
    alpha = 1.0 - confidence
    lo = 0.0 if successes == 0 else float(_st.beta.ppf(alpha, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(_st.beta.ppf(1 - alpha, successes + 1, trials - successes))
    return lo, hi


def chisquare_against(counts, probs, min_prob: float = 0.0) -> float:
    """Pearson goodness-of-fit p-value, dropping zero-probability categories."""
    counts = np.asarray(counts, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    keep = probs > min_prob
    if counts[~keep].sum() > 0:
        return 0.0
    counts, probs = counts[keep], probs[keep] / probs[keep].sum()
    if counts.size < 2:
        return 1.0
    return float(_st.chisquare(counts, counts.sum() * probs).pvalue)


def loglog_slope(x, y) -> tuple[float, float]:
    """Least-squares slope of ``log y`` on ``log x`` with its standard error."""
    x = np.log(np.asarray(x, dtype=np.float64))
    y = np.log(np.asarray(y, dtype=np.float64))
    if x.size < 3:
        raise ValueError("need at least three points for a slope with standard error")
    if np.ptp(x) == 0.0:
        raise ValueError("degenerate grid: all x values equal")
    res = _st.linregress(x, y)
    return float(res.slope), float(res.stderr)
