"""Rating distributions over ordered score levels and their conversions.

A rating distribution is a length-n numpy vector of non-negative mass
summing to 1 over score levels 1..n (n defaults to 10).
"""

from __future__ import annotations

import numpy as np

N_LEVELS = 10
MASS_TOL = 1e-9
LOW, HIGH = "low", "high"
SCORE_THRESHOLD = 5.0


def validate_distribution(mass, tol=MASS_TOL):
    mass = np.asarray(mass, dtype=np.float64)
    if mass.ndim != 1:
        raise ValueError(f"distribution must be a vector, got shape {mass.shape}")
    if (mass < -tol).any():
        raise ValueError("distribution has negative mass")
    total = mass.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"distribution mass sums to {total}, expected 1")
    return mass


def from_votes(counts):
    """Normalize per-level vote counts into a distribution."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1:
        raise ValueError(f"vote counts must be a vector, got shape {counts.shape}")
    if (counts < 0).any():
        raise ValueError("vote counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("all-zero vote counts")
    return counts / total


def levels(n):
    return np.arange(1, n + 1, dtype=np.float64)


def mean_score(mass):
    """Weighted-average score of a distribution, in [1, n]."""
    mass = np.asarray(mass, dtype=np.float64)
    return float(levels(mass.shape[-1]) @ mass)


def binarize(score, threshold=SCORE_THRESHOLD):
    """Cut a score into low/high; exactly at the threshold counts as low."""
    return HIGH if score > threshold else LOW


def cdf(mass):
    return np.cumsum(np.asarray(mass, dtype=np.float64))


def discretized_gaussian(mu, sigma, n=N_LEVELS):
    """Gaussian mass over levels 1..n: mass_k proportional to exp(-(k-mu)^2 / 2 sigma^2).

    The sigma -> 0 limit degenerates to a delta at round(mu) (half-up).
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not 1 <= mu <= n:
        raise ValueError(f"mu must lie in [1, {n}], got {mu}")
    ks = levels(n)
    if sigma < 1e-6:
        out = np.zeros(n, dtype=np.float64)
        out[int(np.floor(mu + 0.5)) - 1] = 1.0
        return out
    logw = -((ks - mu) ** 2) / (2.0 * sigma * sigma)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def mean_matched_gaussian(target_mean, sigma, n=N_LEVELS, tol=1e-6):
    """Discretized gaussian whose *resulting* mean hits the target.

    Renormalizing a gaussian truncated to [1, n] pulls the mean toward the
    center, by more than 0.1 once the target is within ~1.5 sigma of either
    end.  This solves for the location parameter by bisection so generated
    labels keep mean == score; the search window [target - 3, target + 3]
    caps the residual at the extreme ends below 0.04 for sigma = 1.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not 1 <= target_mean <= n:
        raise ValueError(f"target mean must lie in [1, {n}], got {target_mean}")
    ks = levels(n)

    def mean_at(mu):
        logw = -((ks - mu) ** 2) / (2.0 * sigma * sigma)
        w = np.exp(logw - logw.max())
        w /= w.sum()
        return float(ks @ w), w

    lo, hi = target_mean - 3.0, target_mean + 3.0
    m_lo, _ = mean_at(lo)
    m_hi, _ = mean_at(hi)
    if target_mean <= m_lo:
        return mean_at(lo)[1]
    if target_mean >= m_hi:
        return mean_at(hi)[1]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        m_mid, w = mean_at(mid)
        if abs(m_mid - target_mean) < tol:
            return w
        if m_mid < target_mean:
            lo = mid
        else:
            hi = mid
    return mean_at(0.5 * (lo + hi))[1]
