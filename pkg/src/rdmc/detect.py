"""Poisson particle-counting detection.

A transparent receiver counts molecules in a volume V, so the count is
Poisson with mean V * rho for the hypothesis in force. Everything here works
in log space so very large means stay safe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from ._accel import USE_NUMBA, jit
from .errors import DegenerateMeans, EmptyHypothesisSet, NonPositiveMean, ValidationError


def window(max_mean: float) -> int:
    """Largest count kept in sums; the Poisson tail beyond it is < 1e-12."""
    return int(math.ceil(max_mean + 40.0 * math.sqrt(max_mean) + 40.0))


def support(means) -> np.ndarray:
    """Counts carrying non-negligible mass under any hypothesis.

    The union of ``[m - 40 sqrt(m) - 40, m + 40 sqrt(m) + 40]`` over the
    means; outside it every pmf is below exp(-700).
    """
    spans = []
    for m in sorted(float(x) for x in means):
        w = 40.0 * math.sqrt(m) + 40.0
        lo, hi = max(0, int(math.floor(m - w))), window(m)
        if spans and lo <= spans[-1][1] + 1:
            spans[-1][1] = max(spans[-1][1], hi)
        else:
            spans.append([lo, hi])
    return np.concatenate([np.arange(lo, hi + 1) for lo, hi in spans])


def poisson_logpmf(k, mu):
    k = np.asarray(k, dtype=float)
    mu = np.asarray(mu, dtype=float)
    with np.errstate(divide="ignore"):
        return xlogy(k, mu) - mu - gammaln(k + 1.0)


@dataclass(frozen=True)
class HypothesisSet:
    means: tuple
    priors: Optional[tuple] = None
    labels: Optional[tuple] = None

    def __post_init__(self):
        m = tuple(float(x) for x in self.means)
        if len(m) == 0:
            raise EmptyHypothesisSet("no hypotheses")
        if any(x < 0 or not math.isfinite(x) for x in m):
            raise ValidationError(f"means must be finite and nonnegative: {m}")
        p = tuple([1.0 / len(m)] * len(m)) if self.priors is None else tuple(float(x) for x in self.priors)
        if len(p) != len(m) or any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-12:
            raise ValidationError("priors must be nonnegative, one per mean, and sum to 1")
        lab = tuple(range(len(m))) if self.labels is None else tuple(self.labels)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "priors", p)
        object.__setattr__(self, "labels", lab)


def map_threshold(rho0: float, rho1: float) -> float:
    """(rho1 - rho0) / (log rho1 - log rho0); declare H0 iff X < threshold."""
    if rho0 <= 0 or rho1 <= 0:
        raise NonPositiveMean(f"means must be positive, got {rho0}, {rho1}")
    if rho0 == rho1:
        raise DegenerateMeans(f"equal means {rho0}")
    if rho0 > rho1:
        raise ValidationError("expects rho0 < rho1")
    return (rho1 - rho0) / (math.log(rho1) - math.log(rho0))


def _log_table(means: np.ndarray, priors: np.ndarray):
    k = support(means).astype(float)
    with np.errstate(divide="ignore"):
        lp = np.log(priors)[:, None] + poisson_logpmf(k[None, :], means[:, None])
    return k, lp


def map_decisions(h: HypothesisSet, kmax: Optional[int] = None) -> np.ndarray:
    """Index of the MAP hypothesis for counts 0..kmax (ties go to the lowest index)."""
    means = np.asarray(h.means)
    kmax = window(float(means.max())) if kmax is None else kmax
    k = np.arange(kmax + 1, dtype=float)
    with np.errstate(divide="ignore"):
        lp = np.log(np.asarray(h.priors))[:, None] + poisson_logpmf(k[None, :], means[:, None])
    return np.argmax(lp, axis=0)  # argmax returns the first maximum


def log_mary_error_prob(h: HypothesisSet) -> float:
    """log of the MAP error, summed over the off-decision mass (no cancellation)."""
    means = np.asarray(h.means)
    priors = np.asarray(h.priors)
    k, lp = _log_table(means, priors)
    dec = np.argmax(lp, axis=0)
    lp = lp.copy()
    lp[dec, np.arange(k.size)] = -np.inf
    return float(logsumexp(lp))


def mary_error_prob(h: HypothesisSet) -> float:
    """1 - sum_k max_m prior_m pmf_m(k), evaluated as the off-decision mass."""
    if len(h.means) < 2:
        raise EmptyHypothesisSet("need at least two hypotheses")
    return math.exp(log_mary_error_prob(h))


def binary_error_prob(rho0: float, rho1: float) -> float:
    """Equal-prior MAP error for Poisson(rho0) against Poisson(rho1)."""
    if rho0 < 0 or rho1 < 0:
        raise ValidationError("means must be nonnegative")
    return mary_error_prob(HypothesisSet((rho0, rho1)))


def log_binary_error_prob(rho0: float, rho1: float) -> float:
    return log_mary_error_prob(HypothesisSet((rho0, rho1)))


def total_variation(p: Sequence[float], q: Sequence[float]) -> float:
    """Half the l1 distance between two pmfs on a common support."""
    return 0.5 * float(np.sum(np.abs(np.asarray(p, float) - np.asarray(q, float))))


def poisson_tv(rho0: float, rho1: float) -> float:
    k = support((rho0, rho1)).astype(float)
    return total_variation(np.exp(poisson_logpmf(k, rho0)), np.exp(poisson_logpmf(k, rho1)))


def monte_carlo_error(h: HypothesisSet, n: int, seed: int = 0, chunk: int = 1_000_000):
    """Empirical MAP error over ``n`` draws; returns (rate, standard error)."""
    rng = np.random.default_rng(seed)
    dec = map_decisions(h)
    means = np.asarray(h.means)
    errors = 0
    left = n
    while left > 0:
        m = min(chunk, left)
        msg = rng.choice(len(means), size=m, p=np.asarray(h.priors))
        x = rng.poisson(means[msg])
        # counts beyond the table fall to the largest-mean hypothesis
        guess = np.where(x < dec.size, dec[np.minimum(x, dec.size - 1)], int(np.argmax(means)))
        errors += int(np.count_nonzero(guess != msg))
        left -= m
    p = errors / n
    return p, math.sqrt(max(p * (1 - p), 1e-300) / n)


# --- fast path for optimizer inner loops -------------------------------------------------

@jit
def _log_error_numba(means, log_priors):
    """Log MAP error for a handful of hypotheses (loop form)."""
    nh = means.shape[0]
    order = np.argsort(means)
    starts = np.empty(nh, dtype=np.int64)
    ends = np.empty(nh, dtype=np.int64)
    ns = 0
    for q in range(nh):
        m = means[order[q]]
        w = 40.0 * math.sqrt(m) + 40.0
        lo = max(0, int(math.floor(m - w)))
        hi = int(math.ceil(m + w))
        if ns > 0 and lo <= ends[ns - 1] + 1:
            ends[ns - 1] = max(ends[ns - 1], hi)
        else:
            starts[ns] = lo
            ends[ns] = hi
            ns += 1
    lp = np.empty(nh)
    log_means = np.empty(nh)
    for j in range(nh):
        log_means[j] = math.log(means[j]) if means[j] > 0 else -np.inf
    big = -np.inf
    acc = 0.0
    for span in range(ns):
        for k in range(starts[span], ends[span] + 1):
            lg = math.lgamma(k + 1.0)
            best = 0
            for j in range(nh):
                if means[j] > 0:
                    v = k * log_means[j] - means[j] - lg
                else:
                    v = 0.0 if k == 0 else -np.inf
                lp[j] = log_priors[j] + v
                if lp[j] > lp[best]:
                    best = j
            for j in range(nh):
                if j != best and lp[j] > -np.inf:
                    # streaming log-sum-exp
                    if lp[j] > big:
                        acc = acc * math.exp(big - lp[j]) + 1.0
                        big = lp[j]
                    else:
                        acc += math.exp(lp[j] - big)
    if acc == 0.0:
        return -np.inf
    return big + math.log(acc)


def _log_error_numpy(means, log_priors):
    h = HypothesisSet(tuple(means), tuple(np.exp(log_priors) / np.exp(log_priors).sum()))
    return log_mary_error_prob(h)


def fast_log_error(means, priors=None) -> float:
    """Log MAP error with the compiled kernel when available."""
    means = np.ascontiguousarray(means, dtype=np.float64)
    if priors is None:
        lp = np.full(means.size, -math.log(means.size))
    else:
        with np.errstate(divide="ignore"):
            lp = np.log(np.asarray(priors, dtype=np.float64))
    if USE_NUMBA:
        return float(_log_error_numba(means, lp))
    return _log_error_numpy(means, lp)
