"""Nonparametric comparison statistics for tuning results.

Mann-Whitney U (exact or normal approximation), the Vargha-Delaney A measure
(common language effect size), medians, percent-of-optimum, speedup and
Student-t confidence intervals.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Tuple

import numpy as np
from scipy import stats as _sps
from scipy.special import ndtr

from .space import DomainError

EXACT_MAX_N = 16
ALTERNATIVES = ("less", "greater", "two-sided")


@dataclass(frozen=True)
class TestResult:
    u_statistic: float
    p_value: float
    alternative: str
    method: str


def _as_sample(x, name):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise DomainError(f"sample {name} is empty")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"sample {name} contains non-finite values")
    return x


def u_statistic(a, b) -> float:
    """U for ``a``: pairs with a_i > b_j, ties counted one half."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ranks = _sps.rankdata(np.concatenate([a, b]))
    return float(ranks[: a.size].sum() - a.size * (a.size + 1) / 2.0)


@lru_cache(maxsize=None)
def _u_counts(n: int, m: int) -> Tuple[int, ...]:
    """Number of rank arrangements giving each U value 0..n*m (no ties)."""
    # f(n, m, u) = f(n-1, m, u-m) + f(n, m-1, u): the largest element is from a or from b
    table = {}

    def f(i, j):
        if (i, j) in table:
            return table[(i, j)]
        if i == 0 or j == 0:
            out = (1,)
        else:
            with_a = f(i - 1, j)
            with_b = f(i, j - 1)
            size = i * j + 1
            out = [0] * size
            for u, c in enumerate(with_b):
                out[u] += c
            for u, c in enumerate(with_a):
                out[u + j] += c
            out = tuple(out)
        table[(i, j)] = out
        return out

    return f(n, m)


def _exact_no_ties(u, n, m, alternative):
    counts = _u_counts(n, m)
    total = math.comb(n + m, n)
    k = int(round(u))
    p_le = sum(counts[: k + 1]) / total
    p_ge = sum(counts[k:]) / total
    return p_le, p_ge


def _exact_with_ties(a, b, u, alternative):
    pooled = np.concatenate([a, b])
    ranks = _sps.rankdata(pooled)
    n = a.size
    offset = n * (n + 1) / 2.0
    le = ge = total = 0
    for idx in itertools.combinations(range(pooled.size), n):
        v = ranks[list(idx)].sum() - offset
        total += 1
        le += v <= u + 1e-9
        ge += v >= u - 1e-9
    return le / total, ge / total


def mann_whitney_u(a: Sequence[float], b: Sequence[float], alternative: str = "two-sided",
                   method: str = "auto") -> TestResult:
    """Mann-Whitney U test of ``a`` against ``b``.

    ``alternative="less"`` tests whether ``a`` tends to be smaller than ``b``.
    ``method="auto"`` uses the exact permutation distribution when the
    pooled size is at most 16 and the normal approximation (tie-corrected
    variance, 0.5 continuity correction) otherwise.  The exact distribution
    is conditional on the observed tie pattern, so it is valid with ties.
    """
    a = _as_sample(a, "a")
    b = _as_sample(b, "b")
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    n, m = a.size, b.size
    u = u_statistic(a, b)
    if method == "auto":
        method = "exact" if n + m <= EXACT_MAX_N else "normal-approx"
    if method == "exact":
        pooled = np.concatenate([a, b])
        if np.unique(pooled).size == pooled.size:
            p_le, p_ge = _exact_no_ties(u, n, m, alternative)
        else:
            p_le, p_ge = _exact_with_ties(a, b, u, alternative)
    elif method == "normal-approx":
        p_le, p_ge = _normal_tails(a, b, u)
    else:
        raise ValueError(f"unknown method {method!r}")
    if alternative == "less":
        p = p_le
    elif alternative == "greater":
        p = p_ge
    else:
        p = 2.0 * min(p_le, p_ge)
    return TestResult(u, float(min(1.0, max(0.0, p))), alternative, method)


def _normal_tails(a, b, u):
    n, m = a.size, b.size
    N = n + m
    _, tie_counts = np.unique(np.concatenate([a, b]), return_counts=True)
    tie_term = float((tie_counts ** 3 - tie_counts).sum())
    var = n * m / 12.0 * ((N + 1) - tie_term / (N * (N - 1)))
    mu = n * m / 2.0
    if var <= 0:
        return 1.0, 1.0
    sd = math.sqrt(var)
    # continuity correction toward the mean
    p_le = float(ndtr((u - mu + 0.5) / sd))
    p_ge = float(ndtr(-(u - mu - 0.5) / sd))
    return p_le, p_ge


def cles(a: Sequence[float], b: Sequence[float]) -> float:
    """A measure: P(A > B) + 0.5 P(A == B) over all pairs, computed exactly."""
    a = _as_sample(a, "a")
    b = _as_sample(b, "b")
    bs = np.sort(b)
    less = np.searchsorted(bs, a, side="left")
    less_eq = np.searchsorted(bs, a, side="right")
    greater = int(less.sum())
    ties = int((less_eq - less).sum())
    return (greater + 0.5 * ties) / (a.size * b.size)


def median(values: Sequence[float]) -> float:
    """Median; even counts average the two middle order statistics."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise DomainError("median of an empty sample")
    mid = v.size // 2
    if v.size % 2:
        return float(v[mid])
    return float((v[mid - 1] + v[mid]) / 2.0)


def percent_of_optimum(runtimes: Sequence[float], optimum: float) -> float:
    """100 * optimum / median(runtimes); 100 means the median run found the optimum."""
    if not optimum > 0:
        raise DomainError("optimum must be positive")
    return 100.0 * (optimum / median(runtimes))


def median_speedup(alg: Sequence[float], rs: Sequence[float]) -> float:
    """Ratio of medians, median(rs) / median(alg)."""
    return median(rs) / median(alg)


def confidence_interval(values: Sequence[float], level: float = 0.95) -> Tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise DomainError("confidence interval needs at least 2 values")
    mean = float(v.mean())
    half = float(_sps.t.ppf(0.5 + level / 2.0, v.size - 1) * v.std(ddof=1) / math.sqrt(v.size))
    return mean - half, mean + half


def significantly_faster(a, b, alpha: float = 0.01, min_rel_diff: float = 0.01) -> bool:
    """True if ``a`` is faster than ``b``: one-sided MWU p < alpha and medians differ > 1%."""
    ma, mb = median(a), median(b)
    if not (mb - ma) > min_rel_diff * mb:
        return False
    return mann_whitney_u(a, b, "less").p_value < alpha
