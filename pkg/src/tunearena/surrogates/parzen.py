"""Discrete Parzen estimators for Tree-Parzen-style search over an integer box.

Observations are split into a good set (lowest runtimes) and a bad set.  Each
set gets one smoothed histogram per dimension; dimensions are treated as
independent, so densities are products of per-dimension bin masses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np


@dataclass(frozen=True)
class ParzenPair:
    lows: np.ndarray
    good: List[np.ndarray]  # per-dimension bin masses, bin k <-> value lows[d] + k
    bad: List[np.ndarray]
    gamma: float
    n_good: int
    n_bad: int


def good_count(n: int, gamma: float) -> int:
    # guard against 0.15 * 20 = 3.0000000000000004 style ceil overshoot
    return min(n, max(1, math.ceil(round(gamma * n, 9))))


def _histograms(X, lows, highs):
    out = []
    for d in range(X.shape[1]):
        counts = np.bincount(X[:, d] - lows[d], minlength=int(highs[d] - lows[d] + 1)).astype(np.float64)
        counts += 1.0
        out.append(counts / counts.sum())
    return out


def parzen_fit(X, y, lows, highs, gamma: float = 0.15) -> ParzenPair:
    """Split the history at the ``ceil(gamma * n)`` lowest runtimes and build histograms.

    Ties in ``y`` keep history order.  Every bin gets one pseudo-count.
    """
    X = np.asarray(X, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64)
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    lows = np.asarray(lows, dtype=np.int64)
    highs = np.asarray(highs, dtype=np.int64)
    order = np.argsort(y, kind="stable")
    k = good_count(len(y), gamma)
    good, bad = X[order[:k]], X[order[k:]]
    return ParzenPair(lows, _histograms(good, lows, highs), _histograms(bad, lows, highs),
                      gamma, len(good), len(bad))


def parzen_score(pair: ParzenPair, X) -> np.ndarray:
    """Product over dimensions of good/bad density ratios for each row of ``X``."""
    X = np.asarray(X, dtype=np.int64)
    single = X.ndim == 1
    X = X.reshape(-1, len(pair.lows))
    ratio = np.ones(len(X))
    for d in range(X.shape[1]):
        b = X[:, d] - pair.lows[d]
        ratio *= pair.good[d][b] / pair.bad[d][b]
    return ratio[0] if single else ratio


def sample_good(pair: ParzenPair, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` configurations from the good density, dimension by dimension."""
    cols = [rng.choice(len(p), size=n, p=p) + pair.lows[d] for d, p in enumerate(pair.good)]
    return np.stack(cols, axis=1).astype(np.int64)
