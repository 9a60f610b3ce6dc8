"""Tunable parameter space: six integer dimensions with a work-group product bound.

The first three dimensions are thread-coarsening factors, the last three are
OpenCL work-group sizes.  A configuration is valid when the product of its
work-group sizes does not exceed ``constraint_limit``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

PARAM_NAMES = ("xt", "yt", "zt", "xw", "yw", "zw")


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


class Configuration(NamedTuple):
    xt: int
    yt: int
    zt: int
    xw: int
    yw: int
    zw: int

    @property
    def workgroup_product(self) -> int:
        return self.xw * self.yw * self.zw


def _default_ranges():
    return ((1, 16),) * 3 + ((1, 8),) * 3


@dataclass(frozen=True)
class SearchSpace:
    """Inclusive integer range per parameter plus the work-group product limit."""

    ranges: tuple = field(default_factory=_default_ranges)
    constraint_limit: int = 256

    def __post_init__(self):
        ranges = tuple((int(lo), int(hi)) for lo, hi in self.ranges)
        if len(ranges) != 6:
            raise DomainError(f"expected 6 ranges, got {len(ranges)}")
        for name, (lo, hi) in zip(PARAM_NAMES, ranges):
            if lo > hi:
                raise DomainError(f"empty range for {name}: [{lo}, {hi}]")
            if lo < 1:
                raise DomainError(f"range for {name} must start at >= 1")
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "constraint_limit", int(self.constraint_limit))

    @classmethod
    def box(cls, thread=(1, 16), workgroup=(1, 8), constraint_limit=256):
        return cls((tuple(thread),) * 3 + (tuple(workgroup),) * 3, constraint_limit)

    @property
    def lows(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.ranges], dtype=np.int64)

    @property
    def highs(self) -> np.ndarray:
        return np.array([hi for _, hi in self.ranges], dtype=np.int64)

    @property
    def shape(self) -> tuple:
        """Number of values per dimension."""
        return tuple(hi - lo + 1 for lo, hi in self.ranges)

    def to_dict(self) -> dict:
        d = {name: list(r) for name, r in zip(PARAM_NAMES, self.ranges)}
        d["constraint_limit"] = self.constraint_limit
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        default = cls()
        ranges = tuple(tuple(d.get(name, r)) for name, r in zip(PARAM_NAMES, default.ranges))
        return cls(ranges, d.get("constraint_limit", default.constraint_limit))


def total_size(space: SearchSpace) -> int:
    """Cardinality of the full box, ignoring the constraint."""
    n = 1
    for size in space.shape:
        n *= size
    return n


def in_box(space: SearchSpace, c: Sequence[int]) -> bool:
    return len(c) == 6 and all(lo <= v <= hi for v, (lo, hi) in zip(c, space.ranges))


def is_valid(space: SearchSpace, c: Sequence[int]) -> bool:
    if not in_box(space, c):
        raise DomainError(f"configuration {tuple(c)} outside the search space")
    return c[3] * c[4] * c[5] <= space.constraint_limit


def valid_mask(space: SearchSpace, X: np.ndarray) -> np.ndarray:
    """Row-wise validity of an (n, 6) integer array; rows are assumed in the box."""
    X = np.asarray(X)
    return X[:, 3] * X[:, 4] * X[:, 5] <= space.constraint_limit


def grid_valid_mask(space: SearchSpace) -> np.ndarray:
    """Boolean array of shape ``space.shape``; True where the configuration is valid."""
    wg = [np.arange(lo, hi + 1) for lo, hi in space.ranges[3:]]
    prod = wg[0][:, None, None] * wg[1][None, :, None] * wg[2][None, None, :]
    ok = prod <= space.constraint_limit
    return np.broadcast_to(ok, space.shape)


def enumerate_valid(space: SearchSpace) -> np.ndarray:
    """All valid configurations as an (N, 6) int64 array.

    Rows are in lexicographic order: ``xt`` varies slowest and ``zw`` fastest.
    """
    mask = grid_valid_mask(space)
    idx = np.flatnonzero(mask.ravel())
    coords = np.unravel_index(idx, space.shape)
    out = np.empty((idx.size, 6), dtype=np.int64)
    for d, (lo, _) in enumerate(space.ranges):
        out[:, d] = coords[d] + lo
    return out


def count_valid(space: SearchSpace) -> int:
    return int(np.count_nonzero(grid_valid_mask(space)))


def grid_index(space: SearchSpace, X: np.ndarray) -> np.ndarray:
    """Flat index of each row of ``X`` in the C-ordered grid of the box."""
    X = np.asarray(X, dtype=np.int64)
    return np.ravel_multi_index(tuple((X - space.lows).T), space.shape)


def sample_uniform(space: SearchSpace, constrained: bool, rng: np.random.Generator) -> Configuration:
    """Draw one configuration uniformly from the valid set or from the full box.

    Constrained draws use rejection sampling.
    """
    lows, highs = space.lows, space.highs
    while True:
        c = rng.integers(lows, highs + 1)
        if not constrained or c[3] * c[4] * c[5] <= space.constraint_limit:
            return Configuration(*(int(v) for v in c))


def sample_many(space: SearchSpace, n: int, constrained: bool, rng: np.random.Generator) -> np.ndarray:
    """Vectorised version of :func:`sample_uniform`; returns an (n, 6) array."""
    lows, highs = space.lows, space.highs
    X = rng.integers(lows, highs + 1, size=(n, 6))
    if constrained:
        bad = ~valid_mask(space, X)
        while bad.any():
            X[bad] = rng.integers(lows, highs + 1, size=(int(bad.sum()), 6))
            bad = ~valid_mask(space, X)
    return X


def as_config(row) -> Configuration:
    return Configuration(*(int(v) for v in row))
