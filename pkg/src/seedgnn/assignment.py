"""Maximum-weight rectangular assignment, a brute-force oracle and accuracy."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .graphs import MISSING, GroundTruth, SeedSet

BRUTE_FORCE_MAX = 8


@dataclass(frozen=True, eq=False)
class Matching:
    """Injective partial map; ``cols[i]`` is the G2 partner of G1 node ``i`` or -1."""

    cols: np.ndarray
    n2: int

    def __post_init__(self):
        c = np.asarray(self.cols, dtype=np.int64)
        object.__setattr__(self, "cols", c)
        used = c[c != MISSING]
        if used.size and (used.min() < 0 or used.max() >= self.n2):
            raise ValueError("matched column out of range")
        if np.unique(used).size != used.size:
            raise ValueError("matching is not injective")

    @classmethod
    def from_pairs(cls, pairs, n1: int, n2: int) -> "Matching":
        cols = np.full(n1, MISSING, dtype=np.int64)
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        cols[pairs[:, 0]] = pairs[:, 1]
        return cls(cols, n2)

    @property
    def n1(self) -> int:
        return self.cols.size

    @property
    def pairs(self) -> np.ndarray:
        rows = np.flatnonzero(self.cols != MISSING)
        return np.column_stack([rows, self.cols[rows]])

    def to_matrix(self) -> np.ndarray:
        R = np.zeros((self.n1, self.n2))
        p = self.pairs
        R[p[:, 0], p[:, 1]] = 1.0
        return R

    def objective(self, S: np.ndarray) -> float:
        p = self.pairs
        return float(S[p[:, 0], p[:, 1]].sum())

    def __eq__(self, other):
        return isinstance(other, Matching) and self.n2 == other.n2 and np.array_equal(self.cols, other.cols)

    __hash__ = None


def _check(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2:
        raise ValueError("similarity must be a matrix")
    if S.shape[0] > S.shape[1]:
        raise ValueError(f"need n1 <= n2, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("similarity matrix has non-finite entries")
    return S


def hungarian_max(S: np.ndarray) -> Matching:
    """Maximum total-similarity matching covering every row of ``S``."""
    S = _check(S)
    rows, cols = linear_sum_assignment(S, maximize=True)
    out = np.full(S.shape[0], MISSING, dtype=np.int64)
    out[rows] = cols
    return Matching(out, S.shape[1])


def brute_force_assignment(S: np.ndarray) -> Matching:
    """Exhaustive search over all injections; first optimum in lexicographic order."""
    S = _check(S)
    n1, n2 = S.shape
    if n2 > BRUTE_FORCE_MAX:
        raise ValueError(f"brute force limited to n2 <= {BRUTE_FORCE_MAX}")
    rows = np.arange(n1)
    best, best_val = None, -np.inf
    for perm in itertools.permutations(range(n2), n1):
        val = S[rows, perm].sum()
        if val > best_val:
            best, best_val = perm, val
    return Matching(np.array(best, dtype=np.int64), n2)


def matching_accuracy(m: Matching, truth: GroundTruth, seeds: SeedSet | None = None,
                      mode: str = "all") -> float:
    """Fraction of G1 nodes mapped to their true partner.

    Only nodes with a known partner count; ``mode="non_seed"`` also drops seeded nodes.
    """
    if mode not in ("all", "non_seed"):
        raise ValueError(f"unknown accuracy mode {mode!r}")
    if m.n1 != len(truth):
        raise ValueError("matching and ground truth sizes differ")
    keep = truth.present.copy()
    if mode == "non_seed" and seeds is not None and len(seeds):
        keep[seeds.pairs[:, 0]] = False
    denom = int(keep.sum())
    if denom == 0:
        return float("nan")
    correct = (m.cols == truth.map) & keep
    return float(correct.sum() / denom)
