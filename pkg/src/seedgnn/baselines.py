"""Non-learning seeded matchers: iterative D-hop, PGM percolation and seeded FAQ (SGM)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from .assignment import Matching, hungarian_max
from .graphs import MISSING, Graph, GraphPairInstance


@dataclass(frozen=True)
class DHopConfig:
    D: int = 1
    T: int = 6
    within: bool = False
    budget: int = 6

    def __post_init__(self):
        if self.D < 1 or self.T < 1:
            raise ValueError("D and T must be >= 1")
        if self.D * self.T > self.budget:
            raise ValueError(f"D*T={self.D * self.T} exceeds the budget of {self.budget}")


@dataclass(frozen=True)
class PgmConfig:
    r: int = 2

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be >= 1")


@dataclass(frozen=True)
class SgmConfig:
    max_iter: int = 20
    tol: float = 1e-6

    def __post_init__(self):
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("max_iter and tol must be positive")


def d_hop_adjacency(g: Graph, D: int, within: bool = False) -> Graph:
    """Pairs at hop distance exactly ``D`` (or ``1..D`` with ``within``).

    Level-synchronous BFS from all sources at once using sparse boolean products.
    """
    if D < 1:
        raise ValueError("D must be >= 1")
    A = g.adj.astype(np.int32)
    seen = (sp.identity(g.n, dtype=np.int32, format="csr") + A).astype(bool).tocsr()
    frontier = A.astype(bool).tocsr()
    reached = frontier
    for _ in range(D - 1):
        nxt = (frontier.astype(np.int32) @ A).astype(bool).tocsr()
        frontier = (nxt > seen).tocsr()
        frontier.eliminate_zeros()
        seen = (seen + frontier).astype(bool).tocsr()
        reached = reached + frontier
    out = reached if within else frontier
    out = out.astype(bool).tocsr()
    out.setdiag(False)
    out.eliminate_zeros()
    out.sort_indices()
    return Graph(g.n, out)


def d_hop_match(inst: GraphPairInstance, cfg: DHopConfig = DHopConfig(),
                history: Optional[List[np.ndarray]] = None) -> Matching:
    """Repeatedly match by D-hop witness counts, reseeding with the last matching.

    ``history`` (if given) receives the witness matrix of each iteration.
    """
    B1 = d_hop_adjacency(inst.g1, cfg.D, cfg.within).weights
    B2 = d_hop_adjacency(inst.g2, cfg.D, cfg.within).weights
    n1, n2 = inst.n1, inst.n2
    S = np.zeros((n1, n2))
    if len(inst.seeds):
        S[inst.seeds.pairs[:, 0], inst.seeds.pairs[:, 1]] = 1.0
    matching = None
    for _ in range(cfg.T):
        W = np.asarray((B2 @ np.asarray(B1 @ S).T).T)  # B1 S B2
        if history is not None:
            history.append(W)
        matching = hungarian_max(W)
        S = matching.to_matrix()
    return matching


def pgm_match(inst: GraphPairInstance, cfg: PgmConfig = PgmConfig(),
              marks_out: Optional[list] = None) -> Matching:
    """Percolation graph matching from the seeds.

    Every matched pair adds a mark to each neighbouring pair. The unmatched,
    non-conflicting pair with the most marks (ties: lowest ``i``, then ``j``)
    is matched while it has at least ``r`` marks.
    """
    n1, n2 = inst.n1, inst.n2
    marks = np.zeros((n1, n2), dtype=np.int64)
    free1 = np.ones(n1, dtype=bool)
    free2 = np.ones(n2, dtype=bool)
    cols = np.full(n1, MISSING, dtype=np.int64)
    # marks of still-available pairs, -1 once a row or column is taken
    avail = np.zeros((n1, n2), dtype=np.int64)

    def add(i: int, j: int) -> None:
        cols[i] = j
        free1[i] = False
        free2[j] = False
        avail[i, :] = -1
        avail[:, j] = -1
        N1 = inst.g1.neighbors(i)
        N2 = inst.g2.neighbors(j)
        if N1.size and N2.size:
            marks[np.ix_(N1, N2)] += 1
            u = N1[free1[N1]]
            v = N2[free2[N2]]
            if u.size and v.size:
                avail[np.ix_(u, v)] += 1
        if marks_out is not None:
            marks_out.append(marks.copy())

    for i, j in inst.seeds.pairs:
        add(int(i), int(j))
    while True:
        k = int(np.argmax(avail))
        i, j = divmod(k, n2)
        if avail[i, j] < cfg.r:
            break
        add(i, j)
    return Matching(cols, n2)


def _pad(A: np.ndarray, n: int) -> np.ndarray:
    if A.shape[0] == n:
        return A
    out = np.zeros((n, n))
    out[: A.shape[0], : A.shape[0]] = A
    return out


@dataclass
class SgmTrace:
    objectives: List[float]
    row_sums_err: List[float]


def sgm_match(inst: GraphPairInstance, cfg: SgmConfig = SgmConfig(),
              trace: Optional[SgmTrace] = None) -> Matching:
    """Seeded graph matching by Frank-Wolfe on the relaxed edge-agreement objective.

    Seeds are fixed; the free block ``Q`` starts at the doubly stochastic
    barycenter and each step solves a linear assignment on the gradient followed
    by an exact line search. The smaller graph is padded with isolated nodes.
    """
    n1, n2 = inst.n1, inst.n2
    A = _pad(inst.g1.dense, n2)
    B = inst.g2.dense
    seeds = inst.seeds.pairs
    s1, s2 = seeds[:, 0], seeds[:, 1]
    rest1 = np.setdiff1d(np.arange(n2), s1)
    rest2 = np.setdiff1d(np.arange(n2), s2)
    m = rest1.size
    cols = np.full(n2, MISSING, dtype=np.int64)
    cols[s1] = s2
    if m:
        A21 = A[np.ix_(rest1, s1)]
        A22 = A[np.ix_(rest1, rest1)]
        B12 = B[np.ix_(s2, rest2)]
        B22 = B[np.ix_(rest2, rest2)]
        C = A21 @ B12  # seed-to-free cross term
        Q = np.full((m, m), 1.0 / m)

        def objective(Q):
            return 2.0 * np.sum(C * Q) + np.sum((A22 @ Q @ B22) * Q)

        f = objective(Q)
        if trace is not None:
            trace.objectives.append(f)
            trace.row_sums_err.append(0.0)
        for _ in range(cfg.max_iter):
            grad = 2.0 * C + 2.0 * (A22 @ Q @ B22)
            P = hungarian_max(grad).to_matrix()
            delta = P - Q
            b = np.sum(grad * delta)
            a = np.sum((A22 @ delta @ B22) * delta)
            if a < 0:
                alpha = min(1.0, max(0.0, -b / (2.0 * a)))
            else:
                alpha = 1.0 if a + b > 0 else 0.0
            step = alpha * np.sqrt(np.sum(delta * delta))
            if alpha > 0:
                Q = Q + alpha * delta
                f = f + alpha * b + alpha * alpha * a
            if trace is not None:
                trace.objectives.append(objective(Q))
                trace.row_sums_err.append(float(max(np.abs(Q.sum(0) - 1).max(), np.abs(Q.sum(1) - 1).max())))
            if step < cfg.tol:
                break
        cols[rest1] = rest2[hungarian_max(Q).cols]
    cols = cols[:n1]
    # padded rows never exist in G1; columns matched to padding rows stay free
    return Matching(cols, n2)
