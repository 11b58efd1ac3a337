"""Node-pair tensors: seed encoding, vec/unvec and the propagation A1 H A2.

A pair tensor has shape ``(n1, n2, d)``. Its vectorised form is the
``(n1 * n2, d)`` matrix whose row ``i * n2 + j`` holds pair ``(i, j)``.
"""

from __future__ import annotations

import os
from collections import deque

import numpy as np

from .graphs import Graph, SeedSet

# Upper bound on n1 * n2 * d for any dense pair tensor; override with the env var.
DEFAULT_MAX_PAIR_ENTRIES = 200_000_000
MAX_PAIR_ENTRIES_ENV = "SEEDGNN_MAX_PAIR_ENTRIES"

# Above this adjacency density propagate uses dense BLAS instead of CSR products.
DENSE_PROPAGATE_DENSITY = 0.05


class PairSpaceTooLarge(MemoryError):
    pass


def max_pair_entries() -> int:
    return int(os.environ.get(MAX_PAIR_ENTRIES_ENV, DEFAULT_MAX_PAIR_ENTRIES))


def check_pair_budget(n1: int, n2: int, d: int) -> None:
    cap = max_pair_entries()
    if n1 * n2 * d > cap:
        raise PairSpaceTooLarge(
            f"pair tensor {n1}x{n2}x{d} has {n1 * n2 * d} entries, above the cap of {cap} "
            f"(set {MAX_PAIR_ENTRIES_ENV} to raise it)"
        )


def vec(feats: np.ndarray) -> np.ndarray:
    if feats.ndim != 3:
        raise ValueError(f"expected an (n1, n2, d) tensor, got shape {feats.shape}")
    n1, n2, d = feats.shape
    return feats.reshape(n1 * n2, d)


def unvec(mat: np.ndarray, n1: int, n2: int) -> np.ndarray:
    mat = np.asarray(mat)
    if mat.ndim == 1:
        mat = mat[:, None]
    if mat.ndim != 2 or mat.shape[0] != n1 * n2:
        raise ValueError(f"cannot unvec shape {mat.shape} into {n1}x{n2} pairs")
    return mat.reshape(n1, n2, mat.shape[1])


def encode_seeds(seeds: SeedSet, n1: int, n2: int) -> np.ndarray:
    """Seed indicator tensor of shape ``(n1, n2, 1)``."""
    seeds.validate(n1, n2)
    check_pair_budget(n1, n2, 1)
    s = np.zeros((n1, n2, 1))
    if len(seeds):
        s[seeds.pairs[:, 0], seeds.pairs[:, 1], 0] = 1.0
    return s


def _left(g: Graph, x: np.ndarray) -> np.ndarray:
    # g.A @ x for a 2-D x
    if g.density > DENSE_PROPAGATE_DENSITY:
        return g.dense @ x
    return np.asarray(g.weights @ x)


def propagate(g1: Graph, feats: np.ndarray, g2: Graph) -> np.ndarray:
    """Apply ``H_c -> A1 H_c A2`` to every channel of an ``(n1, n2, d)`` tensor.

    Because both adjacencies are symmetric this is also its own adjoint, so the
    backward pass of the model reuses it unchanged.
    """
    if feats.ndim != 3:
        raise ValueError(f"expected an (n1, n2, d) tensor, got shape {feats.shape}")
    n1, n2, d = feats.shape
    if n1 != g1.n or n2 != g2.n:
        raise ValueError(f"feature grid {n1}x{n2} does not match graphs {g1.n}x{g2.n}")
    t = _left(g1, feats.reshape(n1, n2 * d))
    # right-multiplication by A2 == left-multiplication of the transposed slab
    t = t.reshape(n1, n2, d).transpose(1, 0, 2).reshape(n2, n1 * d)
    t = _left(g2, t)
    return np.ascontiguousarray(t.reshape(n2, n1, d).transpose(1, 0, 2))


def kron_propagate(g1: Graph, feats: np.ndarray, g2: Graph) -> np.ndarray:
    """Reference form ``unvec((A1 kron A2) vec(feats))``; small graphs only."""
    n1, n2, _ = feats.shape
    k = np.kron(g1.dense, g2.dense)
    return unvec(k @ vec(feats), n1, n2)


def bfs_distances(g: Graph, source: int) -> np.ndarray:
    """Hop distance from ``source`` to every node (-1 when unreachable)."""
    dist = np.full(g.n, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in g.neighbors(u):
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def count_witnesses_oracle(g1: Graph, g2: Graph, seeds: SeedSet, hop_d: int) -> np.ndarray:
    """Brute-force D-hop witness counts, one BFS per seed endpoint.

    Entry ``(u, v)`` counts seeds ``(w, w')`` with ``dist1(u, w) == hop_d`` and
    ``dist2(v, w') == hop_d``. Test oracle only.
    """
    if hop_d < 1:
        raise ValueError("hop_d must be >= 1")
    out = np.zeros((g1.n, g2.n, 1))
    for w, w2 in seeds.pairs:
        d1 = bfs_distances(g1, int(w))
        d2 = bfs_distances(g2, int(w2))
        for u in np.flatnonzero(d1 == hop_d):
            for v in np.flatnonzero(d2 == hop_d):
                out[u, v, 0] += 1
    return out
