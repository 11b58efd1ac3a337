"""Graphs, correlated random pairs, seeds and edge-list IO."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

PathLike = Union[str, Path]

# Marks a G1 node that has no counterpart in G2 (partial ground truth).
MISSING = -1


class GraphFormatError(ValueError):
    """Malformed edge-list, seed or truth file."""


class DegenerateInstanceError(ValueError):
    """Raised when a subsampled pair shares no nodes."""


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for ``(seed, *stream)``.

    Different ``stream`` tuples give statistically independent generators, so
    each grid cell / trial / sub-step can own its own stream.
    """
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph on nodes ``0..n-1`` backed by a CSR adjacency."""

    n: int
    adj: sp.csr_matrix = field(repr=False)

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("graph must have at least one node")
        if self.adj.shape != (self.n, self.n):
            raise ValueError(f"adjacency shape {self.adj.shape} does not match n={self.n}")

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        """Build from an iterable or ``(m, 2)`` array of node pairs.

        Duplicates and reversed copies collapse; self-loops are rejected.
        """
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        e = e.reshape(-1, 2)
        if e.size:
            if e.min() < 0 or e.max() >= n:
                raise ValueError("edge endpoint out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise ValueError("self-loops are not allowed")
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        adj = sp.csr_matrix((np.ones(rows.size, dtype=bool), (rows, cols)), shape=(n, n))
        adj.sum_duplicates()
        adj.data[:] = True
        adj.sort_indices()
        return cls(n, adj)

    @classmethod
    def from_dense(cls, a) -> "Graph":
        a = np.asarray(a)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(a != 0, (a != 0).T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ValueError("self-loops are not allowed")
        i, j = np.nonzero(np.triu(a != 0, 1))
        return cls.from_edges(a.shape[0], np.column_stack([i, j]))

    @cached_property
    def edges(self) -> np.ndarray:
        """``(m, 2)`` array of edges with ``i < j``, sorted lexicographically."""
        coo = sp.triu(self.adj, k=1).tocoo()
        e = np.column_stack([coo.row, coo.col]).astype(np.int64)
        return e[np.lexsort((e[:, 1], e[:, 0]))]

    @property
    def num_edges(self) -> int:
        return self.adj.nnz // 2

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adj.indptr).astype(np.int64)

    def neighbors(self, i: int) -> np.ndarray:
        return self.adj.indices[self.adj.indptr[i]:self.adj.indptr[i + 1]]

    @cached_property
    def weights(self) -> sp.csr_matrix:
        """Float64 copy of the adjacency used by the numeric kernels."""
        return self.adj.astype(np.float64)

    @cached_property
    def dense(self) -> np.ndarray:
        return self.adj.toarray().astype(np.float64)

    @property
    def density(self) -> float:
        return self.adj.nnz / float(self.n * self.n)

    def relabel(self, perm: np.ndarray) -> "Graph":
        """Graph with node ``i`` renamed to ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        return Graph.from_edges(self.n, perm[self.edges])

    def check(self) -> None:
        """Assert the structural invariants (symmetric, loop-free)."""
        assert (self.adj != self.adj.T).nnz == 0, "adjacency not symmetric"
        assert not self.adj.diagonal().any(), "self-loop present"

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.edges, other.edges)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """``map[i]`` is the G2 node of G1 node ``i`` or ``MISSING``."""

    map: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.map, dtype=np.int64)
        object.__setattr__(self, "map", m)
        present = m[m != MISSING]
        if present.size and present.min() < 0:
            raise ValueError("negative entry in ground truth")
        if np.unique(present).size != present.size:
            raise ValueError("ground truth is not injective")

    @property
    def present(self) -> np.ndarray:
        """Boolean mask of G1 nodes whose counterpart is known."""
        return self.map != MISSING

    def __len__(self):
        return self.map.size

    def __eq__(self, other):
        return isinstance(other, GroundTruth) and np.array_equal(self.map, other.map)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SeedSet:
    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        p = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "pairs", p)
        if np.unique(p[:, 0]).size != len(p) or np.unique(p[:, 1]).size != len(p):
            raise ValueError("a node appears in more than one seed")

    def validate(self, n1: int, n2: int) -> None:
        p = self.pairs
        if p.size and (p.min() < 0 or p[:, 0].max() >= n1 or p[:, 1].max() >= n2):
            raise ValueError(f"seed pair out of range for a {n1}x{n2} pair space")

    def __len__(self):
        return len(self.pairs)

    def __eq__(self, other):
        return isinstance(other, SeedSet) and np.array_equal(self.pairs, other.pairs)

    __hash__ = None


@dataclass(frozen=True)
class CorrelatedPairSpec:
    n: int
    p: float
    s: float
    theta: float
    rng_seed: int = 0

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        for name in ("p", "s", "theta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not a probability")


@dataclass(frozen=True, eq=False)
class GraphPairInstance:
    g1: Graph
    g2: Graph
    seeds: SeedSet
    truth: Optional[GroundTruth] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.g1.n > self.g2.n:
            raise ValueError("expected n1 <= n2")
        self.seeds.validate(self.g1.n, self.g2.n)
        if self.truth is not None:
            if len(self.truth) != self.g1.n:
                raise ValueError("ground truth length must equal n1")
            m = self.truth.map
            if m.max(initial=MISSING) >= self.g2.n:
                raise ValueError("ground truth points outside G2")
            sp_ = self.seeds.pairs
            if sp_.size and not np.array_equal(m[sp_[:, 0]], sp_[:, 1]):
                raise ValueError("seed pair disagrees with ground truth")

    @property
    def n1(self) -> int:
        return self.g1.n

    @property
    def n2(self) -> int:
        return self.g2.n


def sample_seeds(truth: GroundTruth, theta: float, rng_seed) -> SeedSet:
    """Each known true pair becomes a seed independently with probability ``theta``."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed)
    idx = np.flatnonzero(truth.present)
    keep = rng.random(idx.size) < theta
    i = idx[keep]
    return SeedSet(np.column_stack([i, truth.map[i]]))


def _edge_mask(rng: np.random.Generator, m: int, keep: float) -> np.ndarray:
    return rng.random(m) < keep


def generate_correlated_er(spec: CorrelatedPairSpec) -> GraphPairInstance:
    """Sample a correlated Erdős–Rényi pair with seeds.

    A parent G(n, p) graph is subsampled twice (edge keep probability ``s``),
    the second copy is relabelled by a uniform permutation and every true pair
    becomes a seed with probability ``theta``.
    """
    n = spec.n
    parent_rng, sub1_rng, sub2_rng, perm_rng, seed_rng = (
        make_rng(spec.rng_seed, k) for k in range(5)
    )
    iu, ju = np.triu_indices(n, 1)
    parent = _edge_mask(parent_rng, iu.size, spec.p)
    e0 = np.column_stack([iu[parent], ju[parent]])
    e1 = e0[_edge_mask(sub1_rng, len(e0), spec.s)]
    e2 = e0[_edge_mask(sub2_rng, len(e0), spec.s)]
    perm = perm_rng.permutation(n)
    g1 = Graph.from_edges(n, e1)
    g2 = Graph.from_edges(n, perm[e2])
    truth = GroundTruth(perm)
    seeds = sample_seeds(truth, spec.theta, seed_rng)
    meta = dict(n=n, p=spec.p, s=spec.s, theta=spec.theta, rng_seed=spec.rng_seed,
                parent_degrees=_degrees(n, e0))
    return GraphPairInstance(g1, g2, seeds, truth, meta)


def _degrees(n: int, edges: np.ndarray) -> np.ndarray:
    return np.bincount(edges.reshape(-1), minlength=n).astype(np.int64)


def subsample_real_pair(g0: Graph, edge_s: float, node_keep: float, theta: float,
                        rng_seed: int) -> GraphPairInstance:
    """Two node- and edge-subsampled copies of ``g0``; the second is relabelled.

    Ground truth is partial: G1 nodes absent from G2 map to ``MISSING``.
    If the second sample is smaller the roles swap so that ``n1 <= n2``.
    """
    for name, v in (("edge_s", edge_s), ("node_keep", node_keep), ("theta", theta)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v} is not a probability")
    node1_rng, node2_rng, edge1_rng, edge2_rng, perm_rng, seed_rng = (
        make_rng(rng_seed, k) for k in range(6)
    )
    n0 = g0.n
    keep1 = node1_rng.random(n0) < node_keep
    keep2 = node2_rng.random(n0) < node_keep
    common = keep1 & keep2
    if not common.any():
        raise DegenerateInstanceError("node samples share no nodes")

    def side(keep, edge_rng, label_perm=None):
        nodes = np.flatnonzero(keep)
        label = np.full(n0, MISSING, dtype=np.int64)
        label[nodes] = np.arange(nodes.size) if label_perm is None else label_perm
        e = g0.edges
        e = e[keep[e[:, 0]] & keep[e[:, 1]]]
        e = e[_edge_mask(edge_rng, len(e), edge_s)]
        return Graph.from_edges(nodes.size, label[e]), label

    ga, label_a = side(keep1, edge1_rng)
    gb, label_b = side(keep2, edge2_rng, perm_rng.permutation(int(keep2.sum())))
    if ga.n <= gb.n:
        g1, g2, l1, l2 = ga, gb, label_a, label_b
    else:
        g1, g2, l1, l2 = gb, ga, label_b, label_a
    tmap = np.full(g1.n, MISSING, dtype=np.int64)
    tmap[l1[common]] = l2[common]
    truth = GroundTruth(tmap)
    seeds = sample_seeds(truth, theta, seed_rng)
    deg0 = g0.degrees
    parent_deg = np.empty(g1.n, dtype=np.int64)
    parent_deg[l1[l1 != MISSING]] = deg0[l1 != MISSING]
    meta = dict(edge_s=edge_s, node_keep=node_keep, theta=theta, rng_seed=rng_seed,
                parent_degrees=parent_deg)
    return GraphPairInstance(g1, g2, seeds, truth, meta)


def chung_lu_graph(weights, rng_seed: int, stream: int = 0) -> Graph:
    """Random graph with ``P(i ~ j) = min(1, w_i w_j / sum(w))``; expected degrees follow ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or np.any(w < 0):
        raise ValueError("weights must be a nonnegative vector")
    n = w.size
    iu, ju = np.triu_indices(n, 1)
    total = w.sum()
    prob = np.minimum(1.0, w[iu] * w[ju] / total) if total > 0 else np.zeros(iu.size)
    keep = make_rng(rng_seed, stream).random(iu.size) < prob
    return Graph.from_edges(n, np.column_stack([iu[keep], ju[keep]]))


def induced_subgraph(g: Graph, keep) -> Graph:
    """Subgraph on the nodes where ``keep`` is true, relabelled in increasing order."""
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (g.n,):
        raise ValueError("keep mask must have one entry per node")
    label = np.full(g.n, MISSING, dtype=np.int64)
    label[keep] = np.arange(int(keep.sum()))
    e = g.edges
    e = e[keep[e[:, 0]] & keep[e[:, 1]]]
    return Graph.from_edges(int(keep.sum()), label[e])


# ---------------------------------------------------------------------------
# text IO

_NODES_HEADER = re.compile(r"#\s*nodes\s+(\d+)\s*$")


def _read_int_pairs(path: PathLike, allow_self: bool) -> Tuple[list, Optional[int]]:
    pairs = []
    declared = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = _NODES_HEADER.match(line)
                if m:
                    declared = int(m.group(1))
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected two integers, got {line!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer node id in {line!r}") from None
            if i < 0 or j < 0:
                raise GraphFormatError(f"{path}:{lineno}: negative node id")
            if not allow_self and i == j:
                raise GraphFormatError(f"{path}:{lineno}: self-loop on node {i}")
            pairs.append((i, j))
    return pairs, declared


def read_edge_list(path: PathLike, n: Optional[int] = None) -> Graph:
    """Read a whitespace separated, 0-based edge list.

    A ``# nodes N`` comment fixes the node count (isolated trailing nodes
    survive a round trip); otherwise it is ``max id + 1`` unless ``n`` is given.
    """
    pairs, declared = _read_int_pairs(path, allow_self=False)
    top = max((max(p) for p in pairs), default=-1) + 1
    count = n if n is not None else declared if declared is not None else top
    if count < top:
        raise GraphFormatError(f"{path}: node id {top - 1} exceeds declared node count {count}")
    if count == 0:
        raise GraphFormatError(f"{path}: empty graph")
    return Graph.from_edges(count, np.array(pairs, dtype=np.int64).reshape(-1, 2))


def write_edge_list(g: Graph, path: PathLike) -> None:
    lines = [f"# nodes {g.n}"] + [f"{i} {j}" for i, j in g.edges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_pairs(path: PathLike) -> np.ndarray:
    pairs, _ = _read_int_pairs(path, allow_self=True)
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def write_pairs(pairs: Iterable[Sequence[int]], path: PathLike) -> None:
    lines = [f"{int(i)} {int(j)}" for i, j in pairs]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_seeds(path: PathLike) -> SeedSet:
    return SeedSet(read_pairs(path))


def read_truth(path: PathLike, n1: int) -> GroundTruth:
    pairs = read_pairs(path)
    m = np.full(n1, MISSING, dtype=np.int64)
    if pairs.size:
        if pairs[:, 0].max() >= n1:
            raise GraphFormatError(f"{path}: G1 node out of range")
        m[pairs[:, 0]] = pairs[:, 1]
    return GroundTruth(m)


def write_truth(truth: GroundTruth, path: PathLike) -> None:
    idx = np.flatnonzero(truth.present)
    write_pairs(zip(idx, truth.map[idx]), path)
