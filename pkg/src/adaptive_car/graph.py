"""Areal adjacency graphs, their enumerated borders, and border adjacency.

Borders (edges) are always held in canonical lexicographic order on
``(i, k)`` with ``i < k``; every per-edge vector in the package (weights,
logit weights, step-change probabilities) is indexed in that order.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph


class GraphError(ValueError):
    """Raised for malformed adjacency input."""


@dataclass(frozen=True, eq=False)
class AreaGraph:
    """Symmetric binary adjacency over ``n_areas`` areal units."""

    n_areas: int
    adjacency: sparse.csr_matrix = field(repr=False)

    @property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def to_dense(self) -> np.ndarray:
        return self.adjacency.toarray()

    @property
    def n_components(self) -> int:
        return csgraph.connected_components(self.adjacency, directed=False)[0]


@dataclass(frozen=True)
class EdgeSet:
    """Canonically ordered borders ``(i, k)``, ``i < k``."""

    edges: np.ndarray  # (N_W, 2) int64
    n_areas: int

    @property
    def count(self) -> int:
        return int(self.edges.shape[0])

    def __len__(self) -> int:
        return self.count

    def index_of(self, i: int, k: int) -> int:
        """Position of border ``{i, k}`` in the canonical order."""
        a, b = (i, k) if i < k else (k, i)
        pos = np.searchsorted(self.edges[:, 0], a, side="left")
        end = np.searchsorted(self.edges[:, 0], a, side="right")
        hit = pos + np.searchsorted(self.edges[pos:end, 1], b)
        if hit >= end or self.edges[hit, 1] != b:
            raise KeyError(f"({i}, {k}) is not a border")
        return int(hit)

    def to_adjacency(self, weights=None) -> sparse.csr_matrix:
        """Expand to a symmetric ``n_areas x n_areas`` matrix."""
        w = np.ones(self.count) if weights is None else np.asarray(weights, float)
        i, k = self.edges[:, 0], self.edges[:, 1]
        m = sparse.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([i, k]), np.concatenate([k, i]))),
            shape=(self.n_areas, self.n_areas),
        )
        return m.tocsr()


@dataclass(frozen=True, eq=False)
class EdgeGraph:
    """Adjacency between borders, indexed by canonical edge position."""

    n_edges: int
    adjacency: sparse.csr_matrix = field(repr=False)

    @property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    def pairs(self) -> np.ndarray:
        """Adjacent edge pairs ``(a, b)`` with ``a < b``."""
        upper = sparse.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return np.column_stack([upper.row[order], upper.col[order]]).astype(np.int64)


def _symmetric_binary(rows, cols, n: int) -> sparse.csr_matrix:
    data = np.ones(2 * len(rows))
    m = sparse.coo_matrix(
        (data, (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    ).tocsr()
    m.sum_duplicates()
    m.data[:] = 1.0
    m.sort_indices()
    return m


def build_area_graph(pairs, n_areas: int) -> AreaGraph:
    """Build an :class:`AreaGraph` from (possibly duplicated) index pairs.

    Raises
    ------
    GraphError
        On out-of-range indices, self-pairs, or an isolated area.
    """
    n_areas = int(n_areas)
    if n_areas < 1:
        raise GraphError("n_areas must be positive")
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs,
                     dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= n_areas):
        bad = arr[(arr < 0).any(axis=1) | (arr >= n_areas).any(axis=1)][0]
        raise GraphError(f"area index out of range in pair {tuple(bad)} (n_areas={n_areas})")
    loops = arr[:, 0] == arr[:, 1]
    if loops.any():
        raise GraphError(f"self-loop on area {int(arr[loops][0, 0])}")
    adj = _symmetric_binary(arr[:, 0], arr[:, 1], n_areas)
    deg = np.diff(adj.indptr)
    isolated = np.flatnonzero(deg == 0)
    if isolated.size:
        raise GraphError(f"area {int(isolated[0])} has no neighbours")
    g = AreaGraph(n_areas, adj)
    if g.n_components > 1:
        warnings.warn(f"adjacency graph has {g.n_components} connected components",
                      stacklevel=2)
    return g


def area_graph_from_matrix(w) -> AreaGraph:
    """Build from a dense or sparse 0/1 adjacency matrix."""
    w = sparse.csr_matrix(w)
    if w.shape[0] != w.shape[1]:
        raise GraphError(f"adjacency matrix must be square, got {w.shape}")
    if (w != w.T).nnz:
        raise GraphError("adjacency matrix is not symmetric")
    data = np.unique(w.data)
    if not np.all(np.isin(data, [0.0, 1.0])):
        raise GraphError("adjacency matrix must be binary")
    coo = sparse.triu(w, k=0).tocoo()
    keep = coo.data != 0
    return build_area_graph(np.column_stack([coo.row[keep], coo.col[keep]]), w.shape[0])


def build_edge_set(g: AreaGraph) -> EdgeSet:
    upper = sparse.triu(g.adjacency, k=1).tocoo()
    edges = np.column_stack([upper.row, upper.col]).astype(np.int64)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    return EdgeSet(edges, g.n_areas)


def build_edge_graph(es: EdgeSet, explicit_pairs=None) -> EdgeGraph:
    """Border adjacency.

    By default two distinct borders are adjacent when they share an endpoint
    area. ``explicit_pairs`` replaces that rule with a supplied list of
    ``(edge_a, edge_b)`` canonical edge indices.
    """
    m = es.count
    if explicit_pairs is not None:
        arr = np.asarray(explicit_pairs, dtype=np.int64).reshape(-1, 2)
        if arr.size and (arr.min() < 0 or arr.max() >= m):
            raise GraphError(f"edge index out of range (n_edges={m})")
        if (arr[:, 0] == arr[:, 1]).any():
            raise GraphError("an edge cannot be adjacent to itself")
        return EdgeGraph(m, _symmetric_binary(arr[:, 0], arr[:, 1], m))
    # incidence B (edges x areas); B B^T counts shared endpoints
    rows = np.repeat(np.arange(m), 2)
    inc = sparse.csr_matrix((np.ones(2 * m), (rows, es.edges.ravel())),
                            shape=(m, es.n_areas))
    shared = (inc @ inc.T).tocsr()
    shared.setdiag(0)
    shared.eliminate_zeros()
    coo = sparse.triu(shared, k=1).tocoo()
    return EdgeGraph(m, _symmetric_binary(coo.row, coo.col, m))


def build_lattice(nrow: int, ncol: int) -> AreaGraph:
    """Rook-adjacency grid; area ``r * ncol + c`` sits at row r, column c."""
    if nrow < 1 or ncol < 1 or nrow * ncol < 2:
        raise GraphError(f"degenerate lattice dimensions ({nrow}, {ncol})")
    idx = np.arange(nrow * ncol).reshape(nrow, ncol)
    horiz = np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()])
    vert = np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])
    return build_area_graph(np.vstack([horiz, vert]), nrow * ncol)
