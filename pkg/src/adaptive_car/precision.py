"""Sparse precision matrices, sparse Cholesky, and Kronecker-structured forms.

The factorization is a left-looking sparse Cholesky on a fixed
fill-reducing ordering. Symbolic analysis (ordering, elimination tree,
factor pattern, scatter maps) is done once per sparsity pattern and shared
by every numeric factorization with that pattern. Changing the weight of a
border (i, k) only alters column ``min(p(i), p(k))`` and the two diagonals
of the permuted matrix, so only those columns and their elimination-tree
ancestors need recomputing; the rest of L is reused verbatim.
"""
from __future__ import annotations

import heapq
import math
import weakref
from dataclasses import dataclass

import numba
import numpy as np
from scipy import io as spio
from scipy import sparse

from .graph import AreaGraph, EdgeSet, build_edge_set

PIVOT_TOL = 1e-14


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Non-positive pivot met during factorization."""

    def __init__(self, pivot: int, value: float):
        self.pivot = pivot
        self.value = value
        super().__init__(f"matrix is not positive definite (pivot {pivot}, value {value:.3g})")


class PatternMismatchError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Sparse symmetric matrices
# ---------------------------------------------------------------------------

class SparseSymMatrix:
    """Symmetric matrix in full CSR storage with sorted column indices.

    Held as raw CSR arrays; ``matrix`` materializes a scipy view on demand.
    Instances built by :func:`build_adaptive_Q` also carry the edge weights
    and ridge they were built from, so that :meth:`with_edge_weights` can
    rewrite only the entries touched by a handful of borders.
    """

    __slots__ = ("data", "indices", "indptr", "dim", "weights", "eps", "_structure", "_csr")

    def __init__(self, data, indices, indptr, weights=None, eps=None, structure=None):
        self.data = data
        self.indices = indices
        self.indptr = indptr
        self.dim = indptr.shape[0] - 1
        self.weights = weights
        self.eps = eps
        self._structure = structure
        self._csr = None

    @classmethod
    def from_scipy(cls, m) -> "SparseSymMatrix":
        m = sparse.csr_matrix(m, dtype=float)
        m.sort_indices()
        return cls(m.data, m.indices.astype(np.int64), m.indptr.astype(np.int64))

    @property
    def matrix(self) -> sparse.csr_matrix:
        if self._csr is None:
            m = sparse.csr_matrix((self.data, self.indices, self.indptr),
                                  shape=(self.dim, self.dim))
            m.has_sorted_indices = True
            self._csr = m
        return self._csr

    def __repr__(self) -> str:
        return f"SparseSymMatrix(dim={self.dim}, nnz={self.data.shape[0]})"

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def same_pattern(self, other: "SparseSymMatrix") -> bool:
        if self.dim != other.dim:
            return False
        if self.indptr is other.indptr and self.indices is other.indices:
            return True
        return (np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def with_edge_weights(self, weights, changed_edges) -> "SparseSymMatrix":
        """Copy with new edge weights, rewriting only entries of ``changed_edges``."""
        if self._structure is None or self.weights is None:
            raise ValueError("matrix was not built from edge weights")
        return self._structure.update(self, np.asarray(weights, dtype=float),
                                      np.asarray(changed_edges, dtype=np.int64))


@numba.njit(cache=True)
def _incident_sums(inc_ptr, inc_idx, weights, areas, out, pos_diag, scale, ridge):
    for a in areas:
        s = 0.0
        for p in range(inc_ptr[a], inc_ptr[a + 1]):
            s += weights[inc_idx[p]]
        out[pos_diag[a]] = scale * s + ridge


@numba.njit(cache=True)
def _write_edges(data, pos_ik, pos_ki, weights, changed, scale):
    for e in changed:
        data[pos_ik[e]] = -scale * weights[e]
        data[pos_ki[e]] = -scale * weights[e]


class _LaplacianPattern:
    """Fixed CSR pattern of ``diag(W1) - W + eps I`` for a given edge set."""

    def __init__(self, edges: np.ndarray, n: int):
        self.n = n
        self.edges = edges
        m = edges.shape[0]
        rows = np.concatenate([edges[:, 0], edges[:, 1], np.arange(n)])
        cols = np.concatenate([edges[:, 1], edges[:, 0], np.arange(n)])
        order = np.lexsort((cols, rows))
        self.indices = cols[order].astype(np.int64)
        counts = np.bincount(rows, minlength=n)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        pos = np.empty(2 * m + n, dtype=np.int64)
        pos[order] = np.arange(2 * m + n)
        self.pos_ik = pos[:m]
        self.pos_ki = pos[m:2 * m]
        self.pos_diag = pos[2 * m:]
        # incident edges of each area, ascending edge order
        inc_rows = np.concatenate([edges[:, 0], edges[:, 1]])
        inc_cols = np.concatenate([np.arange(m), np.arange(m)])
        o = np.lexsort((inc_cols, inc_rows))
        self.inc_idx = inc_cols[o].astype(np.int64)
        self.inc_ptr = np.concatenate(
            [[0], np.cumsum(np.bincount(inc_rows, minlength=n))]).astype(np.int64)
        self._all_edges = np.arange(m, dtype=np.int64)
        self._all_areas = np.arange(n, dtype=np.int64)

    def weighted(self, weights: np.ndarray, scale: float, ridge: float) -> np.ndarray:
        """CSR data of ``scale * (diag(W1) - W) + ridge * I``."""
        data = np.empty(self.indices.shape[0])
        _write_edges(data, self.pos_ik, self.pos_ki, weights, self._all_edges, scale)
        _incident_sums(self.inc_ptr, self.inc_idx, weights, self._all_areas, data,
                       self.pos_diag, scale, ridge)
        return data

    def update(self, q: SparseSymMatrix, weights: np.ndarray,
               changed: np.ndarray) -> SparseSymMatrix:
        data = q.data.copy()
        if changed.size:
            _write_edges(data, self.pos_ik, self.pos_ki, weights, changed, 1.0)
            areas = self.edges[changed].ravel()
            _incident_sums(self.inc_ptr, self.inc_idx, weights, areas, data,
                           self.pos_diag, 1.0, q.eps)
        return SparseSymMatrix(data, q.indices, q.indptr, weights.copy(), q.eps, self)


_pattern_cache: "weakref.WeakKeyDictionary[object, _LaplacianPattern]" = weakref.WeakKeyDictionary()


def _pattern_for(g) -> _LaplacianPattern:
    pat = _pattern_cache.get(g)
    if pat is None:
        if isinstance(g, AreaGraph):
            edges = build_edge_set(g).edges
        else:
            upper = sparse.triu(g.adjacency, k=1).tocoo()
            edges = np.column_stack([upper.row, upper.col]).astype(np.int64)
            edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
        pat = _LaplacianPattern(edges, g.adjacency.shape[0])
        _pattern_cache[g] = pat
    return pat


def build_adaptive_Q(g: AreaGraph, weights, eps: float = 1e-7) -> SparseSymMatrix:
    """``diag(W1) - W + eps I`` with border weights in canonical edge order."""
    pat = _pattern_for(g)
    w = np.asarray(weights, dtype=float)
    if w.shape != (pat.edges.shape[0],):
        raise ValueError(f"expected {pat.edges.shape[0]} edge weights, got shape {w.shape}")
    if np.any(w <= 0.0) or np.any(w >= 1.0):
        raise ValueError("edge weights must lie strictly inside (0, 1)")
    if not eps > 0:
        raise ValueError("eps must be positive")
    data = pat.weighted(w, 1.0, float(eps))
    return SparseSymMatrix(data, pat.indices, pat.indptr, w.copy(), float(eps), pat)


def build_leroux_Q(g, rho: float, eps: float = 0.0, weights=None) -> SparseSymMatrix:
    """``rho (diag(W1) - W) + (1 - rho) I``, optionally plus ``eps I``.

    ``g`` may be an :class:`AreaGraph` or an :class:`EdgeGraph`. The stored
    pattern always includes every graph edge, also when ``rho == 0``.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    pat = _pattern_for(g)
    w = np.ones(pat.edges.shape[0]) if weights is None else np.asarray(weights, float)
    data = pat.weighted(w, float(rho), 1.0 - rho + eps)
    return SparseSymMatrix(data, pat.indices, pat.indptr)


def write_matrix_market(q: SparseSymMatrix, path, comment: str = "") -> None:
    """Lower triangle of ``q`` in symmetric Matrix Market coordinate format."""
    spio.mmwrite(str(path), sparse.tril(q.matrix).tocoo(), comment=comment,
                 symmetry="symmetric", precision=17)


# ---------------------------------------------------------------------------
# Temporal AR(1) precision
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TemporalPrecision:
    """Tridiagonal AR(1) precision over ``T`` periods."""

    T: int
    alpha: float

    @property
    def diag(self) -> np.ndarray:
        d = np.full(self.T, 1.0 + self.alpha ** 2)
        d[-1] = 1.0
        return d

    @property
    def off(self) -> np.ndarray:
        return np.full(self.T - 1, -self.alpha)

    def to_dense(self) -> np.ndarray:
        z = np.diag(self.diag)
        if self.T > 1:
            idx = np.arange(self.T - 1)
            z[idx, idx + 1] = z[idx + 1, idx] = -self.alpha
        return z

    log_det = 0.0  # unit determinant for every alpha


def build_ar1_Z(alpha: float, T: int) -> TemporalPrecision:
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    if T < 1:
        raise ValueError("T must be at least 1")
    return TemporalPrecision(int(T), float(alpha))


# ---------------------------------------------------------------------------
# Symbolic analysis
# ---------------------------------------------------------------------------

def minimum_degree_order(indptr, indices, n: int) -> np.ndarray:
    """Greedy minimum-degree elimination order (ties broken by index)."""
    adj = [set() for _ in range(n)]
    for i in range(n):
        for j in indices[indptr[i]:indptr[i + 1]]:
            if j != i:
                adj[i].add(int(j))
    heap = [(len(adj[i]), i) for i in range(n)]
    heapq.heapify(heap)
    done = np.zeros(n, dtype=bool)
    order = []
    while heap:
        d, v = heapq.heappop(heap)
        if done[v] or d != len(adj[v]):
            continue
        done[v] = True
        order.append(v)
        nbrs = adj[v]
        for u in nbrs:
            adj[u].discard(v)
            adj[u] |= nbrs - {u}
        for u in nbrs:
            heapq.heappush(heap, (len(adj[u]), u))
        adj[v] = set()
    return np.asarray(order, dtype=np.int64)


class Symbolic:
    """Ordering, elimination tree, factor pattern and scatter maps."""

    def __init__(self, q: SparseSymMatrix, perm=None):
        n = q.dim
        self.n = n
        self.indptr = q.indptr
        self.indices = q.indices
        if perm is None:
            perm = minimum_degree_order(q.indptr, q.indices, n)
        self.perm = np.asarray(perm, dtype=np.int64)
        self.iperm = np.empty(n, dtype=np.int64)
        self.iperm[self.perm] = np.arange(n)

        # lower part of A = P Q P^T, by column: (row, source data index)
        rows_of = [[] for _ in range(n)]
        for r in range(n):
            pr = self.iperm[r]
            for p in range(q.indptr[r], q.indptr[r + 1]):
                pc = self.iperm[q.indices[p]]
                if pr >= pc:
                    rows_of[pc].append((pr, p))

        parent = np.full(n, -1, dtype=np.int64)
        children = [[] for _ in range(n)]
        pattern = []
        for j in range(n):
            s = {r for r, _ in rows_of[j]}
            for c in children[j]:
                s |= pattern[c]
            s.discard(j)
            s = {r for r in s if r > j}
            pattern.append(s)
            if s:
                parent[j] = min(s)
                children[parent[j]].append(j)
        self.parent = parent

        colptr = np.zeros(n + 1, dtype=np.int64)
        rowidx = []
        for j in range(n):
            col = [j] + sorted(pattern[j])
            rowidx.extend(col)
            colptr[j + 1] = colptr[j] + len(col)
        self.Lp = colptr
        self.Li = np.asarray(rowidx, dtype=np.int64)

        # row structure: for each row i, columns k < i with L[i, k] != 0
        rcount = np.zeros(n, dtype=np.int64)
        for k in range(n):
            for p in range(colptr[k] + 1, colptr[k + 1]):
                rcount[self.Li[p]] += 1
        self.Rp = np.concatenate([[0], np.cumsum(rcount)]).astype(np.int64)
        self.Rk = np.empty(self.Rp[-1], dtype=np.int64)
        self.Rpos = np.empty(self.Rp[-1], dtype=np.int64)
        fill = self.Rp[:-1].copy()
        for k in range(n):
            for p in range(colptr[k] + 1, colptr[k + 1]):
                i = self.Li[p]
                self.Rk[fill[i]] = k
                self.Rpos[fill[i]] = p
                fill[i] += 1

        # scatter A entries straight into L's value slots
        aptr = np.zeros(n + 1, dtype=np.int64)
        adst, asrc = [], []
        for j in range(n):
            loc = {int(r): colptr[j] + t for t, r in
                   enumerate(self.Li[colptr[j]:colptr[j + 1]])}
            for r, p in rows_of[j]:
                adst.append(loc[r])
                asrc.append(p)
            aptr[j + 1] = len(adst)
        self.Aptr = aptr
        self.Adst = np.asarray(adst, dtype=np.int64)
        self.Asrc = np.asarray(asrc, dtype=np.int64)
        self._all_cols = np.arange(n, dtype=np.int64)

    @property
    def nnz(self) -> int:
        return int(self.Lp[-1])

    def matches(self, q: SparseSymMatrix) -> bool:
        if q.dim != self.n:
            return False
        if q.indptr is self.indptr and q.indices is self.indices:
            return True
        return np.array_equal(q.indptr, self.indptr) and np.array_equal(q.indices, self.indices)

    def affected_columns(self, areas) -> np.ndarray:
        """Permuted columns to recompute when rows/cols ``areas`` change."""
        return _etree_closure(self.parent, self.iperm[np.asarray(areas, dtype=np.int64)])


@numba.njit(cache=True)
def _etree_closure(parent, starts):
    n = parent.shape[0]
    mark = np.zeros(n, dtype=np.bool_)
    for s in starts:
        j = s
        while j != -1 and not mark[j]:
            mark[j] = True
            j = parent[j]
    return np.flatnonzero(mark)


@numba.njit(cache=True)
def _factor_columns(cols, qdata, Lp, Li, Lx, Rp, Rk, Rpos, Aptr, Adst, Asrc, pos, tol):
    for j in cols:
        start = Lp[j]
        stop = Lp[j + 1]
        for p in range(start, stop):
            Lx[p] = 0.0
            pos[Li[p]] = p
        for e in range(Aptr[j], Aptr[j + 1]):
            Lx[Adst[e]] = qdata[Asrc[e]]
        for t in range(Rp[j], Rp[j + 1]):
            k = Rk[t]
            pj = Rpos[t]
            ljk = Lx[pj]
            for p in range(pj, Lp[k + 1]):
                Lx[pos[Li[p]]] -= Lx[p] * ljk
        d = Lx[start]
        if not d > tol:
            return j
        d = math.sqrt(d)
        Lx[start] = d
        for p in range(start + 1, stop):
            Lx[p] /= d
    return -1


@numba.njit(cache=True)
def _lsolve(Lp, Li, Lx, x):
    n = Lp.shape[0] - 1
    for j in range(n):
        x[j] /= Lx[Lp[j]]
        xj = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj


@numba.njit(cache=True)
def _ltsolve(Lp, Li, Lx, x):
    n = Lp.shape[0] - 1
    for j in range(n - 1, -1, -1):
        s = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            s -= Lx[p] * x[Li[p]]
        x[j] = s / Lx[Lp[j]]


@numba.njit(cache=True)
def _sum_log_diag(Lp, Lx):
    s = 0.0
    for j in range(Lp.shape[0] - 1):
        s += math.log(Lx[Lp[j]])
    return s


# ---------------------------------------------------------------------------
# Numeric factor
# ---------------------------------------------------------------------------

class CholeskyFactor:
    """``P Q P^T = L L^T`` with L stored column-compressed.

    Treated as an immutable value: refactorization returns a new factor and
    never touches this one.
    """

    __slots__ = ("symbolic", "Q", "Lx", "_logdet")

    def __init__(self, symbolic: Symbolic, Q: SparseSymMatrix, Lx: np.ndarray):
        self.symbolic = symbolic
        self.Q = Q
        self.Lx = Lx
        self._logdet = None

    @property
    def n(self) -> int:
        return self.symbolic.n

    @property
    def perm(self) -> np.ndarray:
        return self.symbolic.perm

    def L(self) -> sparse.csc_matrix:
        s = self.symbolic
        return sparse.csc_matrix((self.Lx, s.Li, s.Lp), shape=(s.n, s.n))

    def diag(self) -> np.ndarray:
        return self.Lx[self.symbolic.Lp[:-1]]

    def log_det(self) -> float:
        if self._logdet is None:
            self._logdet = 2.0 * _sum_log_diag(self.symbolic.Lp, self.Lx)
        return self._logdet

    def solve(self, b) -> np.ndarray:
        """``Q^{-1} b``."""
        s = self.symbolic
        x = np.asarray(b, dtype=float)[s.perm].copy()
        _lsolve(s.Lp, s.Li, self.Lx, x)
        _ltsolve(s.Lp, s.Li, self.Lx, x)
        out = np.empty_like(x)
        out[s.perm] = x
        return out

    def solve_lt(self, z) -> np.ndarray:
        """``P^T L^{-T} z``: maps iid standard normals to ``N(0, Q^{-1})``."""
        s = self.symbolic
        x = np.asarray(z, dtype=float).copy()
        _ltsolve(s.Lp, s.Li, self.Lx, x)
        out = np.empty_like(x)
        out[s.perm] = x
        return out

    def reconstruct(self) -> np.ndarray:
        """Dense ``P^T L L^T P`` for checking."""
        L = self.L().toarray()
        a = L @ L.T
        out = np.empty_like(a)
        p = self.symbolic.perm
        out[np.ix_(p, p)] = a
        return out


def analyse(q: SparseSymMatrix, perm=None) -> Symbolic:
    return Symbolic(q, perm)


def _run(symbolic: Symbolic, q: SparseSymMatrix, cols: np.ndarray, Lx: np.ndarray) -> None:
    s = symbolic
    pos = np.empty(s.n, dtype=np.int64)
    bad = _factor_columns(cols, q.data, s.Lp, s.Li, Lx, s.Rp, s.Rk, s.Rpos,
                          s.Aptr, s.Adst, s.Asrc, pos, PIVOT_TOL)
    if bad >= 0:
        raise NotPositiveDefiniteError(int(s.perm[bad]), float(Lx[s.Lp[bad]]))


def factorize(q: SparseSymMatrix, symbolic: Symbolic | None = None) -> CholeskyFactor:
    """Sparse Cholesky factor of a symmetric positive definite matrix.

    Pass ``symbolic`` (for example ``old_factor.symbolic``) to skip the
    ordering and pattern analysis when the sparsity pattern is unchanged.
    """
    if symbolic is None:
        symbolic = Symbolic(q)
    elif not symbolic.matches(q):
        raise PatternMismatchError("matrix pattern differs from the symbolic analysis")
    Lx = np.empty(symbolic.nnz)
    _run(symbolic, q, symbolic._all_cols, Lx)
    return CholeskyFactor(symbolic, q, Lx)


def log_det(f: CholeskyFactor) -> float:
    return f.log_det()


def refactorize_after_edge_change(f: CholeskyFactor, q_new: SparseSymMatrix,
                                  changed_edges, edges: EdgeSet | np.ndarray | None = None
                                  ) -> CholeskyFactor:
    """Update ``f`` to factor ``q_new``, recomputing only affected columns.

    ``changed_edges`` are canonical edge indices whose weights differ between
    ``f.Q`` and ``q_new``. Edge endpoints come from ``edges`` or, when
    omitted, from the pattern ``q_new`` was built on.
    """
    s = f.symbolic
    if not s.matches(q_new):
        raise PatternMismatchError("updated matrix has a different sparsity pattern")
    changed = np.asarray(changed_edges, dtype=np.int64).ravel()
    if changed.size == 0:
        return f
    if edges is None:
        if q_new._structure is None:
            raise ValueError("edge endpoints unknown; pass `edges`")
        edges = q_new._structure.edges
    elif isinstance(edges, EdgeSet):
        edges = edges.edges
    areas = np.asarray(edges)[changed].ravel()
    cols = s.affected_columns(areas)
    Lx = f.Lx.copy()
    _run(s, q_new, cols, Lx)
    return CholeskyFactor(s, q_new, Lx)


# ---------------------------------------------------------------------------
# Kronecker-structured forms
# ---------------------------------------------------------------------------

def as_field(phi, n: int | None = None) -> np.ndarray:
    """Return phi as an ``(N, T)`` array.

    A flat vector is read time-major: entries ``j*N .. (j+1)*N - 1`` are
    period ``j``.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        if n is None:
            raise ValueError("N needed to reshape a flat field")
        if phi.size % n:
            raise ValueError(f"flat field of length {phi.size} is not a multiple of N={n}")
        return phi.reshape(-1, n).T
    return phi


def temporal_gram(phi: np.ndarray, q: SparseSymMatrix) -> np.ndarray:
    """``G[j, l] = phi_j^T Q phi_l`` (T x T)."""
    return phi.T @ (q.matrix @ phi)


def st_quad_form(phi, Z: TemporalPrecision, Q: SparseSymMatrix) -> float:
    """``phi^T (Z kron Q) phi`` without forming the Kronecker product."""
    phi = as_field(phi, Q.dim)
    if phi.shape != (Q.dim, Z.T):
        raise ValueError(f"phi has shape {phi.shape}, expected ({Q.dim}, {Z.T})")
    g = temporal_gram(phi, Q)
    quad = float(np.dot(Z.diag, np.diag(g)))
    if Z.T > 1:
        quad += 2.0 * float(np.dot(Z.off, np.diag(g, 1)))
    return quad


def phi_log_density(phi, tau2: float, Z: TemporalPrecision, Qfactor: CholeskyFactor,
                    quad: float | None = None) -> float:
    """Log-density of ``N(0, tau2 (Z kron Q)^{-1})`` at ``phi``."""
    if not tau2 > 0:
        raise ValueError("tau2 must be positive")
    n = Qfactor.n
    phi = as_field(phi, n)
    if phi.shape != (n, Z.T):
        raise ValueError(f"phi has shape {phi.shape}, expected ({n}, {Z.T})")
    if quad is None:
        quad = st_quad_form(phi, Z, Qfactor.Q)
    nt = n * Z.T
    return (-0.5 * nt * math.log(2.0 * math.pi * tau2)
            + 0.5 * n * Z.log_det
            + 0.5 * Z.T * Qfactor.log_det()
            - 0.5 * quad / tau2)
