"""Shared fixtures, random-instance generators and dense oracles."""
from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from adaptive_car.graph import build_area_graph, build_edge_set

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def random_connected_graph(rng, n: int, extra: float = 0.3):
    """Random spanning tree plus a fraction of extra random edges."""
    order = rng.permutation(n)
    pairs = [(int(order[k]), int(order[rng.integers(0, k)])) for k in range(1, n)]
    n_extra = int(extra * n)
    for _ in range(n_extra):
        i, k = rng.choice(n, size=2, replace=False)
        pairs.append((int(i), int(k)))
    return build_area_graph(pairs, n)


def dense_adjacency(g, weights=None) -> np.ndarray:
    """Weighted adjacency assembled by looping over the canonical edge list."""
    es = build_edge_set(g)
    W = np.zeros((g.n_areas, g.n_areas))
    w = np.ones(es.count) if weights is None else np.asarray(weights)
    for (i, k), x in zip(es.edges, w):
        W[i, k] = W[k, i] = x
    return W


def dense_adaptive_Q(g, weights, eps):
    W = dense_adjacency(g, weights)
    return np.diag(W.sum(axis=1)) - W + eps * np.eye(g.n_areas)


def dense_leroux(W, rho, eps=0.0):
    return rho * (np.diag(W.sum(axis=1)) - W) + (1.0 - rho + eps) * np.eye(W.shape[0])


def dense_Z(alpha, T):
    Z = np.zeros((T, T))
    for j in range(T):
        Z[j, j] = 1.0 + alpha ** 2 if j < T - 1 else 1.0
        if j > 0:
            Z[j, j - 1] = Z[j - 1, j] = -alpha
    return Z


def dense_logdet(A) -> float:
    return float(np.sum(np.log(np.linalg.eigvalsh(A))))


def dense_logdet_ext(A) -> float:
    """Log-determinant from a dense Cholesky carried out in 80-bit long double.

    The extra precision matters when a ridge near 1e-7 sets the smallest
    eigenvalue; double-precision eigenvalues then lose about eight digits.
    """
    L = np.array(A, dtype=np.longdouble)
    n = L.shape[0]
    logdet = np.longdouble(0.0)
    for k in range(n):
        piv = L[k, k]
        if piv <= 0:
            raise np.linalg.LinAlgError("matrix is not positive definite")
        logdet += np.log(piv)
        col = L[k + 1:, k] / piv
        L[k + 1:, k + 1:] -= np.outer(col, L[k, k + 1:])
    return float(logdet)


def time_major(phi) -> np.ndarray:
    return np.asarray(phi).T.ravel()


def dense_phi_logpdf(phi, tau2, Z, Q) -> float:
    P = np.kron(Z, Q) / tau2
    cov = np.linalg.inv(P)
    cov = 0.5 * (cov + cov.T)
    return float(stats.multivariate_normal(np.zeros(P.shape[0]), cov).logpdf(time_major(phi)))


def dense_log_joint(d, spec, state, eg) -> float:
    """Full log posterior of a state, built from dense matrices and scipy densities."""
    from adaptive_car.model import Variant
    eta = d.offset(state.beta) + state.phi
    lp = float(np.sum(stats.poisson.logpmf(d.Y, d.E * np.exp(eta))))
    lp += float(np.sum(stats.norm.logpdf(state.beta, 0.0, math.sqrt(spec.prior_var_beta))))
    W = dense_adjacency(d.graph)
    if spec.variant is Variant.GLOBAL:
        Q = dense_leroux(W, state.rho_spatial, spec.eps)
    else:
        Q = dense_adaptive_Q(d.graph, state.w_plus, spec.eps)
    Z = dense_Z(state.alpha, d.T)
    # Gaussian log-density of phi written out directly
    x = time_major(state.phi)
    P = np.kron(Z, Q)
    n = x.size
    lp += (-0.5 * n * math.log(2 * math.pi * state.tau2) + 0.5 * dense_logdet_ext(P)
           - 0.5 * float(x @ P @ x) / state.tau2)
    a, b = spec.prior_tau2
    lp += float(stats.invgamma(a, scale=b).logpdf(state.tau2))
    if spec.variant.adaptive:
        m = eg.n_edges
        We = eg.adjacency.toarray()
        v = state.v_plus
        iu = np.triu_indices(m, 1)
        pair = float(np.sum(We[iu] * (v[:, None] - v[None, :])[iu] ** 2))
        quad = state.rho * pair + (1.0 - state.rho) * float(np.sum((v - state.mu) ** 2))
        Qe = dense_leroux(We, state.rho, spec.eps)
        lp += (0.5 * dense_logdet_ext(Qe) - 0.5 * m * math.log(2 * math.pi * state.zeta2)
               - 0.5 * quad / state.zeta2)
        a, b = spec.prior_zeta2
        lp += float(stats.invgamma(a, scale=b).logpdf(state.zeta2))
    return lp


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
