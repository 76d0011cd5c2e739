"""Metropolis-within-Gibbs sampler.

One iteration updates, in fixed order: beta (joint random walk), phi
(one-at-a-time random walk per cell), tau2 (conjugate), alpha (reflective
random walk), v+ in blocks (joint random walk per block, with partial
Cholesky refactorization), zeta2 (conjugate), and rho (reflective random
walk, clustered variant only). The global comparator replaces the v+/zeta2/rho
steps by a random-walk update of the spatial Leroux parameter.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .graph import EdgeGraph, EdgeSet, build_edge_graph, build_edge_set
from .model import (
    Dataset,
    LinearPredictorOverflow,
    ModelSpec,
    ParameterState,
    Variant,
    edge_precision_logdet,
    ig_logpdf,
    logit_inv,
    poisson_loglik,
    v_quadratic,
)
from .precision import (
    CholeskyFactor,
    SparseSymMatrix,
    Symbolic,
    build_adaptive_Q,
    build_ar1_Z,
    build_leroux_Q,
    factorize,
    phi_log_density,
    refactorize_after_edge_change,
    st_quad_form,
)

log = logging.getLogger(__name__)

FAMILIES = ("beta", "phi", "alpha", "v", "rho", "rho_spatial")
GIBBS = ("tau2", "zeta2")


class SamplerStuckError(RuntimeError):
    """A Metropolis family accepted nothing over a post-burn-in window."""


@dataclass(frozen=True)
class ChainConfig:
    n_sample: int = 6000
    burnin: int = 2000
    thin: int = 1
    v_block_size: int = 10
    proposal_sd: dict = field(default_factory=lambda: {
        "beta": 0.05, "phi": 0.1, "alpha": 0.1, "v": 0.5, "rho": 0.05, "rho_spatial": 0.05})
    adapt_interval: int = 100
    target_accept: dict = field(default_factory=lambda: {
        "beta": 0.25, "v": 0.25, "phi": 0.44, "alpha": 0.44, "rho": 0.44,
        "rho_spatial": 0.44})
    rng_seed: int = 1
    check_stuck: bool = True

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if not 0 <= self.burnin < self.n_sample:
            raise ValueError("burnin must be in [0, n_sample)")
        if self.n_retained < 10:
            raise ValueError(f"only {self.n_retained} retained draws; need at least 10")
        if self.v_block_size < 1:
            raise ValueError("v_block_size must be at least 1")
        if self.adapt_interval < 1:
            raise ValueError("adapt_interval must be at least 1")
        sd = {**ChainConfig.__dataclass_fields__["proposal_sd"].default_factory(),
              **dict(self.proposal_sd)}
        if any(v < 0 for v in sd.values()):
            raise ValueError("proposal scales must be nonnegative")
        object.__setattr__(self, "proposal_sd", sd)
        tg = {**ChainConfig.__dataclass_fields__["target_accept"].default_factory(),
              **dict(self.target_accept)}
        object.__setattr__(self, "target_accept", tg)

    @property
    def n_retained(self) -> int:
        return (self.n_sample - self.burnin) // self.thin


@dataclass(eq=False)
class McmcSamples:
    variant: Variant
    beta: np.ndarray          # (S, p)
    phi: np.ndarray           # (S, N, T)
    tau2: np.ndarray          # (S,)
    alpha: np.ndarray
    zeta2: np.ndarray
    rho: np.ndarray
    rho_spatial: np.ndarray
    w: np.ndarray             # (S, N_W)
    deviance: np.ndarray      # (S,)
    acceptance: dict
    edges: np.ndarray         # (N_W, 2)
    seed: int = 0

    @property
    def n_draws(self) -> int:
        return self.tau2.shape[0]

    def linear_predictor(self, d: Dataset) -> np.ndarray:
        """Draws of ``x^T beta + phi`` (S, N, T)."""
        if d.p == 0:
            return self.phi.copy()
        off = np.einsum("rp,sp->sr", d.X, self.beta)
        return off.reshape(-1, d.T, d.N).transpose(0, 2, 1) + self.phi

    def fitted_risk(self, d: Dataset) -> np.ndarray:
        return np.exp(self.linear_predictor(d))


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _phi_conditional(phi, i, j, indptr, indices, qdata, zdiag, zoff, T):
    """Return ``(P, c)``: conditional prior precision * tau2 and the cross term.

    As a function of x = phi[i, j] the log prior kernel (times tau2) is
    ``-0.5 * P * x^2 - c * x`` with everything else held fixed.
    """
    qii = 0.0
    r0 = 0.0
    for p in range(indptr[i], indptr[i + 1]):
        k = indices[p]
        if k == i:
            qii = qdata[p]
        else:
            r0 += qdata[p] * phi[k, j]
    P = zdiag[j] * qii
    c = zdiag[j] * r0
    if j > 0:
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += qdata[p] * phi[indices[p], j - 1]
        c += zoff[j - 1] * s
    if j < T - 1:
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += qdata[p] * phi[indices[p], j + 1]
        c += zoff[j] * s
    return P, c


@numba.njit(cache=True)
def _phi_sweep(phi, offset, Y, E, indptr, indices, qdata, zdiag, zoff, tau2, sd,
               z, logu):
    N, T = phi.shape
    acc = 0
    for j in range(T):
        for i in range(N):
            x = phi[i, j]
            xn = x + sd * z[i, j]
            o = offset[i, j]
            if abs(o + xn) > 700.0:
                continue
            P, c = _phi_conditional(phi, i, j, indptr, indices, qdata, zdiag, zoff, T)
            dprior = -(0.5 * P * (xn * xn - x * x) + c * (xn - x)) / tau2
            dlik = Y[i, j] * (xn - x) - E[i, j] * (math.exp(o + xn) - math.exp(o + x))
            if logu[i, j] < dprior + dlik:
                phi[i, j] = xn
                acc += 1
    return acc


def _reflect01(x: float) -> float:
    while x < 0.0 or x > 1.0:
        x = -x if x < 0.0 else 2.0 - x
    return x


# ---------------------------------------------------------------------------
# Sampler
# ---------------------------------------------------------------------------

class GibbsSampler:
    """Owns one chain's mutable state and working precision factor."""

    def __init__(self, d: Dataset, spec: ModelSpec, cfg: ChainConfig,
                 state: ParameterState | None = None, edge_graph: EdgeGraph | None = None,
                 rng: np.random.Generator | None = None):
        self.d = d
        self.spec = spec
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
        self.edge_set: EdgeSet = build_edge_set(d.graph)
        self.edge_graph = edge_graph if edge_graph is not None else build_edge_graph(self.edge_set)
        m = self.edge_set.count
        if spec.variant.adaptive and not 1 <= cfg.v_block_size <= max(m, 1):
            raise ValueError(f"v_block_size must lie in [1, {m}]")
        self.blocks = [np.arange(s, min(s + cfg.v_block_size, m), dtype=np.int64)
                       for s in range(0, m, cfg.v_block_size)]
        self._block_pairs = self._pairs_touching_blocks()
        self.scales = dict(cfg.proposal_sd)
        self.accepted = {f: 0 for f in FAMILIES}
        self.attempted = {f: 0 for f in FAMILIES}
        self._win_acc = {f: 0 for f in FAMILIES}
        self._win_att = {f: 0 for f in FAMILIES}
        self._n_adapt = 0
        self.log_E = np.log(d.E)
        self.state = state if state is not None else self.initial_state()
        self._beta_chol = self._beta_proposal_chol()
        self._edge_symbolic: Symbolic | None = None
        self._edge_logdet: dict[float, float] = {}
        self.rebuild()

    # -- setup -------------------------------------------------------------

    def initial_state(self) -> ParameterState:
        d, spec = self.d, self.spec
        beta = np.zeros(d.p)
        if d.p:
            beta = _poisson_glm(d.X, d.Y.T.ravel(), self.log_E.T.ravel())
        phi = np.log((d.Y + 0.5) / d.E) - d.offset(beta)
        tau2 = max(float(np.var(phi)), 0.01)
        m = self.edge_set.count
        rho = 0.5 if spec.variant is Variant.CLUSTERED else 0.0
        return ParameterState(beta=beta, phi=phi, tau2=tau2, alpha=0.5,
                              v_plus=np.zeros(m), zeta2=10.0, rho=rho, mu=spec.mu,
                              rho_spatial=0.5)

    def _beta_proposal_chol(self):
        d = self.d
        if d.p == 0:
            return np.zeros((0, 0))
        eta = d.linear_predictor(self.state.beta, self.state.phi).T.ravel()
        mu = d.E.T.ravel() * np.exp(np.clip(eta, -700, 700))
        info = d.X.T @ (d.X * mu[:, None]) + np.eye(d.p) / self.spec.prior_var_beta
        try:
            return np.linalg.cholesky(np.linalg.inv(info))
        except np.linalg.LinAlgError:
            return np.eye(d.p)

    def _pairs_touching_blocks(self):
        pairs = self.edge_graph.pairs() if self.edge_graph.n_edges else np.zeros((0, 2), int)
        out = []
        for b in self.blocks:
            inb = np.zeros(self.edge_set.count, dtype=bool)
            inb[b] = True
            sel = inb[pairs[:, 0]] | inb[pairs[:, 1]] if pairs.size else np.zeros(0, bool)
            out.append(pairs[sel])
        return out

    def rebuild(self) -> None:
        """Recompute every cached quantity from ``self.state``."""
        s = self.state
        if self.spec.variant.adaptive:
            s.w_plus = logit_inv(s.v_plus)
            self.Q = build_adaptive_Q(self.d.graph, s.w_plus, self.spec.eps)
        else:
            s.w_plus = np.ones(self.edge_set.count)
            self.Q = build_leroux_Q(self.d.graph, s.rho_spatial, eps=self.spec.eps)
        sym = getattr(self, "factor", None)
        self.factor = factorize(self.Q, sym.symbolic if sym is not None else None)
        self.offset = self.d.offset(s.beta)
        self._refresh_innovations()

    def _refresh_innovations(self) -> None:
        s = self.state
        phi = s.phi
        D = phi.copy()
        D[:, 1:] -= s.alpha * phi[:, :-1]
        self.innov = D
        e = self.edge_set.edges
        diff = D[e[:, 0]] - D[e[:, 1]]
        self.edge_sq = np.einsum("ij,ij->i", diff, diff)
        self.innov_sq = float(np.sum(D * D))
        self.quad = self._quad_from_parts(s.w_plus)

    def _quad_from_parts(self, w) -> float:
        if self.spec.variant.adaptive:
            return float(np.dot(w, self.edge_sq)) + self.spec.eps * self.innov_sq
        r = self.state.rho_spatial
        return r * float(np.sum(self.edge_sq)) + (1.0 - r + self.spec.eps) * self.innov_sq

    def set_counts(self, Y) -> None:
        self.d.Y = np.asarray(Y, dtype=np.int64)

    # -- bookkeeping -------------------------------------------------------

    def _record(self, fam: str, ok: bool) -> None:
        self._record_counts(fam, int(ok), 1)

    def _record_counts(self, fam: str, acc: int, att: int) -> None:
        self.attempted[fam] += att
        self._win_att[fam] += att
        self.accepted[fam] += acc
        self._win_acc[fam] += acc

    def acceptance_rates(self) -> dict:
        return {f: self.accepted[f] / self.attempted[f]
                for f in FAMILIES if self.attempted[f]}

    def end_window(self, adapt: bool) -> None:
        self._n_adapt += 1
        gain = 1.0 / math.sqrt(self._n_adapt)
        for f in FAMILIES:
            att = self._win_att[f]
            if not att:
                continue
            rate = self._win_acc[f] / att
            if adapt and self.scales[f] > 0:
                self.scales[f] *= math.exp(gain * (rate - self.cfg.target_accept[f]))
                if f in ("alpha", "rho", "rho_spatial"):
                    self.scales[f] = min(self.scales[f], 1.0)
            elif not adapt and self.cfg.check_stuck and self.scales[f] > 0:
                if rate == 0.0:
                    raise SamplerStuckError(
                        f"{f}: no proposals accepted in the last {att} attempts "
                        f"(proposal sd {self.scales[f]:.3g})")
                if rate == 1.0:
                    log.debug("%s: every proposal accepted in the last window", f)
            self._win_acc[f] = 0
            self._win_att[f] = 0

    # -- full-conditional pieces ------------------------------------------

    def loglik(self, eta: np.ndarray) -> float:
        """Log-likelihood up to a constant, as used by the beta update.

        Subclasses may override this to swap in another likelihood, e.g. a
        Gaussian one with a closed-form posterior for testing.
        """
        return poisson_loglik(self.d.Y, self.d.E, eta, include_constant=False)

    def log_ratio_beta(self, beta_new) -> float:
        d, s = self.d, self.state
        beta_new = np.asarray(beta_new, dtype=float)
        eta_old = self.offset + s.phi
        eta_new = d.offset(beta_new) + s.phi
        v = self.spec.prior_var_beta
        dprior = -0.5 * (beta_new @ beta_new - s.beta @ s.beta) / v
        return self.loglik(eta_new) - self.loglik(eta_old) + dprior

    def log_ratio_phi_cell(self, i: int, j: int, x_new: float) -> float:
        s = self.state
        Z = build_ar1_Z(min(s.alpha, np.nextafter(1.0, 0.0)), self.d.T)
        P, c = _phi_conditional(s.phi, i, j, self.Q.indptr, self.Q.indices, self.Q.data,
                                Z.diag, Z.off, self.d.T)
        x = s.phi[i, j]
        o = self.offset[i, j]
        dprior = -(0.5 * P * (x_new * x_new - x * x) + c * (x_new - x)) / s.tau2
        dlik = self.d.Y[i, j] * (x_new - x) - self.d.E[i, j] * (math.exp(o + x_new)
                                                                 - math.exp(o + x))
        return dprior + dlik

    def quad_at_alpha(self, alpha: float) -> float:
        G = self._gram
        T = G.shape[0]
        q = G[0, 0]
        for j in range(1, T):
            q += G[j, j] - 2.0 * alpha * G[j, j - 1] + alpha * alpha * G[j - 1, j - 1]
        return float(q)

    def log_ratio_alpha(self, alpha_new: float) -> float:
        self._gram = self.state.phi.T @ (self.Q.matrix @ self.state.phi)
        return -0.5 * (self.quad_at_alpha(alpha_new)
                       - self.quad_at_alpha(self.state.alpha)) / self.state.tau2

    def propose_v_block(self, b: int, v_block_new):
        """Log ratio for replacing block ``b`` of v+; also returns the new Q and factor."""
        s, spec = self.state, self.spec
        idx = self.blocks[b]
        v_new_b = np.asarray(v_block_new, dtype=float)
        if np.any(np.abs(v_new_b) > spec.v_bound):
            return -np.inf, None, None, None
        w_new = s.w_plus.copy()
        w_new[idx] = logit_inv(v_new_b)
        Q_new = self.Q.with_edge_weights(w_new, idx)
        f_new = refactorize_after_edge_change(self.factor, Q_new, idx)
        dlogdet = f_new.log_det() - self.factor.log_det()
        dquad = float(np.dot(w_new[idx] - s.w_plus[idx], self.edge_sq[idx]))
        dphi = 0.5 * self.d.T * dlogdet - 0.5 * dquad / s.tau2
        v_old_b = s.v_plus[idx]
        dcent = float(np.sum((v_new_b - s.mu) ** 2 - (v_old_b - s.mu) ** 2))
        dpair = 0.0
        if s.rho > 0.0:
            pr = self._block_pairs[b]
            if pr.size:
                v_new = s.v_plus.copy()
                v_new[idx] = v_new_b
                dn = v_new[pr[:, 0]] - v_new[pr[:, 1]]
                do = s.v_plus[pr[:, 0]] - s.v_plus[pr[:, 1]]
                dpair = float(dn @ dn - do @ do)
        dprior = -0.5 * (s.rho * dpair + (1.0 - s.rho) * dcent) / s.zeta2
        return dphi + dprior, w_new, Q_new, f_new

    def edge_logdet(self, rho: float) -> float:
        if rho == 0.0:
            return edge_precision_logdet(self.edge_graph, 0.0, self.spec.eps)
        cached = self._edge_logdet.get(rho)
        if cached is None:
            Qe = build_leroux_Q(self.edge_graph, rho, eps=self.spec.eps)
            if self._edge_symbolic is None:
                self._edge_symbolic = Symbolic(Qe)
            cached = factorize(Qe, self._edge_symbolic).log_det()
            if len(self._edge_logdet) > 8:
                self._edge_logdet.clear()
            self._edge_logdet[rho] = cached
        return cached

    def log_ratio_rho(self, rho_new: float) -> float:
        s = self.state
        eg = self.edge_graph

        def target(r):
            return 0.5 * self.edge_logdet(r) - 0.5 * v_quadratic(s.v_plus, r, s.mu, eg) / s.zeta2

        return target(rho_new) - target(s.rho)

    def propose_rho_spatial(self, rho_new: float):
        s = self.state
        Q_new = build_leroux_Q(self.d.graph, rho_new, eps=self.spec.eps)
        f_new = factorize(Q_new, self.factor.symbolic)
        a = float(np.sum(self.edge_sq))
        quad_new = rho_new * a + (1.0 - rho_new + self.spec.eps) * self.innov_sq
        ratio = (0.5 * self.d.T * (f_new.log_det() - self.factor.log_det())
                 - 0.5 * (quad_new - self.quad) / s.tau2)
        return ratio, Q_new, f_new, quad_new

    def tau2_conditional(self) -> tuple[float, float]:
        a, b = self.spec.prior_tau2
        return a + 0.5 * self.d.N * self.d.T, b + 0.5 * self.quad

    def zeta2_conditional(self) -> tuple[float, float]:
        a, b = self.spec.prior_zeta2
        s = self.state
        q = v_quadratic(s.v_plus, s.rho, s.mu, self.edge_graph)
        return a + 0.5 * self.edge_set.count, b + 0.5 * q

    # -- updates -----------------------------------------------------------

    def update_beta(self) -> None:
        d, s = self.d, self.state
        if d.p == 0:
            return
        sd = self.scales["beta"]
        prop = s.beta + sd * (self._beta_chol @ self.rng.standard_normal(d.p))
        logu = math.log(self.rng.random())
        try:
            ratio = self.log_ratio_beta(prop)
        except LinearPredictorOverflow:
            ratio = -np.inf
        ok = logu < ratio
        if ok:
            s.beta = prop
            self.offset = d.offset(prop)
        self._record("beta", ok)

    def update_phi(self) -> None:
        s, d = self.state, self.d
        Z = build_ar1_Z(s.alpha, d.T)
        z = self.rng.standard_normal((d.N, d.T))
        logu = np.log(self.rng.random((d.N, d.T)))
        phi = np.ascontiguousarray(s.phi)
        acc = _phi_sweep(phi, np.ascontiguousarray(self.offset), d.Y, d.E,
                         self.Q.indptr, self.Q.indices, self.Q.data, Z.diag, Z.off,
                         s.tau2, self.scales["phi"], z, logu)
        s.phi = phi
        self._record_counts("phi", acc, d.N * d.T)
        self._refresh_innovations()

    def update_tau2(self) -> None:
        shape, scale = self.tau2_conditional()
        self.state.tau2 = scale / self.rng.gamma(shape)

    def update_alpha(self) -> None:
        s = self.state
        prop = _reflect01(s.alpha + self.scales["alpha"] * self.rng.standard_normal())
        logu = math.log(self.rng.random())
        ok = prop < 1.0 and logu < self.log_ratio_alpha(prop)
        if ok:
            s.alpha = prop
            self._refresh_innovations()
        self._record("alpha", ok)

    def update_v_blocks(self) -> None:
        s = self.state
        sd = self.scales["v"]
        for b, idx in enumerate(self.blocks):
            prop = s.v_plus[idx] + sd * self.rng.standard_normal(idx.size)
            logu = math.log(self.rng.random())
            ratio, w_new, Q_new, f_new = self.propose_v_block(b, prop)
            ok = logu < ratio
            if ok:
                s.v_plus[idx] = prop
                s.w_plus = w_new
                self.Q = Q_new
                self.factor = f_new
            self._record("v", ok)
        self.quad = self._quad_from_parts(s.w_plus)

    def update_zeta2(self) -> None:
        shape, scale = self.zeta2_conditional()
        self.state.zeta2 = scale / self.rng.gamma(shape)

    def update_rho(self) -> None:
        s = self.state
        prop = _reflect01(s.rho + self.scales["rho"] * self.rng.standard_normal())
        logu = math.log(self.rng.random())
        ok = logu < self.log_ratio_rho(prop)
        if ok:
            s.rho = prop
        self._record("rho", ok)

    def update_rho_spatial(self) -> None:
        s = self.state
        prop = _reflect01(s.rho_spatial + self.scales["rho_spatial"] * self.rng.standard_normal())
        logu = math.log(self.rng.random())
        ratio, Q_new, f_new, quad_new = self.propose_rho_spatial(prop)
        ok = logu < ratio
        if ok:
            s.rho_spatial = prop
            self.Q, self.factor, self.quad = Q_new, f_new, quad_new
        self._record("rho_spatial", ok)

    def step(self) -> None:
        self.update_beta()
        self.update_phi()
        self.update_tau2()
        self.update_alpha()
        if self.spec.variant.adaptive:
            self.update_v_blocks()
            self.update_zeta2()
            if self.spec.variant is Variant.CLUSTERED:
                self.update_rho()
        else:
            self.update_rho_spatial()

    # -- whole-state densities --------------------------------------------

    def log_joint(self) -> float:
        """Unnormalized log posterior of the current state (sparse route)."""
        d, s, spec = self.d, self.state, self.spec
        eta = self.offset + s.phi
        lp = poisson_loglik(d.Y, d.E, eta, include_constant=True)
        lp -= 0.5 * float(s.beta @ s.beta) / spec.prior_var_beta
        Z = build_ar1_Z(min(s.alpha, np.nextafter(1.0, 0.0)), d.T)
        lp += phi_log_density(s.phi, s.tau2, Z, self.factor, st_quad_form(s.phi, Z, self.Q))
        lp += ig_logpdf(s.tau2, *spec.prior_tau2)
        if spec.variant.adaptive:
            lp += (0.5 * self.edge_logdet(s.rho)
                   - 0.5 * self.edge_set.count * math.log(2 * math.pi * s.zeta2)
                   - 0.5 * v_quadratic(s.v_plus, s.rho, s.mu, self.edge_graph) / s.zeta2)
            lp += ig_logpdf(s.zeta2, *spec.prior_zeta2)
        return lp


def _poisson_glm(X, y, log_e, n_iter: int = 25) -> np.ndarray:
    """Poisson regression with offset by Newton steps (ridge-stabilized)."""
    beta = np.zeros(X.shape[1])
    mean_rate = np.log((y.sum() + 0.5) / np.exp(log_e).sum())
    const = np.all(X == X[:1], axis=0) & (X[0] != 0)
    if const.any():
        beta[np.argmax(const)] = mean_rate / X[0, np.argmax(const)]
    for _ in range(n_iter):
        eta = np.clip(X @ beta + log_e, -50, 50)
        mu = np.exp(eta)
        H = X.T @ (X * mu[:, None]) + 1e-6 * np.eye(X.shape[1])
        step = np.linalg.solve(H, X.T @ (y - mu))
        beta = beta + step
        if np.max(np.abs(step)) < 1e-10:
            break
    if not np.all(np.isfinite(beta)):
        return np.zeros(X.shape[1])
    return beta


def run_chain(d: Dataset, spec: ModelSpec, cfg: ChainConfig,
              edge_graph: EdgeGraph | None = None,
              state: ParameterState | None = None) -> McmcSamples:
    """Run one chain and return its thinned post-burn-in draws."""
    sampler = GibbsSampler(d, spec, cfg, state=state, edge_graph=edge_graph)
    S = cfg.n_retained
    N, T, m = d.N, d.T, sampler.edge_set.count
    out = {
        "beta": np.empty((S, d.p)), "phi": np.empty((S, N, T)), "tau2": np.empty(S),
        "alpha": np.empty(S), "zeta2": np.empty(S), "rho": np.empty(S),
        "rho_spatial": np.empty(S), "w": np.empty((S, m)), "deviance": np.empty(S),
    }
    k = 0
    for it in range(1, cfg.n_sample + 1):
        sampler.step()
        if it % cfg.adapt_interval == 0:
            sampler.end_window(adapt=it <= cfg.burnin)
        if it > cfg.burnin and (it - cfg.burnin) % cfg.thin == 0:
            s = sampler.state
            out["beta"][k] = s.beta
            out["phi"][k] = s.phi
            out["tau2"][k] = s.tau2
            out["alpha"][k] = s.alpha
            out["zeta2"][k] = s.zeta2 if spec.variant.adaptive else np.nan
            out["rho"][k] = s.rho if spec.variant.adaptive else np.nan
            out["rho_spatial"][k] = s.rho_spatial if not spec.variant.adaptive else np.nan
            out["w"][k] = s.w_plus
            out["deviance"][k] = -2.0 * poisson_loglik(d.Y, d.E, sampler.offset + s.phi)
            k += 1
    acc = sampler.acceptance_rates()
    return McmcSamples(variant=spec.variant, acceptance=acc,
                       edges=sampler.edge_set.edges, seed=cfg.rng_seed, **out)
