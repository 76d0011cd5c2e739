"""Poisson log-linear spatio-temporal model with adaptive border weights."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .graph import AreaGraph, EdgeGraph
from .precision import build_leroux_Q, factorize

V_BOUND = 15.0


class LinearPredictorOverflow(FloatingPointError):
    """Linear predictor too large to exponentiate safely."""


class Variant(str, enum.Enum):
    GLOBAL = "global"
    ADAPTIVE = "adaptive"
    CLUSTERED = "adaptive-clustered"

    @property
    def adaptive(self) -> bool:
        return self is not Variant.GLOBAL


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant = Variant.ADAPTIVE
    prior_var_beta: float = 10000.0
    prior_tau2: tuple[float, float] = (0.001, 0.001)
    prior_zeta2: tuple[float, float] = (0.001, 0.001)
    mu: float = 15.0
    eps: float = 1e-7
    v_bound: float = V_BOUND

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.prior_var_beta > 0:
            raise ValueError("prior_var_beta must be positive")
        for name in ("prior_tau2", "prior_zeta2"):
            a, b = getattr(self, name)
            if not (a > 0 and b > 0):
                raise ValueError(f"{name} shape and scale must be positive")
            object.__setattr__(self, name, (float(a), float(b)))
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.v_bound > 0:
            raise ValueError("v_bound must be positive")
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")


@dataclass(eq=False)
class Dataset:
    """Counts ``Y`` and expected counts ``E`` (both N x T) with design ``X``.

    Rows of ``X`` are time-major: row ``j * N + i`` is area i in period j.
    """

    Y: np.ndarray
    E: np.ndarray
    X: np.ndarray
    graph: AreaGraph
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.Y = np.asarray(self.Y)
        self.E = np.asarray(self.E, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if self.E.ndim == 1:
            self.E = self.E[:, None]
        if self.Y.shape != self.E.shape:
            raise ValueError(f"Y {self.Y.shape} and E {self.E.shape} differ in shape")
        if self.Y.shape[0] != self.graph.n_areas:
            raise ValueError(f"{self.Y.shape[0]} areas in data, {self.graph.n_areas} in graph")
        y = self.Y.astype(float)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("observed counts must be nonnegative integers")
        self.Y = np.round(y).astype(np.int64)
        if not np.all(self.E > 0):
            raise ValueError("expected counts must be positive")
        nt = self.Y.size
        X = np.asarray(self.X, dtype=float)
        if X.size == 0:
            X = np.zeros((nt, 0))
        if X.ndim != 2 or X.shape[0] != nt:
            raise ValueError(f"design matrix must have {nt} rows, got shape {X.shape}")
        self.X = X
        if not self.covariate_names:
            self.covariate_names = tuple(f"cov{r + 1}" for r in range(X.shape[1]))

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def offset(self, beta) -> np.ndarray:
        """``x_ij^T beta`` as an N x T array."""
        if self.p == 0:
            return np.zeros((self.N, self.T))
        return (self.X @ np.asarray(beta, dtype=float)).reshape(self.T, self.N).T

    def linear_predictor(self, beta, phi) -> np.ndarray:
        return self.offset(beta) + phi


@dataclass(eq=False)
class ParameterState:
    beta: np.ndarray
    phi: np.ndarray
    tau2: float
    alpha: float
    v_plus: np.ndarray
    zeta2: float
    rho: float
    mu: float
    rho_spatial: float = 0.0
    w_plus: np.ndarray = field(init=False)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        self.v_plus = np.asarray(self.v_plus, dtype=float)
        self.w_plus = logit_inv(self.v_plus)

    def set_v(self, v_plus) -> None:
        self.v_plus = np.asarray(v_plus, dtype=float)
        self.w_plus = logit_inv(self.v_plus)

    def copy(self) -> "ParameterState":
        return replace(self, beta=self.beta.copy(), phi=self.phi.copy(),
                       v_plus=self.v_plus.copy())


def logit_inv(v):
    """``exp(v) / (1 + exp(v))``."""
    return special.expit(v)


def logit(w):
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0.0) or np.any(w >= 1.0):
        raise ValueError("logit argument must lie strictly inside (0, 1)")
    out = special.logit(w)
    return float(out) if out.ndim == 0 else out


def log_likelihood(d: Dataset, s: ParameterState, include_constant: bool = True,
                   eta: np.ndarray | None = None) -> float:
    """Poisson log-likelihood of the counts.

    The ``-log(Y!)`` term is included by default so that deviances are
    exact; it cancels in every Metropolis ratio.
    """
    if eta is None:
        eta = d.linear_predictor(s.beta, s.phi)
    return poisson_loglik(d.Y, d.E, eta, include_constant)


def poisson_loglik(Y, E, eta, include_constant: bool = True) -> float:
    if np.max(np.abs(eta)) > 700:
        raise LinearPredictorOverflow("linear predictor exceeds 700 in absolute value")
    ll = float(np.sum(Y * (np.log(E) + eta) - E * np.exp(eta)))
    if include_constant:
        ll -= float(np.sum(special.gammaln(Y + 1.0)))
    return ll


def _edge_quadratics(v, mu, eg: EdgeGraph):
    pairs = eg.pairs()
    diff = v[pairs[:, 0]] - v[pairs[:, 1]] if pairs.size else np.zeros(0)
    return float(np.dot(diff, diff)), float(np.dot(v - mu, v - mu))


def v_quadratic(v_plus, rho: float, mu: float, eg: EdgeGraph) -> float:
    """``rho * sum_{ik~rs} (v_ik - v_rs)^2 + (1 - rho) * sum (v_ik - mu)^2``."""
    v = np.asarray(v_plus, dtype=float)
    if v.shape != (eg.n_edges,):
        raise ValueError(f"v_plus has shape {v.shape}, edge graph has {eg.n_edges} edges")
    pair, centred = _edge_quadratics(v, mu, eg)
    return rho * pair + (1.0 - rho) * centred


def edge_precision_logdet(eg: EdgeGraph, rho: float, eps: float = 1e-7) -> float:
    """``log|rho (D - W_e) + (1 - rho) I + eps I|`` on the border graph."""
    if rho == 0.0:
        return eg.n_edges * math.log1p(eps)
    return factorize(build_leroux_Q(eg, rho, eps=eps)).log_det()


def v_log_prior(v_plus, zeta2: float, rho: float, mu: float, eg: EdgeGraph,
                normalized: bool = False, eps: float = 1e-7,
                logdet: float | None = None) -> float:
    """Log prior of the logit border weights.

    By default only the exponent is returned. With ``normalized=True`` the
    Gaussian normalizing term is added, using a ridged border-graph Leroux
    precision so that the density is proper for every ``rho``; pass
    ``logdet`` to reuse a cached value of that precision's log-determinant.
    """
    if not zeta2 > 0:
        raise ValueError("zeta2 must be positive")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    out = -0.5 * v_quadratic(v_plus, rho, mu, eg) / zeta2
    if normalized:
        m = eg.n_edges
        if logdet is None:
            logdet = edge_precision_logdet(eg, rho, eps)
        out += 0.5 * logdet - 0.5 * m * math.log(2.0 * math.pi * zeta2)
    return out


def w_prior_density_curve(mu: float, zeta: float, grid=1000):
    """Prior density of a border weight induced by ``N(mu, zeta^2)`` on its logit.

    ``grid`` is either a number of interior points or an explicit array of
    weights in (0, 1). Returns ``(w, density)`` with density scaled to peak 1.
    """
    if np.ndim(grid) == 0:
        n = int(grid)
        w = np.linspace(0.0, 1.0, n + 2)[1:-1]
    else:
        w = np.asarray(grid, dtype=float)
    if np.any(w <= 0) or np.any(w >= 1):
        raise ValueError("grid must lie strictly inside (0, 1)")
    v = special.logit(w)
    logd = -0.5 * ((v - mu) / zeta) ** 2 - np.log(w) - np.log1p(-w)
    return w, np.exp(logd - logd.max())


def partial_correlation(i: int, k: int, rho: float, g: AreaGraph, weights=None) -> float:
    """Conditional correlation of areas i and k under the Leroux prior."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    w = g.adjacency if weights is None else weights
    w_ik = float(w[i, k])
    si = float(w[i].sum())
    sk = float(w[k].sum())
    # same association as the precision builder, so the two agree bitwise
    ridge = 1.0 - rho
    return rho * w_ik / math.sqrt((rho * si + ridge) * (rho * sk + ridge))


def expected_counts(populations, rates) -> np.ndarray:
    """Indirectly standardized expected counts ``sum_r N_ijr p_r``."""
    pop = np.asarray(populations, dtype=float)
    p = np.asarray(rates, dtype=float)
    if np.any(pop < 0):
        raise ValueError("populations must be nonnegative")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("rates must lie in [0, 1]")
    if pop.shape[-1] != p.shape[0]:
        raise ValueError(f"{pop.shape[-1]} strata in populations, {p.shape[0]} rates")
    e = pop @ p
    if np.any(e <= 0):
        bad = np.argwhere(np.atleast_1d(e) <= 0)[0]
        raise ValueError(f"zero expected count for cell {tuple(int(b) for b in bad)}")
    return e


def ig_logpdf(x: float, shape: float, scale: float) -> float:
    return (shape * math.log(scale) - math.lgamma(shape)
            - (shape + 1.0) * math.log(x) - scale / x)
