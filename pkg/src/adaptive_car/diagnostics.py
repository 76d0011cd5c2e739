"""Posterior summaries and evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import AreaGraph
from .model import Dataset, poisson_loglik
from .sampler import McmcSamples


@dataclass(frozen=True)
class BoundaryReport:
    edges: np.ndarray      # (N_W, 2)
    mean_w: np.ndarray
    p: np.ndarray          # P(w < 0.5 | Y)

    def flags(self, threshold: float) -> np.ndarray:
        return self.p > threshold


@dataclass(frozen=True)
class FitReport:
    dic: float
    pd: float
    mean_deviance: float
    parameters: dict       # name -> (median, lower, upper)
    risk_median: np.ndarray
    risk_lower: np.ndarray
    risk_upper: np.ndarray
    acceptance: dict
    n_draws: int


def _stable_mean(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Mean that is exact when every draw is identical."""
    x0 = np.take(x, 0, axis=axis)
    return x0 + np.mean(x - np.expand_dims(x0, axis), axis=axis)


def step_change_probs(samples: McmcSamples) -> BoundaryReport:
    """Per-border posterior mean weight and ``P(w < 0.5 | Y)``."""
    if not samples.variant.adaptive:
        raise ValueError("model has no estimated boundaries")
    w = samples.w
    return BoundaryReport(samples.edges, w.mean(axis=0), np.mean(w < 0.5, axis=0))


def classify_boundaries(r: BoundaryReport, threshold: float) -> np.ndarray:
    """Indices of borders whose step-change probability exceeds ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return np.flatnonzero(np.asarray(r.p) > threshold)


def dic_from_deviances(deviances, deviance_at_mean: float) -> tuple[float, float]:
    """``(DIC, pD)`` from posterior deviance draws and the plug-in deviance."""
    dev = np.asarray(deviances, dtype=float)
    dbar = float(_stable_mean(dev))
    pd = dbar - float(deviance_at_mean)
    return dbar + pd, pd


def dic_pd(samples: McmcSamples, d: Dataset) -> tuple[float, float]:
    """Deviance information criterion with the plug-in at the mean linear predictor."""
    if samples.n_draws < 10:
        raise ValueError(f"need at least 10 retained draws, got {samples.n_draws}")
    eta = samples.linear_predictor(d)
    dev = np.array([-2.0 * poisson_loglik(d.Y, d.E, e) for e in eta])
    eta_bar = _stable_mean(eta)
    return dic_from_deviances(dev, -2.0 * poisson_loglik(d.Y, d.E, eta_bar))


def rmse(fitted_risk, true_risk) -> float:
    a = np.asarray(fitted_risk, dtype=float)
    b = np.asarray(true_risk, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def coverage95(risk_draws, true_risk) -> float:
    """Share of cells whose equal-tailed 95% interval contains the truth."""
    draws = np.asarray(risk_draws, dtype=float)
    lo, hi = np.percentile(draws, [2.5, 97.5], axis=0)
    t = np.asarray(true_risk, dtype=float)
    return float(np.mean((lo <= t) & (t <= hi)))


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    sensitivity: np.ndarray
    specificity: np.ndarray


def roc_curve(edge_scores, true_boundaries, thresholds=None) -> RocCurve:
    """Sensitivity and specificity of declaring a boundary when score < threshold."""
    s = np.asarray(edge_scores, dtype=float)
    y = np.asarray(true_boundaries, dtype=bool)
    if thresholds is None:
        thresholds = np.round(np.linspace(0.0, 1.0, 101), 2)
    t = np.asarray(thresholds, dtype=float)
    declared = s[None, :] < t[:, None]
    npos, nneg = y.sum(), (~y).sum()
    sens = (declared & y).sum(axis=1) / npos if npos else np.full(t.size, np.nan)
    spec = (~declared & ~y).sum(axis=1) / nneg if nneg else np.full(t.size, np.nan)
    return RocCurve(t, sens, spec)


def roc_auc(edge_scores, true_boundaries, method: str = "grid"):
    """ROC curve and area under it.

    ``method="grid"`` sweeps thresholds 0, 0.01, ..., 1 and integrates the
    resulting curve by the trapezoid rule. ``method="exact"`` uses every
    distinct score as a threshold, which makes the area invariant under
    strictly monotone transforms of the scores.
    """
    s = np.asarray(edge_scores, dtype=float)
    y = np.asarray(true_boundaries, dtype=bool)
    if y.all() or not y.any():
        raise ValueError("AUC needs at least one boundary and one non-boundary border")
    if method == "grid":
        curve = roc_curve(s, y)
    elif method == "exact":
        u = np.unique(s)
        thr = np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2, [np.inf]]) if u.size > 1 \
            else np.array([-np.inf, np.inf])
        curve = roc_curve(s, y, thr)
    else:
        raise ValueError(f"unknown method {method!r}")
    fpr = np.concatenate([[0.0], 1.0 - curve.specificity, [1.0]])
    tpr = np.concatenate([[0.0], curve.sensitivity, [1.0]])
    order = np.lexsort((tpr, fpr))
    return curve, float(np.trapezoid(tpr[order], fpr[order]))


def specificity(edge_scores, true_boundaries, threshold: float = 0.5) -> float:
    """Share of non-boundary borders not declared (score >= threshold)."""
    s = np.asarray(edge_scores, dtype=float)
    y = np.asarray(true_boundaries, dtype=bool)
    if y.all():
        raise ValueError("no non-boundary borders")
    return float(np.mean(s[~y] >= threshold))


def morans_i(values, g: AreaGraph, n_perm: int = 999, seed=None) -> tuple[float, float]:
    """Moran's I with binary weights and a folded permutation p-value."""
    x = np.asarray(values, dtype=float)
    if x.shape != (g.n_areas,):
        raise ValueError(f"expected {g.n_areas} values, got shape {x.shape}")
    if np.ptp(x) == 0:
        raise ValueError("Moran's I is undefined for a constant vector")
    W = g.adjacency
    s0 = W.sum()

    def stat(v):
        z = v - v.mean()
        return len(v) / s0 * float(z @ (W @ z)) / float(z @ z)

    i_obs = stat(x)
    if n_perm <= 0:
        return i_obs, float("nan")
    rng = np.random.default_rng(seed)
    sims = np.array([stat(rng.permutation(x)) for _ in range(n_perm)])
    larger = int(np.sum(sims >= i_obs))
    larger = min(larger, n_perm - larger)
    return i_obs, (larger + 1.0) / (n_perm + 1.0)


def sir(d: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Standardized incidence ratios and their per-area mean over time."""
    r = d.Y / d.E
    return r, r.mean(axis=1)


def fit_report(samples: McmcSamples, d: Dataset) -> FitReport:
    dic, pd = dic_pd(samples, d)
    dbar = dic - pd

    def q(x):
        x = np.asarray(x, dtype=float)
        if x.size == 0 or np.all(np.isnan(x)):
            return (float("nan"),) * 3
        lo, med, hi = np.percentile(x, [2.5, 50.0, 97.5])
        return float(med), float(lo), float(hi)

    params = {f"beta{r}": q(samples.beta[:, r]) for r in range(samples.beta.shape[1])}
    params.update(tau2=q(samples.tau2), alpha=q(samples.alpha))
    if samples.variant.adaptive:
        params.update(zeta2=q(samples.zeta2), rho=q(samples.rho))
    else:
        params.update(rho_spatial=q(samples.rho_spatial))
    risk = samples.fitted_risk(d)
    lo, med, hi = np.percentile(risk, [2.5, 50.0, 97.5], axis=0)
    return FitReport(dic, pd, dbar, params, med, lo, hi, dict(samples.acceptance),
                     samples.n_draws)
