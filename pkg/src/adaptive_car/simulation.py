"""Synthetic data generation and the scenario x replicate x model study loop."""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics as dg
from .graph import AreaGraph, build_edge_set, build_lattice
from .model import Dataset, ModelSpec, Variant
from .precision import build_leroux_Q, factorize
from .sampler import ChainConfig, run_chain

log = logging.getLogger(__name__)

DEFAULT_BLOCKS = ((1, 1, 3, 3), (6, 5, 3, 3))


@dataclass(frozen=True)
class Scenario:
    """One simulation setting on a rook lattice.

    ``high_blocks`` are ``(row, col, height, width)`` rectangles whose areas
    carry the elevated risk ``A``; ``high_region`` overrides them with an
    explicit list of area indices. Passing ``area_graph`` replaces the
    ``nrow`` x ``ncol`` lattice by an arbitrary map (``high_region`` is then
    required).
    """

    T: int = 5
    A: float = 1.5
    E: float = 75.0
    nrow: int = 10
    ncol: int = 10
    high_blocks: tuple = DEFAULT_BLOCKS
    high_region: tuple | None = None
    noise_sd: float = 0.05
    gmrf_tau2: float = 0.01
    eps_sim: float = 1e-4
    seed: int = 2015
    name: str = ""
    area_graph: AreaGraph | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.A < 1:
            raise ValueError("A must be at least 1")
        if not self.E > 0:
            raise ValueError("E must be positive")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.noise_sd < 0 or self.gmrf_tau2 < 0:
            raise ValueError("noise_sd and gmrf_tau2 must be nonnegative")
        if self.area_graph is not None and self.high_region is None:
            raise ValueError("a custom area graph needs an explicit high_region")
        if self.A > 1 and not len(self.high_areas):
            raise ValueError("high region is empty")
        if not self.name:
            object.__setattr__(self, "name", f"T={self.T},A={self.A:g},E={self.E:g}")

    @property
    def graph(self) -> AreaGraph:
        if self.area_graph is not None:
            return self.area_graph
        return build_lattice(self.nrow, self.ncol)

    @property
    def n_areas(self) -> int:
        return self.graph.n_areas

    @property
    def high_areas(self) -> np.ndarray:
        if self.high_region is not None:
            h = np.unique(np.asarray(self.high_region, dtype=np.int64))
            if h.size and (h[0] < 0 or h[-1] >= self.n_areas):
                raise ValueError("high_region indices outside the area range")
            return h
        idx = np.arange(self.nrow * self.ncol).reshape(self.nrow, self.ncol)
        cells = [idx[r:r + h, c:c + w].ravel() for r, c, h, w in self.high_blocks]
        return np.unique(np.concatenate(cells)) if cells else np.zeros(0, np.int64)

    def high_mask(self) -> np.ndarray:
        m = np.zeros(self.n_areas, dtype=bool)
        m[self.high_areas] = True
        return m

    def true_boundaries(self, g: AreaGraph | None = None) -> np.ndarray:
        """Cut edges of the high region, in canonical edge order."""
        g = g or self.graph
        if self.A == 1:
            return np.zeros(build_edge_set(g).count, dtype=bool)
        e = build_edge_set(g).edges
        h = self.high_mask()
        return h[e[:, 0]] != h[e[:, 1]]


def table1_scenarios(**overrides) -> list[Scenario]:
    """The nine settings: vary T, then A, then E around (T=5, A=1.5, E=75)."""
    out = [Scenario(T=t, A=1.5, E=75.0, **overrides) for t in (1, 5, 20)]
    out += [Scenario(T=5, A=a, E=75.0, **overrides) for a in (1.0, 1.5, 2.0)]
    out += [Scenario(T=5, A=1.5, E=e, **overrides) for e in (10.0, 50.0, 100.0)]
    return out


def sample_smooth_field(g: AreaGraph, tau2: float, seed=None, eps: float = 1e-4) -> np.ndarray:
    """Centered draw from ``N(0, tau2 (D - W + eps I)^{-1})``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    f = factorize(build_leroux_Q(g, 1.0, eps=eps))
    x = np.sqrt(tau2) * f.solve_lt(rng.standard_normal(g.n_areas))
    return x - x.mean()


def make_true_risk(sc: Scenario, seed=None):
    """True risk surface (N x T) and true boundary flags per border."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    g = sc.graph
    field_ = sample_smooth_field(g, sc.gmrf_tau2, rng, sc.eps_sim)
    mean = np.log(sc.A) * sc.high_mask()
    noise = rng.normal(0.0, sc.noise_sd, size=(g.n_areas, sc.T)) if sc.noise_sd > 0 \
        else np.zeros((g.n_areas, sc.T))
    R = np.exp((field_ + mean)[:, None] + noise)
    return R, sc.true_boundaries(g)


def generate_dataset(sc: Scenario, seed=None):
    """Simulated counts with an intercept-only design, plus the truth."""
    rng = np.random.default_rng(seed)
    g = sc.graph
    R, bnd = make_true_risk(sc, rng)
    E = np.full((g.n_areas, sc.T), float(sc.E))
    Y = rng.poisson(E * R)
    X = np.ones((g.n_areas * sc.T, 1))
    d = Dataset(Y, E, X, g, covariate_names=("intercept",))
    return d, {"risk": R, "boundaries": bnd}


def replicate_seeds(base_seed: int, scenario_index: int, replicate: int, n_models: int):
    """Data seed and per-model chain seeds for one replicate.

    Seeds come from ``numpy.random.SeedSequence((base_seed, scenario_index,
    replicate))``: the first spawned 64-bit word seeds the data, the next
    ``n_models`` words seed the chains.
    """
    ss = np.random.SeedSequence((int(base_seed), int(scenario_index), int(replicate)))
    words = ss.generate_state(1 + n_models, dtype=np.uint64)
    return int(words[0]), [int(w) for w in words[1:]]


def score_fit(samples, d: Dataset, truth: dict, A: float) -> dict:
    risk_draws = samples.fitted_risk(d)
    med = np.median(risk_draws, axis=0)
    dic, pd = dg.dic_pd(samples, d)
    rec = {"rmse": dg.rmse(med, truth["risk"]), "dic": dic, "pd": pd,
           "coverage": dg.coverage95(risk_draws, truth["risk"]),
           "auc": np.nan, "specificity": np.nan}
    if samples.variant.adaptive:
        scores = samples.w.mean(axis=0)
        if A == 1:
            rec["specificity"] = dg.specificity(scores, truth["boundaries"])
        else:
            rec["auc"] = dg.roc_auc(scores, truth["boundaries"])[1]
    return rec


def _run_replicate(args):
    sc_index, sc, rep, models, cfg, spec_kw, base_seed = args
    data_seed, chain_seeds = replicate_seeds(base_seed, sc_index, rep, len(models))
    d, truth = generate_dataset(sc, data_seed)
    out = []
    for m, (variant, chain_seed) in enumerate(zip(models, chain_seeds)):
        rec = {"scenario": sc.name, "scenario_index": sc_index, "replicate": rep,
               "model": Variant(variant).value, "data_seed": data_seed,
               "chain_seed": chain_seed, "error": ""}
        try:
            spec = ModelSpec(variant=variant, **spec_kw)
            samples = run_chain(d, spec, replace(cfg, rng_seed=chain_seed))
            rec.update(score_fit(samples, d, truth, sc.A))
            rec["acceptance"] = samples.acceptance
        except Exception as exc:  # replicate failures are recorded, never fatal
            rec["error"] = f"{type(exc).__name__}: {exc}"
        out.append(rec)
    return out


METRICS = ("rmse", "dic", "pd", "coverage", "auc", "specificity")


@dataclass
class StudyResult:
    records: list
    table: list = field(default_factory=list)

    def aggregate(self) -> list:
        rows = []
        keys = []
        for r in self.records:
            k = (r["scenario_index"], r["scenario"], r["model"])
            if k not in keys:
                keys.append(k)
        for si, name, model in sorted(keys):
            recs = [r for r in self.records
                    if (r["scenario_index"], r["model"]) == (si, model) and not r["error"]]
            row = {"scenario": name, "model": model, "n_replicates": len(recs),
                   "n_failed": sum(1 for r in self.records if (r["scenario_index"], r["model"])
                                   == (si, model) and r["error"])}
            for mname in METRICS:
                vals = np.array([r[mname] for r in recs], dtype=float)
                vals = vals[~np.isnan(vals)]
                row[f"{mname}_median"] = float(np.median(vals)) if vals.size else np.nan
                row[f"{mname}_q10"] = float(np.quantile(vals, 0.1)) if vals.size else np.nan
            rows.append(row)
        self.table = rows
        return rows


def run_study(scenarios, n_replicates: int, models, cfg: ChainConfig, workers: int = 1,
              base_seed: int | None = None, spec_overrides: dict | None = None) -> StudyResult:
    """Generate, fit and score every scenario x replicate x model combination."""
    scenarios = list(scenarios)
    models = [Variant(m) for m in models]
    spec_kw = dict(spec_overrides or {})
    tasks = []
    for si, sc in enumerate(scenarios):
        seed = sc.seed if base_seed is None else base_seed
        for rep in range(n_replicates):
            tasks.append((si, sc, rep, models, cfg, spec_kw, seed))
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_replicate, tasks))
    else:
        chunks = [_run_replicate(t) for t in tasks]
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r["scenario_index"], r["replicate"], models.index(Variant(r["model"]))))
    for r in records:
        if r["error"]:
            warnings.warn(f"{r['scenario']} replicate {r['replicate']} {r['model']} failed: "
                          f"{r['error']}", stacklevel=2)
    result = StudyResult(records)
    result.aggregate()
    return result
