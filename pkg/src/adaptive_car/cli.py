"""Command-line entry point: ``adaptive-car {fit,simulate,study,summarize}``.

Every failure ends with one line on stderr of the form::

    error code=<n> kind=<kind>: <message>

with stable exit codes per kind (see ``EXIT_CODES``).
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import io as aio
from .graph import GraphError, build_edge_graph, build_edge_set
from .model import LinearPredictorOverflow, ModelSpec, Variant, w_prior_density_curve
from .precision import NotPositiveDefiniteError, build_adaptive_Q, build_leroux_Q, \
    write_matrix_market
from .sampler import ChainConfig, SamplerStuckError, run_chain
from .simulation import METRICS, Scenario, generate_dataset, run_study, table1_scenarios

log = logging.getLogger("adaptive_car")

EXIT_CODES = {"schema": 3, "value": 4, "numerical": 5, "io": 6}

SCENARIO_KEYS = {"T": int, "A": float, "E": float, "nrow": int, "ncol": int,
                 "noise_sd": float, "gmrf_tau2": float, "replicates": int, "seed": int,
                 "name": str}


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a,b', got {text!r}") from None
    return a, b


def _chain_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("chain")
    g.add_argument("--n-sample", type=int, default=6000, help="total iterations")
    g.add_argument("--burnin", type=int, default=2000)
    g.add_argument("--thin", type=int, default=1)
    g.add_argument("--v-block-size", type=int, default=10)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--workers", type=int, default=1)


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--model", choices=[v.value for v in Variant], default="adaptive")
    g.add_argument("--prior-var-beta", type=float, default=10000.0)
    g.add_argument("--prior-tau2", type=_pair, default=(0.001, 0.001), metavar="A,B")
    g.add_argument("--prior-zeta2", type=_pair, default=(0.001, 0.001), metavar="A,B")
    g.add_argument("--mu", type=float, default=15.0)
    g.add_argument("--epsilon", type=float, default=1e-7)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaptive-car",
                                description="Adaptive CAR models for areal count data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="INI file whose keys default the flags of the same name")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit one model to a dataset")
    f.add_argument("--data", help="CSV area,time,observed,expected,cov...")
    f.add_argument("--adjacency", help="edge list area_i,area_k or 0/1 matrix")
    f.add_argument("--edge-adjacency", help="explicit border adjacency edge_a,edge_b")
    _model_flags(f)
    _chain_flags(f)
    f.add_argument("--chains", type=int, default=1)
    f.add_argument("--format", choices=["csv", "bin"], default="csv")
    f.add_argument("--out")
    f.add_argument("--overwrite", action="store_true")
    f.add_argument("--dump-q", action="store_true",
                   help="also write the initial spatial precision in Matrix Market format")

    s = sub.add_parser("simulate", help="generate one synthetic dataset with its truth")
    s.add_argument("--scenario", help="key = value file (T, A, E, nrow, ncol, noise_sd, seed)")
    for key, typ in SCENARIO_KEYS.items():
        if key not in ("replicates", "name"):
            s.add_argument(f"--{key.replace('_', '-')}", dest=f"sc_{key}", type=typ)
    s.add_argument("--adjacency", help="simulate on this map instead of a lattice")
    s.add_argument("--high-region", help="CSV with header 'area' listing the high-risk areas")
    s.add_argument("--out")
    s.add_argument("--overwrite", action="store_true")

    st = sub.add_parser("study", help="scenario x replicate x model simulation study")
    st.add_argument("--scenario", action="append", default=[],
                    help="scenario file; repeatable (default: the nine reference settings)")
    st.add_argument("--replicates", type=int, default=None)
    st.add_argument("--models", default="adaptive,global",
                    help="comma-separated list of model variants")
    _model_flags(st)
    _chain_flags(st)
    st.add_argument("--out")
    st.add_argument("--overwrite", action="store_true")

    sm = sub.add_parser("summarize", help="recompute reports from persisted samples")
    sm.add_argument("--fit", help="output directory of a previous fit")
    sm.add_argument("--truth", help="true-boundary CSV for an ROC table")
    sm.add_argument("--prior-curves", default="15:1,15:3,15:5",
                    help="comma list of mu:zeta pairs for prior density curves")
    sm.add_argument("--out")
    sm.add_argument("--overwrite", action="store_true")
    return p


def _config_defaults(path: str, command: str) -> dict:
    cfg = aio.read_config(path)
    flat = {}
    for section in ("data", "model", "chain", "output", command):
        flat.update(cfg.get(section, {}))
    out = {}
    for k, v in flat.items():
        if k in ("prior_tau2", "prior_zeta2"):
            out[k] = _pair(v)
        elif k == "overwrite" or k == "dump_q":
            out[k] = v.strip().lower() in ("1", "true", "yes", "on")
        else:
            out[k] = v
    return out


REQUIRED = {"fit": ("data", "adjacency", "out"), "simulate": ("out",), "study": ("out",),
            "summarize": ("fit", "out")}


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            defaults = _config_defaults(args.config, args.command)
        except Exception as exc:
            raise CliError("io", f"cannot read config {args.config}: {exc}") from None
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        bad = sorted(set(defaults) - set(known))
        if bad:
            raise CliError("schema", f"unknown config keys: {', '.join(bad)}")
        typed = {}
        for k, v in defaults.items():
            conv = known[k].type
            typed[k] = conv(v) if conv is not None and isinstance(v, str) else v
        sub.set_defaults(**typed)
        args = parser.parse_args(argv)
    missing = [f"--{k}" for k in REQUIRED[args.command] if getattr(args, k) in (None, "")]
    if missing:
        raise CliError("schema", f"{args.command}: missing required option(s) "
                                 f"{', '.join(missing)} (flag or config key)")
    return args


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _spec(args) -> ModelSpec:
    try:
        return ModelSpec(variant=args.model, prior_var_beta=args.prior_var_beta,
                         prior_tau2=tuple(args.prior_tau2), prior_zeta2=tuple(args.prior_zeta2),
                         mu=args.mu, eps=args.epsilon)
    except ValueError as exc:
        raise CliError("value", str(exc)) from None


def _chain(args, seed=None) -> ChainConfig:
    try:
        return ChainConfig(n_sample=args.n_sample, burnin=args.burnin, thin=args.thin,
                           v_block_size=args.v_block_size,
                           rng_seed=args.seed if seed is None else seed)
    except ValueError as exc:
        raise CliError("value", str(exc)) from None


def chain_seeds(seed: int, n_chains: int) -> list[int]:
    """The first chain uses ``seed`` itself; the others are spawned from it."""
    if n_chains == 1:
        return [seed]
    extra = np.random.SeedSequence(seed).generate_state(n_chains - 1, dtype=np.uint64)
    return [seed] + [int(x) for x in extra]


def _fit_one(payload):
    d, spec, cfg, eg = payload
    return run_chain(d, spec, cfg, edge_graph=eg)


def write_fit_outputs(outdir: Path, samples, d, times, burnin, thin, fmt, provenance) -> dict:
    """Samples, fit summary and (for adaptive variants) the boundary report."""
    aio.write_samples(samples, outdir, burnin, thin, fmt, provenance)
    return write_reports(outdir, samples, d, times, provenance)


def write_reports(outdir: Path, samples, d, times, provenance) -> dict:
    fit = dg.fit_report(samples, d)
    boundary = dg.step_change_probs(samples) if samples.variant.adaptive else None
    if boundary is not None:
        aio.write_boundary_report(boundary, outdir / "boundaries.csv", provenance)
    aio.write_risk_table(fit, outdir / "risk.csv", times, provenance)
    summary = aio.fit_summary_dict(fit, boundary)
    summary["provenance"] = provenance
    aio.write_json(outdir / "fit_summary.json", summary)
    return summary


def _print_summary(summary: dict, label: str = "") -> None:
    head = f"[{label}] " if label else ""
    print(f"{head}DIC = {summary['DIC']:.2f}   pD = {summary['pD']:.2f}   "
          f"draws = {summary['n_draws']}")
    acc = ", ".join(f"{k} {v:.2f}" for k, v in summary["acceptance"].items() if v == v)
    print(f"{head}acceptance: {acc}")
    for name, q in summary["parameters"].items():
        print(f"{head}  {name:<12s} {q['median']: .4f}  ({q['lower95']: .4f}, {q['upper95']: .4f})")
    b = summary.get("boundaries")
    if b:
        print(f"{head}boundaries: {b['n_p_gt_0.75']} of {b['n_borders']} borders with p > 0.75, "
              f"{b['n_p_gt_0.99']} with p > 0.99")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    spec = _spec(args)
    if args.chains < 1:
        raise CliError("value", "--chains must be at least 1")
    cfg = _chain(args)
    g = aio.read_adjacency(args.adjacency)
    d, times = aio.read_dataset(args.data, g)
    eg = None
    inputs = {"data": aio.file_digest(args.data), "adjacency": aio.file_digest(args.adjacency)}
    if args.edge_adjacency:
        pairs = aio.read_edge_adjacency(args.edge_adjacency)
        eg = build_edge_graph(build_edge_set(g), explicit_pairs=pairs)
        inputs["edge_adjacency"] = aio.file_digest(args.edge_adjacency)
    seeds = chain_seeds(args.seed, args.chains)
    payloads = [(d, spec, replace(cfg, rng_seed=s), eg) for s in seeds]
    if args.workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            chains = list(pool.map(_fit_one, payloads))
    else:
        chains = [_fit_one(p) for p in payloads]
    with aio.output_directory(args.out, args.overwrite) as stage:
        aio.write_dataset(d, stage / "input_data.csv", times,
                          aio.provenance_line(args.seed, inputs))
        aio.write_adjacency(g, stage / "input_adjacency.csv", aio.provenance_line(args.seed, inputs))
        if args.dump_q:
            if spec.variant.adaptive:
                q = build_adaptive_Q(g, np.full(build_edge_set(g).count, 0.5), spec.eps)
            else:
                q = build_leroux_Q(g, 0.5, eps=spec.eps)
            write_matrix_market(q, stage / "Q_initial.mtx",
                                aio.provenance_line(args.seed, inputs)[2:])
        for c, samples in enumerate(chains):
            sub = stage if len(chains) == 1 else stage / f"chain{c + 1}"
            sub.mkdir(exist_ok=True)
            prov = aio.provenance_line(samples.seed, inputs)
            summary = write_fit_outputs(sub, samples, d, times, cfg.burnin, cfg.thin,
                                        args.format, prov)
            _print_summary(summary, "" if len(chains) == 1 else f"chain {c + 1}")
    return 0


def scenario_from_args(args) -> tuple[Scenario, int]:
    kv = aio.read_key_value(args.scenario) if args.scenario else {}
    bad = sorted(set(kv) - set(SCENARIO_KEYS))
    if bad:
        raise CliError("schema", f"invalid scenario keys: {', '.join(bad)}")
    vals = {}
    for k, raw in kv.items():
        try:
            vals[k] = SCENARIO_KEYS[k](raw)
        except ValueError:
            raise CliError("value", f"scenario key {k} has invalid value {raw!r}") from None
    for k in SCENARIO_KEYS:
        v = getattr(args, f"sc_{k}", None)
        if v is not None:
            vals[k] = v
    reps = vals.pop("replicates", 1)
    if getattr(args, "adjacency", None):
        vals["area_graph"] = aio.read_adjacency(args.adjacency)
    if getattr(args, "high_region", None):
        header, rows = aio.read_csv(args.high_region)
        if header[:1] != ["area"]:
            raise CliError("schema", f"{args.high_region}: expected header 'area'")
        try:
            vals["high_region"] = tuple(int(r[0]) for r in rows)
        except (ValueError, IndexError):
            raise CliError("schema", f"{args.high_region}: malformed area index") from None
    try:
        return Scenario(**vals), reps
    except (ValueError, TypeError) as exc:
        raise CliError("value", str(exc)) from None


def cmd_simulate(args) -> int:
    sc, _ = scenario_from_args(args)
    d, truth = generate_dataset(sc, sc.seed)
    inputs = {k: aio.file_digest(getattr(args, k)) for k in ("scenario", "adjacency", "high_region")
              if getattr(args, k, None)}
    prov = aio.provenance_line(sc.seed, inputs)
    es = build_edge_set(d.graph)
    with aio.output_directory(args.out, args.overwrite) as stage:
        aio.write_dataset(d, stage / "data.csv", provenance=prov)
        aio.write_adjacency(d.graph, stage / "adjacency.csv", prov)
        R = truth["risk"]
        aio.write_csv(stage / "true_risk.csv", ["area", "time", "risk"],
                      ([i, j, R[i, j]] for j in range(d.T) for i in range(d.N)), prov)
        aio.write_csv(stage / "true_boundaries.csv", ["edge_i", "edge_k"],
                      es.edges[truth["boundaries"]].tolist(), prov)
        aio.write_json(stage / "scenario.json",
                       {"T": sc.T, "A": sc.A, "E": sc.E, "nrow": sc.nrow, "ncol": sc.ncol,
                        "noise_sd": sc.noise_sd, "gmrf_tau2": sc.gmrf_tau2, "seed": sc.seed,
                        "high_areas": sc.high_areas.tolist(), "provenance": prov})
    print(f"simulated {d.N} areas x {d.T} periods, "
          f"{int(truth['boundaries'].sum())} true boundaries -> {args.out}")
    return 0


TABLE2_COLS = ("scenario", "model", "n_replicates", "n_failed", "rmse_median", "rmse_q10",
               "coverage_median", "dic_median", "pd_median")
TABLE3_COLS = ("scenario", "model", "n_replicates", "metric", "median", "q10")


def cmd_study(args) -> int:
    spec = _spec(args)
    cfg = _chain(args)
    reps = args.replicates
    if args.scenario:
        scenarios = []
        for path in args.scenario:
            ns = argparse.Namespace(scenario=path)
            sc, r = scenario_from_args(ns)
            scenarios.append(sc)
            reps = reps if reps is not None else r
    else:
        scenarios = table1_scenarios(seed=args.seed)
    reps = reps or 1
    try:
        models = [Variant(m.strip()) for m in args.models.split(",") if m.strip()]
    except ValueError as exc:
        raise CliError("value", str(exc)) from None
    spec_kw = {k: getattr(spec, k) for k in ("prior_var_beta", "prior_tau2", "prior_zeta2",
                                             "mu", "eps")}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = run_study(scenarios, reps, models, cfg, workers=args.workers,
                        spec_overrides=spec_kw)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    seeds = ",".join(dict.fromkeys(str(sc.seed) for sc in scenarios))
    inputs = {Path(p).name: aio.file_digest(p) for p in args.scenario}
    prov = aio.provenance_line(seeds, inputs)
    with aio.output_directory(args.out, args.overwrite) as stage:
        rec_cols = ["scenario", "replicate", "model", "data_seed", "chain_seed", *METRICS, "error"]
        aio.write_csv(stage / "replicates.csv", rec_cols,
                      ([str(r[c]) if c in ("scenario", "model", "error") else r.get(c, np.nan)
                        for c in rec_cols] for r in res.records), prov)
        aio.write_csv(stage / "table2.csv", TABLE2_COLS,
                      ([str(row[c]) if c in ("scenario", "model") else row[c]
                        for c in TABLE2_COLS] for row in res.table), prov)
        rows3 = []
        for row, sc in ((r, next(s for s in scenarios if s.name == r["scenario"]))
                        for r in res.table):
            if not Variant(row["model"]).adaptive:
                continue
            metric = "specificity" if sc.A == 1 else "auc"
            rows3.append([row["scenario"], row["model"], row["n_replicates"], metric,
                          row[f"{metric}_median"], row[f"{metric}_q10"]])
        aio.write_csv(stage / "table3.csv", TABLE3_COLS, rows3, prov)
        aio.write_json(stage / "manifest.json", {
            "tool": "adaptive_car", "version": __version__, "numpy": np.__version__,
            "replicates": reps, "models": [m.value for m in models],
            "chain": {"n_sample": cfg.n_sample, "burnin": cfg.burnin, "thin": cfg.thin,
                      "v_block_size": cfg.v_block_size},
            "scenarios": [{"name": sc.name, "T": sc.T, "A": sc.A, "E": sc.E, "seed": sc.seed}
                          for sc in scenarios],
            "runs": [{k: r[k] for k in ("scenario", "replicate", "model", "data_seed",
                                        "chain_seed")} for r in res.records],
            "provenance": prov})
    for row in res.table:
        print(f"{row['scenario']:<22s} {row['model']:<19s} RMSE {row['rmse_median']:.4f}  "
              f"DIC {row['dic_median']:.1f}  AUC {row['auc_median']:.4f}  "
              f"SPF {row['specificity_median']:.4f}  failed {row['n_failed']}")
    return 0


def cmd_summarize(args) -> int:
    fitdir = Path(args.fit)
    try:
        samples, meta = aio.read_samples(fitdir)
    except FileNotFoundError as exc:
        raise CliError("io", str(exc)) from None
    g = aio.read_adjacency(fitdir / "input_adjacency.csv")
    d, times = aio.read_dataset(fitdir / "input_data.csv", g)
    prov = meta.get("provenance", "")
    curves = []
    for item in args.prior_curves.split(","):
        try:
            mu, zeta = (float(x) for x in item.split(":"))
        except ValueError:
            raise CliError("value", f"bad prior curve spec {item!r}; expected mu:zeta") from None
        curves.append((mu, zeta))
    with aio.output_directory(args.out, args.overwrite) as stage:
        summary = write_reports(stage, samples, d, times, prov)
        grid = None
        cols, data = ["w"], []
        for mu, zeta in curves:
            w, dens = w_prior_density_curve(mu, zeta)
            grid = w
            cols.append(f"density_mu{mu:g}_zeta{zeta:g}")
            data.append(dens)
        if grid is not None:
            aio.write_csv(stage / "prior_curves.csv", cols,
                          ([grid[k], *(c[k] for c in data)] for k in range(grid.size)), prov)
        if args.truth:
            if not samples.variant.adaptive:
                raise CliError("value", "model has no estimated boundaries; cannot build ROC")
            header, rows = aio.read_csv(args.truth)
            if header[:2] != ["edge_i", "edge_k"]:
                raise CliError("schema", f"{args.truth}: expected header 'edge_i,edge_k'")
            es = build_edge_set(g)
            labels = np.zeros(es.count, dtype=bool)
            for r in rows:
                labels[es.index_of(int(r[0]), int(r[1]))] = True
            scores = samples.w.mean(axis=0)
            if labels.any() and not labels.all():
                curve, auc = dg.roc_auc(scores, labels)
                aio.write_roc(curve, stage / "roc.csv", prov)
                print(f"AUC = {auc:.4f}")
            else:
                print(f"specificity = {dg.specificity(scores, labels):.4f}")
    _print_summary(summary)
    return 0


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "study": cmd_study,
            "summarize": cmd_summarize}


def _classify(exc: BaseException) -> tuple[str, str]:
    if isinstance(exc, CliError):
        return exc.kind, str(exc)
    if isinstance(exc, (aio.SchemaError, aio.SampleFileError)):
        return "schema", str(exc)
    if isinstance(exc, (NotPositiveDefiniteError, LinearPredictorOverflow, SamplerStuckError,
                        FloatingPointError, np.linalg.LinAlgError)):
        return "numerical", str(exc)
    if isinstance(exc, (OSError,)):
        return "io", str(exc)
    if isinstance(exc, (GraphError, ValueError)):
        return "value", str(exc)
    raise exc


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except SystemExit:
        raise
    except BaseException as exc:
        if isinstance(exc, KeyboardInterrupt):
            raise
        kind, msg = _classify(exc)
        msg = " ".join(str(msg).split())
        print(f"error code={EXIT_CODES[kind]} kind={kind}: {msg}", file=sys.stderr)
        return EXIT_CODES[kind]


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
