"""CSV/binary persistence for data, graphs, samples and reports.

Every written text file starts with one ``#`` provenance comment line
carrying the tool version, seed and input digests; readers skip ``#``
lines. Floats are written with ``repr`` so values round-trip exactly.
"""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import shutil
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .graph import AreaGraph, GraphError, area_graph_from_matrix, build_area_graph
from .model import Dataset, Variant
from .sampler import McmcSamples

BIN_MAGIC = b"ADCARSMP"
BIN_VERSION = 1
SAMPLES_FORMAT_VERSION = 1


class SchemaError(ValueError):
    """Input file has missing or malformed columns."""


class SampleFileError(ValueError):
    """Persisted sample files are corrupt, truncated or of another version."""


# ---------------------------------------------------------------------------
# provenance and atomic writes
# ---------------------------------------------------------------------------

def file_digest(path, n: int = 16) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()[:n]


def provenance_line(seed=None, inputs: dict | None = None) -> str:
    parts = [f"tool=adaptive_car", f"version={__version__}"]
    if seed is not None:
        parts.append(f"seed={seed}")
    for name, digest in sorted((inputs or {}).items()):
        parts.append(f"{name}=sha256:{digest}")
    return "# " + " ".join(parts)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@contextmanager
def output_directory(path, overwrite: bool = False):
    """Yield a staging directory that replaces ``path`` on clean exit.

    An existing non-empty ``path`` is refused unless ``overwrite`` is set.
    On error the staging directory is removed and ``path`` is untouched.
    """
    path = Path(path)
    if path.exists() and (not path.is_dir() or any(path.iterdir())) and not overwrite:
        raise FileExistsError(f"output directory {path} exists and is not empty "
                              "(pass --overwrite to replace it)")
    path.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}.staging."))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    if path.exists():
        old = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}.old."))
        os.rmdir(old)
        os.replace(path, old)
        os.replace(stage, path)
        shutil.rmtree(old, ignore_errors=True)
    else:
        os.replace(stage, path)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows, provenance: str | None = None) -> None:
    buf = _io.StringIO()
    if provenance:
        buf.write(provenance + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_csv(path):
    """Return ``(header, rows)`` with ``#`` comment lines skipped."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError(f"{path}: file is empty") from None
    return header, [row for row in reader]


# ---------------------------------------------------------------------------
# graphs and data
# ---------------------------------------------------------------------------

def read_adjacency(path, n_areas: int | None = None) -> AreaGraph:
    """Edge list with header ``area_i,area_k`` or a dense 0/1 matrix."""
    header, rows = read_csv(path)
    if header[:2] == ["area_i", "area_k"]:
        try:
            pairs = np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64)
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"{path}: malformed edge row ({exc})") from None
        n = n_areas if n_areas is not None else (int(pairs.max()) + 1 if pairs.size else 0)
        return build_area_graph(pairs.reshape(-1, 2), n)
    try:
        mat = np.array([[float(v) for v in r] for r in [header] + rows])
    except ValueError:
        raise SchemaError(f"{path}: expected header 'area_i,area_k' or a numeric 0/1 matrix") \
            from None
    return area_graph_from_matrix(mat)


def write_adjacency(g: AreaGraph, path, provenance: str | None = None) -> None:
    from .graph import build_edge_set
    write_csv(path, ["area_i", "area_k"], build_edge_set(g).edges.tolist(), provenance)


def read_edge_adjacency(path) -> np.ndarray:
    header, rows = read_csv(path)
    if header[:2] != ["edge_a", "edge_b"]:
        raise SchemaError(f"{path}: expected header 'edge_a,edge_b'")
    try:
        return np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64).reshape(-1, 2)
    except (ValueError, IndexError) as exc:
        raise SchemaError(f"{path}: malformed row ({exc})") from None


DATA_COLUMNS = ("area", "time", "observed", "expected")


def read_dataset(path, graph: AreaGraph) -> tuple[Dataset, np.ndarray]:
    """Read ``area,time,observed,expected,cov1,...``; returns the data and time labels."""
    header, rows = read_csv(path)
    for col in DATA_COLUMNS:
        if col not in header:
            raise SchemaError(f"{path}: missing column '{col}'")
    ci = {c: header.index(c) for c in DATA_COLUMNS}
    covs = [h for h in header if h not in DATA_COLUMNS]
    try:
        area = np.array([int(r[ci["area"]]) for r in rows])
        time_lab = np.array([int(r[ci["time"]]) for r in rows])
        obs = np.array([float(r[ci["observed"]]) for r in rows])
        exp_ = np.array([float(r[ci["expected"]]) for r in rows])
        X = np.array([[float(r[header.index(c)]) for c in covs] for r in rows]).reshape(len(rows), len(covs))
    except (ValueError, IndexError) as exc:
        raise SchemaError(f"{path}: malformed value ({exc})") from None
    N = graph.n_areas
    times = np.unique(time_lab)
    T = times.size
    if area.size and (area.min() < 0 or area.max() >= N):
        raise SchemaError(f"{path}: area index outside [0, {N})")
    tix = np.searchsorted(times, time_lab)
    cell = tix * N + area
    if len(np.unique(cell)) != len(cell):
        raise SchemaError(f"{path}: duplicated (area, time) rows")
    if len(cell) != N * T:
        raise SchemaError(f"{path}: {N * T - len(cell)} missing (area, time) cells")
    order = np.argsort(cell)
    Y = np.zeros((N, T))
    E = np.zeros((N, T))
    Y[area, tix] = obs
    E[area, tix] = exp_
    return Dataset(Y, E, X[order], graph, covariate_names=tuple(covs)), times


def write_dataset(d: Dataset, path, times=None, provenance: str | None = None) -> None:
    times = np.arange(d.T) if times is None else np.asarray(times)
    header = list(DATA_COLUMNS) + list(d.covariate_names)
    rows = []
    for j in range(d.T):
        for i in range(d.N):
            r = j * d.N + i
            rows.append([i, int(times[j]), int(d.Y[i, j]), float(d.E[i, j])]
                        + [float(v) for v in d.X[r]])
    write_csv(path, header, rows, provenance)


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------

SCALARS = ("tau2", "alpha", "zeta2", "rho", "rho_spatial", "deviance")


def _iters(meta) -> np.ndarray:
    return meta["burnin"] + meta["thin"] * np.arange(1, meta["n_draws"] + 1)


def samples_meta(samples: McmcSamples, burnin: int, thin: int, provenance: str = "") -> dict:
    S, N, T = samples.phi.shape
    return {
        "format_version": SAMPLES_FORMAT_VERSION, "variant": samples.variant.value,
        "n_draws": S, "N": N, "T": T, "p": samples.beta.shape[1],
        "n_edges": samples.w.shape[1], "burnin": burnin, "thin": thin,
        "seed": samples.seed, "edges": samples.edges.tolist(),
        "acceptance": {k: samples.acceptance[k] for k in sorted(samples.acceptance)},
        "provenance": provenance,
    }


def write_samples(samples: McmcSamples, outdir, burnin: int, thin: int,
                  fmt: str = "csv", provenance: str = "") -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    meta = samples_meta(samples, burnin, thin, provenance)
    it = _iters(meta)
    if fmt == "csv":
        S, N, T = samples.phi.shape
        fams = {
            "beta": ([f"beta{r}" for r in range(samples.beta.shape[1])], samples.beta),
            "w": ([f"w{e}" for e in range(samples.w.shape[1])], samples.w),
            "phi": ([f"phi_{i}_{j}" for j in range(T) for i in range(N)],
                    samples.phi.transpose(0, 2, 1).reshape(S, -1)),
        }
        for name in SCALARS:
            fams[name] = ([name], getattr(samples, name)[:, None])
        for name, (cols, arr) in fams.items():
            write_csv(outdir / f"{name}.csv", ["iter"] + cols,
                      ([int(k)] + list(row) for k, row in zip(it, arr)), provenance)
        meta["format"] = "csv"
    elif fmt == "bin":
        arrays = {"beta": samples.beta, "phi": samples.phi, "w": samples.w}
        arrays.update({n: getattr(samples, n) for n in SCALARS})
        layout = {k: list(v.shape) for k, v in arrays.items()}
        head = json.dumps({"layout": layout, "order": list(arrays)}, sort_keys=True).encode()
        blob = bytearray(BIN_MAGIC + struct.pack("<H", BIN_VERSION) + b"\0" * 6)
        blob += struct.pack("<Q", len(head)) + head
        for v in arrays.values():
            blob += np.ascontiguousarray(v, dtype="<f8").tobytes()
        atomic_write_bytes(outdir / "samples.bin", bytes(blob))
        meta["format"] = "bin"
    else:
        raise ValueError(f"unknown sample format {fmt!r}")
    atomic_write_text(outdir / "samples_meta.json", json.dumps(meta, indent=1, sort_keys=True))


def read_samples(indir) -> tuple[McmcSamples, dict]:
    indir = Path(indir)
    try:
        meta = json.loads((indir / "samples_meta.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SampleFileError(f"cannot read sample metadata: {exc}") from None
    if meta.get("format_version") != SAMPLES_FORMAT_VERSION:
        raise SampleFileError(f"unsupported sample format version {meta.get('format_version')}")
    S, N, T, p, m = (meta[k] for k in ("n_draws", "N", "T", "p", "n_edges"))
    shapes = {"beta": (S, p), "phi": (S, N, T), "w": (S, m), **{n: (S,) for n in SCALARS}}
    arrays = {}
    if meta.get("format") == "bin":
        raw = (indir / "samples.bin").read_bytes()
        if raw[:8] != BIN_MAGIC or len(raw) < 24:
            raise SampleFileError("samples.bin: bad magic header")
        (ver,) = struct.unpack("<H", raw[8:10])
        if ver != BIN_VERSION:
            raise SampleFileError(f"samples.bin: unsupported version {ver}")
        (hlen,) = struct.unpack("<Q", raw[16:24])
        head = json.loads(raw[24:24 + hlen])
        off = 24 + hlen
        for name in head["order"]:
            shape = tuple(head["layout"][name])
            if shape != shapes[name]:
                raise SampleFileError(f"samples.bin: {name} has shape {shape}, expected {shapes[name]}")
            n = int(np.prod(shape)) * 8
            if off + n > len(raw):
                raise SampleFileError("samples.bin: truncated")
            arrays[name] = np.frombuffer(raw[off:off + n], dtype="<f8").reshape(shape).copy()
            off += n
        if off != len(raw):
            raise SampleFileError("samples.bin: trailing bytes")
    else:
        expect_it = _iters(meta)
        for name, shape in shapes.items():
            path = indir / f"{name}.csv"
            try:
                header, rows = read_csv(path)
            except (OSError, SchemaError) as exc:
                raise SampleFileError(f"{name}.csv: {exc}") from None
            width = int(np.prod(shape[1:])) if len(shape) > 1 else 1
            if len(header) != width + 1 or len(rows) != S or any(len(r) != width + 1 for r in rows):
                raise SampleFileError(f"{name}.csv: truncated or malformed "
                                      f"({len(rows)} rows, expected {S})")
            try:
                it = np.array([int(r[0]) for r in rows])
                vals = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(S, width)
            except ValueError as exc:
                raise SampleFileError(f"{name}.csv: {exc}") from None
            if not np.array_equal(it, expect_it):
                raise SampleFileError(f"{name}.csv: iteration column does not match metadata")
            if name == "phi":
                vals = vals.reshape(S, T, N).transpose(0, 2, 1)
            arrays[name] = vals.reshape(shape)
    samples = McmcSamples(
        variant=Variant(meta["variant"]), acceptance=dict(meta["acceptance"]),
        edges=np.asarray(meta["edges"], dtype=np.int64).reshape(-1, 2), seed=meta["seed"],
        **arrays)
    return samples, meta


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def write_boundary_report(report, path, provenance: str | None = None) -> None:
    rows = [[int(e[0]), int(e[1]), float(mw), float(p), bool(p > 0.75), bool(p > 0.99)]
            for e, mw, p in zip(report.edges, report.mean_w, report.p)]
    write_csv(path, ["edge_i", "edge_k", "mean_w", "p_ik", "flag75", "flag99"], rows, provenance)


def fit_summary_dict(fit, boundary=None) -> dict:
    out = {
        "DIC": fit.dic, "pD": fit.pd, "mean_deviance": fit.mean_deviance,
        "n_draws": fit.n_draws,
        "parameters": {k: {"median": v[0], "lower95": v[1], "upper95": v[2]}
                       for k, v in fit.parameters.items()},
        "acceptance": fit.acceptance,
    }
    if boundary is not None:
        n = len(boundary.p)
        out["boundaries"] = {
            "n_borders": n,
            "n_p_gt_0.75": int(np.sum(boundary.p > 0.75)),
            "n_p_gt_0.99": int(np.sum(boundary.p > 0.99)),
        }
    return out


def write_json(path, obj) -> None:
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o).__name__)
    atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=True, default=default) + "\n")


def write_risk_table(fit, path, times=None, provenance: str | None = None) -> None:
    N, T = fit.risk_median.shape
    times = np.arange(T) if times is None else times
    rows = [[i, int(times[j]), fit.risk_median[i, j], fit.risk_lower[i, j], fit.risk_upper[i, j]]
            for j in range(T) for i in range(N)]
    write_csv(path, ["area", "time", "risk_median", "risk_lower95", "risk_upper95"], rows,
              provenance)


def write_roc(curve, path, provenance: str | None = None) -> None:
    rows = zip(curve.thresholds, curve.sensitivity, curve.specificity)
    write_csv(path, ["threshold", "sensitivity", "specificity"], rows, provenance)


def read_key_value(path, section: str = "scenario") -> dict:
    """Flat ``key = value`` file; an INI section header is optional."""
    import configparser
    text = Path(path).read_text(encoding="utf-8")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    if not any(line.strip().startswith("[") for line in text.splitlines()):
        text = f"[{section}]\n" + text
    cp.read_string(text)
    out = {}
    for sec in cp.sections():
        for k, v in cp.items(sec):
            out[k] = v
    return out


def read_config(path) -> dict:
    """INI config: ``{section: {key: value}}`` with keys normalized to underscores."""
    import configparser
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read(path, encoding="utf-8")
    return {s: {k.replace("-", "_"): v for k, v in cp.items(s)} for s in cp.sections()}
