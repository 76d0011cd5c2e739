import json
import subprocess
import sys

import numpy as np
import pytest

from adaptive_car import io as aio
from adaptive_car.cli import chain_seeds, main
from adaptive_car.graph import build_area_graph, build_lattice
from adaptive_car.model import Dataset
from adaptive_car.sampler import ChainConfig, run_chain
from adaptive_car.model import ModelSpec
from adaptive_car.simulation import Scenario, generate_dataset

CHAIN = ["--n-sample", "240", "--burnin", "100", "--thin", "2", "--seed", "5"]


def _files(d):
    return sorted(p.relative_to(d).as_posix() for p in d.rglob("*") if p.is_file())


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "data"
    assert main(["simulate", "--T", "3", "--A", "2", "--nrow", "4", "--ncol", "4",
                 "--seed", "11", "--out", str(out)]) == 0
    return out


def _fit(sim_dir, out, *extra):
    return main(["fit", "--data", str(sim_dir / "data.csv"),
                 "--adjacency", str(sim_dir / "adjacency.csv"), *CHAIN,
                 "--out", str(out), *extra])


# -- io units -----------------------------------------------------------------

def test_dataset_round_trip_is_value_identical(tmp_path, rng):
    g = build_lattice(2, 3)
    X = np.column_stack([np.ones(12), rng.standard_normal(12) * 1e-3])
    d = Dataset(rng.poisson(30, (6, 2)), rng.uniform(1, 50, (6, 2)), X, g,
                covariate_names=("intercept", "x1"))
    aio.write_dataset(d, tmp_path / "d.csv", provenance=aio.provenance_line(1))
    d2, times = aio.read_dataset(tmp_path / "d.csv", g)
    np.testing.assert_array_equal(d2.Y, d.Y)
    np.testing.assert_array_equal(d2.E, d.E)
    np.testing.assert_array_equal(d2.X, d.X)
    assert d2.covariate_names == d.covariate_names and len(times) == 2


def test_adjacency_round_trip_and_dense_form(tmp_path):
    g = build_lattice(3, 3)
    aio.write_adjacency(g, tmp_path / "a.csv")
    np.testing.assert_array_equal(aio.read_adjacency(tmp_path / "a.csv").to_dense(), g.to_dense())
    np.savetxt(tmp_path / "m.csv", g.to_dense(), fmt="%d", delimiter=",")
    np.testing.assert_array_equal(aio.read_adjacency(tmp_path / "m.csv").to_dense(), g.to_dense())


def test_missing_column_is_schema_error(tmp_path):
    (tmp_path / "d.csv").write_text("area,time,observed\n0,0,3\n1,0,4\n")
    with pytest.raises(aio.SchemaError, match="expected"):
        aio.read_dataset(tmp_path / "d.csv", build_area_graph([(0, 1)], 2))


@pytest.mark.parametrize("fmt", ["csv", "bin"])
def test_samples_round_trip_bitwise(tmp_path, fmt, rng):
    d, _ = generate_dataset(Scenario(T=2, A=2.0, nrow=3, ncol=3, high_blocks=((0, 0, 1, 1),)), 1)
    s = run_chain(d, ModelSpec(variant="adaptive-clustered"),
                  ChainConfig(n_sample=120, burnin=60, thin=3, v_block_size=12))
    aio.write_samples(s, tmp_path / "s", 60, 3, fmt, aio.provenance_line(1))
    s2, meta = aio.read_samples(tmp_path / "s")
    for name in ("beta", "phi", "tau2", "alpha", "zeta2", "rho", "w", "deviance"):
        np.testing.assert_array_equal(getattr(s2, name), getattr(s, name))
    assert meta["burnin"] == 60 and meta["thin"] == 3


def test_binary_header_and_version_check(tmp_path):
    d, _ = generate_dataset(Scenario(T=1, A=1.0, nrow=2, ncol=2), 1)
    s = run_chain(d, ModelSpec(), ChainConfig(n_sample=30, burnin=10, v_block_size=4))
    aio.write_samples(s, tmp_path / "s", 10, 1, "bin", "")
    blob = next((tmp_path / "s").glob("*.bin"))
    raw = blob.read_bytes()
    assert raw[:8] == aio.BIN_MAGIC and raw[10:16] == b"\0" * 6
    blob.write_bytes(raw[:8] + b"\x09\x00" + raw[10:])
    with pytest.raises(aio.SampleFileError):
        aio.read_samples(tmp_path / "s")
    blob.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(aio.SampleFileError):
        aio.read_samples(tmp_path / "s")


def test_output_directory_contract(tmp_path):
    target = tmp_path / "out"
    with aio.output_directory(target) as stage:
        (stage / "a.txt").write_text("1")
    assert (target / "a.txt").read_text() == "1"
    with pytest.raises(FileExistsError):
        with aio.output_directory(target):
            pass
    with pytest.raises(RuntimeError):
        with aio.output_directory(target, overwrite=True) as stage:
            (stage / "b.txt").write_text("2")
            raise RuntimeError("boom")
    assert _files(target) == ["a.txt"]
    assert [p.name for p in tmp_path.iterdir()] == ["out"]


def test_chain_seeds():
    assert chain_seeds(9, 1) == [9]
    s = chain_seeds(9, 3)
    assert s[0] == 9 and len(set(s)) == 3 and s == chain_seeds(9, 3)


# -- simulate -------------------------------------------------------------------

def test_simulate_outputs_and_provenance(sim_dir):
    assert _files(sim_dir) == ["adjacency.csv", "data.csv", "scenario.json", "true_boundaries.csv",
                               "true_risk.csv"]
    for name in ("adjacency.csv", "data.csv", "true_boundaries.csv", "true_risk.csv"):
        first = (sim_dir / name).read_text().splitlines()[0]
        assert first.startswith("# tool=adaptive_car version=") and "seed=11" in first
    assert "provenance" in json.loads((sim_dir / "scenario.json").read_text())


def test_simulate_default_scenario_file(tmp_path):
    (tmp_path / "sc.ini").write_text("[scenario]\nT = 5\nE = 75\nnrow = 4\nncol = 4\nA = 1\n")
    out = tmp_path / "o"
    assert main(["simulate", "--scenario", str(tmp_path / "sc.ini"), "--out", str(out)]) == 0
    g = aio.read_adjacency(out / "adjacency.csv")
    d, times = aio.read_dataset(out / "data.csv", g)
    assert d.T == 5 and np.all(d.E == 75.0)
    rows = [l for l in (out / "true_boundaries.csv").read_text().splitlines() if not l.startswith("#")]
    assert rows == ["edge_i,edge_k"]


def test_simulate_bad_scenario_key(tmp_path, capsys):
    (tmp_path / "sc.ini").write_text("[scenario]\nT = 5\nbogus = 1\n")
    code = main(["simulate", "--scenario", str(tmp_path / "sc.ini"), "--out", str(tmp_path / "o")])
    assert code == 3
    assert "bogus" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_simulate_is_reproducible(sim_dir, tmp_path):
    out = tmp_path / "again"
    main(["simulate", "--T", "3", "--A", "2", "--nrow", "4", "--ncol", "4", "--seed", "11",
          "--out", str(out)])
    for name in _files(sim_dir):
        assert (out / name).read_bytes() == (sim_dir / name).read_bytes()


def test_simulated_dataset_reingests_identically(sim_dir):
    sc = Scenario(T=3, A=2.0, nrow=4, ncol=4)
    d, _ = generate_dataset(sc, 11)
    d2, _ = aio.read_dataset(sim_dir / "data.csv", aio.read_adjacency(sim_dir / "adjacency.csv"))
    np.testing.assert_array_equal(d2.Y, d.Y)
    np.testing.assert_array_equal(d2.E, d.E)


# -- fit and summarize ------------------------------------------------------------

def test_fit_writes_reports_and_is_deterministic(sim_dir, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _fit(sim_dir, a) == 0
    assert _fit(sim_dir, b) == 0
    out = capsys.readouterr().out
    assert "DIC" in out and "0.75" in out
    assert "boundaries.csv" in _files(a) and "fit_summary.json" in _files(a)
    for name in _files(a):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    for name in _files(a):
        if name.endswith(".csv"):
            assert (a / name).read_text().startswith("# tool=adaptive_car"), name
    header = [l for l in (a / "boundaries.csv").read_text().splitlines() if l[0] != "#"][0]
    assert header == "edge_i,edge_k,mean_w,p_ik,flag75,flag99"


def test_fit_global_has_no_boundary_report(sim_dir, tmp_path):
    out = tmp_path / "g"
    assert _fit(sim_dir, out, "--model", "global") == 0
    assert "boundaries.csv" not in _files(out)


def test_fit_multiple_chains(sim_dir, tmp_path):
    out = tmp_path / "mc"
    assert _fit(sim_dir, out, "--chains", "2") == 0
    files = _files(out)
    assert "chain1/samples_meta.json" in files and "chain2/fit_summary.json" in files


def test_fit_refuses_non_empty_output(sim_dir, tmp_path, capsys):
    out = tmp_path / "x"
    out.mkdir()
    (out / "keep").write_text("")
    assert _fit(sim_dir, out) == 6
    assert "error code=6 kind=io" in capsys.readouterr().err
    assert _files(out) == ["keep"]


def test_fit_missing_expected_column(sim_dir, tmp_path, capsys):
    text = (sim_dir / "data.csv").read_text().replace("expected", "exp")
    (tmp_path / "bad.csv").write_text(text)
    code = main(["fit", "--data", str(tmp_path / "bad.csv"), "--adjacency",
                 str(sim_dir / "adjacency.csv"), "--out", str(tmp_path / "o"), *CHAIN])
    err = capsys.readouterr().err.strip()
    assert code == 3 and err.startswith("error code=3 kind=schema:") and "expected" in err
    assert len(err.splitlines()) == 1


@pytest.mark.parametrize("flags", [["--prior-tau2", "0,1"], ["--mu", "nan"], ["--thin", "0"],
                                   ["--epsilon", "-1"]])
def test_fit_value_errors(sim_dir, tmp_path, flags, capsys):
    assert _fit(sim_dir, tmp_path / "o", *flags) == 4
    assert "kind=value" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_config_file_supplies_flags(sim_dir, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[data]\ndata = {sim_dir / 'data.csv'}\nadjacency = {sim_dir / 'adjacency.csv'}\n"
                   "[chain]\nn_sample = 240\nburnin = 100\nthin = 2\nseed = 5\n")
    out = tmp_path / "c"
    assert main(["--config", str(cfg), "fit", "--out", str(out)]) == 0
    ref = tmp_path / "r"
    _fit(sim_dir, ref)
    assert (out / "tau2.csv").read_bytes() == (ref / "tau2.csv").read_bytes()


def test_summarize_reproduces_fit_reports(sim_dir, tmp_path):
    fit = tmp_path / "f"
    assert _fit(sim_dir, fit, "--format", "bin") == 0
    summ = tmp_path / "s"
    assert main(["summarize", "--fit", str(fit), "--truth", str(sim_dir / "true_boundaries.csv"),
                 "--out", str(summ)]) == 0
    for name in ("boundaries.csv", "fit_summary.json", "risk.csv"):
        assert (summ / name).read_bytes() == (fit / name).read_bytes(), name
    assert {"prior_curves.csv", "roc.csv"} <= set(_files(summ))


def test_prior_curve_export_shape(sim_dir, tmp_path):
    fit = tmp_path / "f"
    _fit(sim_dir, fit)
    summ = tmp_path / "s"
    main(["summarize", "--fit", str(fit), "--out", str(summ), "--prior-curves", "15:2,15:20"])
    header, rows = aio.read_csv(summ / "prior_curves.csv")
    body = np.array(rows, dtype=float)
    assert header[0] == "w" and len(header) == 3
    w, tight, wide = body[:, 0], body[:, 1], body[:, 2]
    mid = np.argmin(np.abs(w - 0.5))
    assert tight[-1] / tight[mid] > 1e6
    # a wide prior around mu=15 piles mass at both ends
    assert wide[0] > wide[mid] and wide[-1] > wide[mid]
    assert tight.max() == wide.max() == 1.0


def test_summarize_truncated_samples(sim_dir, tmp_path, capsys):
    fit = tmp_path / "f"
    _fit(sim_dir, fit)
    p = fit / "phi.csv"
    p.write_text("\n".join(p.read_text().splitlines()[:5])[:-3])
    code = main(["summarize", "--fit", str(fit), "--out", str(tmp_path / "s")])
    assert code == 3 and "kind=schema" in capsys.readouterr().err
    assert not (tmp_path / "s").exists()


# -- study ------------------------------------------------------------------------

def test_study_tables(tmp_path):
    for name, A in (("a.ini", 2), ("b.ini", 1)):
        (tmp_path / name).write_text(f"[scenario]\nT = 2\nA = {A}\nnrow = 3\nncol = 3\n"
                                     "replicates = 1\nseed = 4\n")
    out = tmp_path / "st"
    code = main(["study", "--scenario", str(tmp_path / "a.ini"), "--scenario",
                 str(tmp_path / "b.ini"), "--models", "adaptive,global", "--n-sample", "200",
                 "--burnin", "100", "--v-block-size", "12", "--out", str(out)])
    assert code == 0
    assert {"replicates.csv", "table2.csv", "table3.csv", "manifest.json"} <= set(_files(out))
    _, t2 = aio.read_csv(out / "table2.csv")
    assert len(t2) == 4
    hdr, t3 = aio.read_csv(out / "table3.csv")
    rows = {(r[hdr.index("scenario")], r[hdr.index("metric")]) for r in t3}
    assert any(m == "specificity" and "A=1" in s for s, m in rows)
    assert any(m == "auc" and "A=2" in s for s, m in rows)


def test_entry_point_version():
    r = subprocess.run([sys.executable, "-m", "adaptive_car.cli", "--version"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "0.1.0" in r.stdout
