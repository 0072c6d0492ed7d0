import json
import subprocess
import sys

import numpy as np
import pytest

from poolhap.cli import main, read_config
from poolhap.io import (
    load_dataset,
    read_haplotypes,
    read_pool_table,
    read_subset_matrix,
    read_truth,
    write_haplotypes,
    write_pool_table,
    write_subset_matrix,
    write_truth,
)
from poolhap.model import all_haplotypes
from poolhap.simulate import simulate_shared


@pytest.fixture
def sim(tmp_path):
    d = tmp_path / "sim"
    d.mkdir()
    assert main(["simulate", "shared", "--H", "4", "--N", "5", "--n", "6", "--seed", "1", "--out-dir", str(d)]) == 0
    return d


def test_pool_table_round_trip(tmp_path):
    _, ds, _ = simulate_shared(8, 4, 10, 0.4, np.random.default_rng(0))
    write_pool_table(tmp_path / "p.tsv", ds, ["a", "b", "c"])
    ids, sizes, Y, names, X, xn = read_pool_table(tmp_path / "p.tsv")
    assert names == ["a", "b", "c"] and X.shape == (4, 0) and xn == []
    assert np.array_equal(Y, [p.counts for p in ds.pools]) and sizes.tolist() == [10] * 4
    back = load_dataset(tmp_path / "p.tsv", ds.haplotypes)
    assert [p.counts.tolist() for p in back.pools] == [p.counts.tolist() for p in ds.pools]


def test_pool_table_errors(tmp_path):
    (tmp_path / "bad.tsv").write_text("id\tn\ty\n")
    with pytest.raises(ValueError):
        read_pool_table(tmp_path / "bad.tsv")
    (tmp_path / "short.tsv").write_text("pool_id\tn\ty1\np1\t3\n")
    with pytest.raises(ValueError):
        read_pool_table(tmp_path / "short.tsv")


def test_subset_matrix_file(tmp_path):
    haps = sorted(all_haplotypes(3))
    (tmp_path / "s.txt").write_text("?01\n000 111\n")
    a = read_subset_matrix(tmp_path / "s.txt", haps)
    assert [haps[i] for i in np.flatnonzero(a.entries[0])] == ["001", "101"]
    assert a.entries[1].sum() == 2
    write_subset_matrix(tmp_path / "t.txt", a, haps)
    assert read_subset_matrix(tmp_path / "t.txt", haps) == a
    (tmp_path / "u.txt").write_text("222\n")
    with pytest.raises(ValueError):
        read_subset_matrix(tmp_path / "u.txt", haps)


def test_haplotypes_and_truth_files(tmp_path):
    write_haplotypes(tmp_path / "h.txt", ["00", "11"])
    assert read_haplotypes(tmp_path / "h.txt") == ["00", "11"]
    write_truth(tmp_path / "t.tsv", ["x"], ["00", "11"], [[0.25, 0.75]])
    labels, haps, F = read_truth(tmp_path / "t.tsv")
    assert labels == ["x"] and haps == ["00", "11"] and F.tolist() == [[0.25, 0.75]]


def test_config_file(tmp_path):
    (tmp_path / "c.cfg").write_text("# comment\nburn-in = 7\nmethod = exact\n")
    assert read_config(tmp_path / "c.cfg") == {"burn_in": "7", "method": "exact"}


def _infer(sim, out, *extra):
    out.mkdir(exist_ok=True)
    return main(["infer", "--pools", str(sim / "pools.tsv"), "--haplotypes", str(sim / "haplotypes.txt"),
                 "--chains", "2", "--burn-in", "20", "--iters", "30", "--seed", "5", "--out-dir", str(out), *extra])


@pytest.mark.filterwarnings("ignore:.*divergent")
@pytest.mark.parametrize("method", ["latent", "exact", "approx"])
def test_infer_is_byte_reproducible(sim, tmp_path, method):
    assert _infer(sim, tmp_path / "a", "--method", method) == 0
    assert _infer(sim, tmp_path / "b", "--method", method) == 0
    assert (tmp_path / "a" / "draws.tsv").read_bytes() == (tmp_path / "b" / "draws.tsv").read_bytes()
    head = (tmp_path / "a" / "draws.tsv").read_text().splitlines()
    assert head[0].split("\t")[:2] == ["chain", "iteration"] and len(head) == 61


def test_config_echo_and_override(sim, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("iters = 12\nchains = 1\nmethod = exact\n")
    out = tmp_path / "o"
    out.mkdir()
    code = main(["infer", "--config", str(cfg), "--pools", str(sim / "pools.tsv"), "--haplotypes",
                 str(sim / "haplotypes.txt"), "--burn-in", "10", "--chains", "2", "--out-dir", str(out)])
    assert code == 0
    echo = (out / "config.resolved.txt").read_text()
    assert "iters = 12" in echo and "chains = 2" in echo and "method = exact" in echo
    assert len((out / "draws.tsv").read_text().splitlines()) == 1 + 2 * 12


def test_error_json(sim, tmp_path, capsys):
    code = main(["infer", "--pools", str(tmp_path / "missing.tsv"), "--haplotypes", str(sim / "haplotypes.txt"),
                 "--out-dir", str(tmp_path)])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert set(err) == {"error", "message"}


def test_overflow_exit_code(tmp_path, capsys):
    d = tmp_path / "big"
    d.mkdir()
    main(["simulate", "shared", "--H", "8", "--N", "2", "--n", "60", "--conc", "5", "--out-dir", str(d)])
    code = main(["infer", "--pools", str(d / "pools.tsv"), "--haplotypes", str(d / "haplotypes.txt"),
                 "--method", "exact", "--max-solutions", "50", "--out-dir", str(d)])
    assert code == 4
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "EnumerationOverflowError" and "latent" in err["message"]


def test_markov_basis_commands(tmp_path, capsys):
    write_haplotypes(tmp_path / "h.txt", all_haplotypes(2))
    assert main(["markov-basis", "compute", "--haplotypes", str(tmp_path / "h.txt"), "--out-dir", str(tmp_path)]) == 0
    basis = tmp_path / "basis.txt"
    assert main(["markov-basis", "verify", "--basis", str(basis), "--max-n", "5", "--out-dir", str(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["connected"]
    (tmp_path / "empty.txt").write_text("# row 1 1 1 1\n# row 0 1 0 1\n# row 0 0 1 1\n")
    assert main(["markov-basis", "verify", "--basis", str(tmp_path / "empty.txt"), "--out-dir", str(tmp_path)]) == 3
    (tmp_path / "bad.txt").write_text("1 0 0 -1\n")
    assert main(["markov-basis", "import", "--basis", str(tmp_path / "bad.txt"), "--haplotypes",
                 str(tmp_path / "h.txt"), "--out-dir", str(tmp_path)]) == 1


def test_diagnose_command(sim, tmp_path):
    out = tmp_path / "run"
    assert _infer(sim, out) == 0
    assert main(["diagnose", "--draws", str(out / "draws.tsv"), "--truth", str(sim / "truth.tsv"),
                 "--out-dir", str(out)]) == 0
    rep = json.loads((out / "diagnostics.json").read_text())
    assert 0 <= rep["tvd"] <= 1 and set(rep["coverage"]) == {"0.5", "0.8", "0.9", "0.95"}
    assert (out / "summary.tsv").read_text().startswith("haplotype\tmean\tess\trhat")


def test_ligate_command(tmp_path):
    d = tmp_path / "mm"
    d.mkdir()
    main(["simulate", "shared", "--H", "5", "--markers", "6", "--N", "8", "--n", "20", "--out-dir", str(d)])
    assert main(["ligate", "--pools", str(d / "pools.tsv"), "--block-size", "3", "--burn-in", "60",
                 "--iters", "60", "--out-dir", str(d)]) == 0
    haps = read_haplotypes(d / "haplotypes.txt")
    assert all(len(h) == 6 for h in haps)
    assert json.loads((d / "blocks.json").read_text())


@pytest.mark.filterwarnings("ignore:.*divergent")
def test_timeseries_hier_predict(tmp_path):
    d = tmp_path / "ts"
    d.mkdir()
    assert main(["simulate", "timeseries", "--H", "4", "--N", "6", "--n", "10", "--out-dir", str(d)]) == 0
    assert main(["infer", "--model", "hier", "--method", "approx", "--pools", str(d / "pools.tsv"),
                 "--haplotypes", str(d / "haplotypes.txt"), "--chains", "1", "--burn-in", "10", "--iters", "10",
                 "--out-dir", str(d)]) == 0
    assert main(["predict", "--draws", str(d / "draws.npz"), "--times", "1.0,2.5", "--out-dir", str(d)]) == 0
    rows = (d / "predictive.tsv").read_text().splitlines()
    assert rows[0].split("\t")[:3] == ["t", "haplotype", "mean"] and len(rows) == 1 + 2 * 4


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "poolhap", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "poolhap" in r.stdout
