import csv
import json

import numpy as np
import pytest

from snntopo import cli
from snntopo.topometrics import FEATURES

SMALL = ["--input-size", "8", "8"]


def run(*args):
    return cli.main([str(a) for a in args])


def test_mask_encode_metrics_ramanujan(tmp_path):
    mask = tmp_path / "m.npz"
    assert run("mask", "--arch", "conv6", "--method", "erk", "--sparsity", 0.9, "--seed", 3,
               "--out", mask, *SMALL) == 0
    man = json.loads((tmp_path / "m.npz.manifest.json").read_text())
    assert man["seeds"] == {"seed": 3} and man["config_hash"]
    assert {s["stage"] for s in man["stages"]} == {"arch", "mask"}

    for name in ("g.npz", "g.txt"):
        assert run("encode", "--arch", "conv6", "--mask", mask, "--out", tmp_path / name, *SMALL) == 0
    man = json.loads((tmp_path / "g.npz.manifest.json").read_text())
    assert str(mask) in man["inputs"]

    out = tmp_path / "t.csv"
    assert run("metrics", "--graph", tmp_path / "g.npz", tmp_path / "g.txt", "--key", "dataset=C10",
               "--out", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 2 and rows[0]["dataset"] == "C10"
    assert all(rows[0][f] == rows[1][f] for f in FEATURES)

    rep = tmp_path / "r.json"
    assert run("ramanujan", "--arch", "conv6", "--mask", mask, "--series", tmp_path / "s.csv",
               "--out", rep, *SMALL) == 0
    doc = json.loads(rep.read_text())
    assert doc["encoding"] == "rolled" and "correlation_with_density" in doc
    assert (tmp_path / "s.csv").exists()


def test_pipeline_is_deterministic(tmp_path):
    args = ["pipeline", "--arch", "resnet20", "--method", "erk", "--sparsity", 0.9, "--seed", 7, *SMALL]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    for name in ("topometrics.csv", "ramanujan.json", "mask.npz"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert "topometrics.csv" in man["outputs"]
    assert all("peak_rss_mb" in s for s in man["stages"])
    # existing output is kept unless --force
    assert run(*args, "--out", tmp_path / "a") == 2
    assert run(*args, "--out", tmp_path / "a", "--force", "--skip-ramanujan") == 0
    assert not (tmp_path / "a" / "ramanujan.json").exists()


def test_missing_mask_is_stage_tagged(tmp_path, capsys):
    code = run("encode", "--arch", "conv6", "--mask", tmp_path / "nope.npz", "--out", tmp_path / "g.npz")
    assert code == 2
    assert "[mask]" in capsys.readouterr().err


def test_failed_pipeline_leaves_nothing(tmp_path):
    code = run("pipeline", "--arch", "conv6", "--mask", tmp_path / "nope.npz", "--out", tmp_path / "p")
    assert code == 2
    assert not (tmp_path / "p").exists()
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".snntopo-")]


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path))
    assert run("fixtures", "--out", "data") == 0
    files = {p.name for p in (tmp_path / "data").rglob("*.*")}
    assert len(files - {"manifest.json"}) == 7 and "manifest.json" in files


def test_import_dense(tmp_path):
    from snntopo import archspec
    spec = archspec.load_bundled("conv6", input_size=(8, 8))
    rng = np.random.default_rng(0)
    tensors = {f"layer_{i}": (rng.random(l.weight_shape) < 0.3).astype(float)
               for i, l in spec.weighted_layers()}
    np.savez(tmp_path / "dense.npz", **tensors)
    assert run("mask", "--arch", "conv6", "--import-dense", tmp_path / "dense.npz",
               "--out", tmp_path / "m.npz", *SMALL) == 0


def _write_tables(tmp_path, rng):
    """Synthetic accuracy and metric tables where the drop follows the first feature."""
    algs = ["SNIP", "GraSP", "SynFlow", "ERK", "ER", "Uniform"]
    acc_rows, met_rows = [], []
    for arch in ("Conv-6", "Resnet-20"):
        for s in (0.6, 0.9):
            for alg in algs:
                x = rng.random(len(FEATURES))
                met_rows.append({"architecture": arch, "dataset": "", "sparsity": s, "algorithm": alg,
                                 **{f: v for f, v in zip(FEATURES, x)}})
                for d in ("C10", "C100"):
                    drop = 0.3 * x[0] + 0.05 * x[1] + 0.001 * rng.random()
                    acc_rows.append({"architecture": arch, "dataset": d, "algorithm": alg, "sparsity": s,
                                     "run": 0, "acc": 90 * (1 - drop), "acc_std": 0.1, "acc_dense": 90})
    for path, rows in ((tmp_path / "acc.csv", acc_rows), (tmp_path / "met.csv", met_rows)):
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


def test_analyze_rank_and_eval(tmp_path):
    _write_tables(tmp_path, np.random.default_rng(0))
    common = ["--records", tmp_path / "acc.csv", "--topometrics", tmp_path / "met.csv", "--runs", 3]
    assert run("analyze", "regress", *common, "--scenario", "sparsity:0.9", "--out", tmp_path / "ws.json") == 0
    assert run("analyze", "regress", *common, "--scenario", "arch:conv6", "--out", tmp_path / "wm.json") == 0
    rep = json.loads((tmp_path / "ws.json").read_text())
    assert set(rep["regressors"]) == {"ols", "ridge", "lasso", "elasticnet", "huber", "pcr"}
    assert rep["importance"]["sink"] > 0.5

    strategies = tmp_path / "strategies"
    strategies.mkdir()
    assert run("rank", "--topometrics", tmp_path / "met.csv", "--importance-arch", tmp_path / "wm.json",
               "--importance-sparsity", tmp_path / "ws.json", "--strategy-csv", strategies / "mixture.csv",
               "--out", tmp_path / "ranking.json") == 0
    ranked = json.loads((tmp_path / "ranking.json").read_text())["rankings"]
    assert len(ranked) == 4 and all(len(r["order"]) == 6 for r in ranked)

    assert run("rank", "eval", "--records", tmp_path / "acc.csv", "--strategies", strategies,
               "--out", tmp_path / "table.csv") == 0
    table = list(csv.DictReader((tmp_path / "table.csv").open()))
    assert len(table) == 4
    assert all(0.0 <= float(r["rbo_mean"]) <= 1.0 for r in table)


def test_rank_requires_inputs(tmp_path):
    assert run("rank", "--out", tmp_path / "x.json") == 2


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        run("--version")
    assert exc.value.code == 0
    assert "snntopo" in capsys.readouterr().out
