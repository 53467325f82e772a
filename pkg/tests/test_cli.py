"""Command-line behavior: config handling, outputs, determinism, exit codes."""

import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mxmnet import cli, fixtures
from mxmnet.cli import ConfigError, parse_config, run_bench
from mxmnet.data import load_molecule, save_molecule
from mxmnet.graph import count_angles, enumerate_angle_triples, neighbor_search
from mxmnet.model import ModelConfig, init_params


def _write_config(path, **kv):
    lines = [f"{k} = {v}" for k, v in kv.items()]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def _overfit_manifest(tmp_path, n=8):
    return fixtures.write_molecule_dir(
        fixtures.overfit_set(n, seed=7), tmp_path / "mols"
    )


def _dir_digest(root):
    acc = hashlib.sha256()
    for name in sorted(os.listdir(root)):
        acc.update(name.encode())
        with open(os.path.join(root, name), "rb") as fh:
            acc.update(fh.read())
    return acc.hexdigest()


def test_parse_config_defaults_and_comments(tmp_path):
    cfg = parse_config(
        _write_config(tmp_path / "a.cfg", hidden=16, seed="5  # trailing note")
    )
    assert cfg["hidden"] == 16
    assert cfg["seed"] == 5
    assert cfg["layers"] == 6  # untouched default


def test_parse_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "b.cfg"
    path.write_text("hidden = 8\nwidth = 9\n")
    with pytest.raises(ConfigError) as e:
        parse_config(path)
    assert "width" in str(e.value)
    assert ":2" in str(e.value)


def test_parse_config_rejects_bad_values(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("hidden = eight\n")
    with pytest.raises(ConfigError):
        parse_config(path)
    path.write_text("global_excludes_local = maybe\n")
    with pytest.raises(ConfigError):
        parse_config(path)
    path.write_text("just a line\n")
    with pytest.raises(ConfigError):
        parse_config(path)


def test_featurize_water_summary(tmp_path, capsys):
    mols_dir = tmp_path / "mols"
    mols_dir.mkdir()
    save_molecule(fixtures.water(), mols_dir / "water.extxyz")
    (mols_dir / "manifest.txt").write_text("water.extxyz\n")
    cfg = _write_config(
        tmp_path / "f.cfg",
        manifest=mols_dir / "manifest.txt",
        out=tmp_path / "out",
    )
    assert cli.main(["featurize", "--config", cfg]) == 0
    line = capsys.readouterr().out.strip()
    assert "N=3" in line and "El=4" in line and "Eg=6" in line
    assert "T2=2" in line and "T1=2" in line
    names = sorted(os.listdir(tmp_path / "out"))
    assert names == [
        "0000_water.graph.txt",
        "0000_water.rbf_global.csv",
        "0000_water.rbf_local.csv",
        "0000_water.sbf_one.csv",
        "0000_water.sbf_two.csv",
    ]
    graph_lines = (tmp_path / "out" / "0000_water.graph.txt").read_text().splitlines()
    assert all(ln.split()[0] in ("L", "G") for ln in graph_lines)
    rbf_header = (
        (tmp_path / "out" / "0000_water.rbf_local.csv").read_text().splitlines()[0]
    )
    assert rbf_header.startswith("j,i,rbf_01")


def test_featurize_reruns_byte_identical(tmp_path):
    manifest = _overfit_manifest(tmp_path, 4)
    out_a = tmp_path / "out_a"
    out_b = tmp_path / "out_b"
    base = dict(manifest=manifest)
    cfg_a = _write_config(tmp_path / "a.cfg", out=out_a, **base)
    cfg_b = _write_config(tmp_path / "b.cfg", out=out_b, **base)
    assert cli.main(["featurize", "--config", cfg_a]) == 0
    assert cli.main(["featurize", "--config", cfg_b]) == 0
    assert _dir_digest(out_a) == _dir_digest(out_b)


def test_featurize_empty_manifest_fails(tmp_path, capsys):
    (tmp_path / "manifest.txt").write_text("# empty\n")
    cfg = _write_config(
        tmp_path / "e.cfg", manifest=tmp_path / "manifest.txt", out=tmp_path / "out"
    )
    assert cli.main(["featurize", "--config", cfg]) == 2
    assert "error:" in capsys.readouterr().err


def test_featurize_missing_manifest_key(tmp_path, capsys):
    cfg = _write_config(tmp_path / "m.cfg", out=tmp_path / "out")
    assert cli.main(["featurize", "--config", cfg]) == 2
    assert "manifest" in capsys.readouterr().err


def _train_cfg_file(tmp_path, manifest, out, **extra):
    settings = dict(
        manifest=manifest,
        target="u0",
        hidden=8,
        layers=1,
        residuals=1,
        epochs=2,
        batch_group=3,
        train_frac=0.75,
        val_frac=0.25,
        test_frac=0.0,
        out=out,
    )
    settings.update(extra)
    return _write_config(tmp_path / "train.cfg", **settings)


def test_train_writes_expected_outputs(tmp_path, capsys):
    manifest = _overfit_manifest(tmp_path)
    out = tmp_path / "run"
    cfg = _train_cfg_file(tmp_path, manifest, out)
    assert cli.main(["train", "--config", cfg]) == 0
    assert "trained 2 epochs" in capsys.readouterr().out

    report = (out / "report.csv").read_text().splitlines()
    assert report[0] == "epoch,train_loss,val_mae,lr,seconds"
    assert len(report) == 3

    summary = json.loads((out / "summary.json").read_text())
    assert summary["target"] == "u0"
    assert summary["epochs_run"] == 2
    mcfg = ModelConfig(hidden_dim=8, n_layers=1, n_residuals=1)
    assert summary["n_parameters"] == init_params(mcfg, 0).n_scalars()
    assert os.path.exists(summary["checkpoint"])
    assert summary["train_target_std"] > 0


def test_train_flag_overrides_beat_config(tmp_path):
    manifest = _overfit_manifest(tmp_path)
    out = tmp_path / "run"
    cfg = _train_cfg_file(tmp_path, manifest, out, hidden=16)
    assert cli.main(["train", "--config", cfg, "--hidden", "8"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    mcfg = ModelConfig(hidden_dim=8, n_layers=1, n_residuals=1)
    assert summary["n_parameters"] == init_params(mcfg, 0).n_scalars()


def test_train_rejects_bad_target_before_writing(tmp_path, capsys):
    manifest = _overfit_manifest(tmp_path)
    out = tmp_path / "run"
    cfg = _train_cfg_file(tmp_path, manifest, out, target="zzz")
    assert cli.main(["train", "--config", cfg]) == 2
    assert not (out / "model.ckpt").exists()


def test_train_reports_differ_by_seed(tmp_path):
    manifest = _overfit_manifest(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    cfg = _train_cfg_file(tmp_path, manifest, out_a)
    assert cli.main(["train", "--config", cfg]) == 0
    assert cli.main(["train", "--config", cfg, "--seed", "9", "--out", str(out_b)]) == 0
    mae_a = json.loads((out_a / "summary.json").read_text())["final_train_mae"]
    mae_b = json.loads((out_b / "summary.json").read_text())["final_train_mae"]
    assert mae_a != mae_b


def _strip_seconds(csv_text):
    return [ln.rsplit(",", 1)[0] for ln in csv_text.strip().splitlines()]


def test_train_rerun_is_deterministic(tmp_path):
    manifest = _overfit_manifest(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    cfg_a = _train_cfg_file(tmp_path, manifest, out_a)
    assert cli.main(["train", "--config", cfg_a]) == 0
    assert cli.main(["train", "--config", cfg_a, "--out", str(out_b)]) == 0
    assert (out_a / "model.ckpt").read_bytes() == (out_b / "model.ckpt").read_bytes()
    assert _strip_seconds((out_a / "report.csv").read_text()) == _strip_seconds(
        (out_b / "report.csv").read_text()
    )


def test_eval_matches_reported_train_error(tmp_path, capsys):
    manifest = _overfit_manifest(tmp_path)
    out = tmp_path / "run"
    cfg = _train_cfg_file(tmp_path, manifest, out)
    assert cli.main(["train", "--config", cfg]) == 0
    capsys.readouterr()
    summary = json.loads((out / "summary.json").read_text())

    args = ["eval", "--config", cfg, "--checkpoint", summary["checkpoint"],
            "--split", "train"]
    assert cli.main(args) == 0
    first = capsys.readouterr().out.strip()
    met = json.loads(first)
    assert met["split"] == "train"
    assert abs(met["mae"] - summary["final_train_mae"]) < 1e-10

    assert cli.main(args) == 0
    assert capsys.readouterr().out.strip() == first


def test_eval_missing_checkpoint_fails(tmp_path, capsys):
    manifest = _overfit_manifest(tmp_path)
    cfg = _train_cfg_file(tmp_path, manifest, tmp_path / "run")
    code = cli.main(
        ["eval", "--config", cfg, "--checkpoint", str(tmp_path / "nope.ckpt")]
    )
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_verify_passes_on_clean_fixtures(tmp_path, capsys):
    assert cli.main(["verify", "--out", str(tmp_path / "out")]) == 0
    out = capsys.readouterr().out
    lines = [ln for ln in out.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert len(lines) == 8
    assert all(ln.startswith("PASS") for ln in lines)
    assert any("measured=" in ln and "tol=" in ln for ln in lines)


def test_verify_catches_tampered_fixture(tmp_path, capsys):
    pair_dir = tmp_path / "pairs"
    fixtures.write_verify_pairs(pair_dir, n=3, seed=3)
    args = ["verify", "--out", str(tmp_path / "out"), "--fixtures", str(pair_dir)]
    assert cli.main(args) == 0
    capsys.readouterr()

    victim = pair_dir / "water.rot.extxyz"
    m = load_molecule(victim)
    m.coords[0, 0] += 0.05  # break the rigid correspondence
    save_molecule(m, victim)
    assert cli.main(args) == 1
    out = capsys.readouterr().out
    assert any(ln.startswith("FAIL rigid-invariance") for ln in out.splitlines())


def test_bench_writes_csv_and_slopes(tmp_path, capsys):
    out = tmp_path / "bench"
    assert cli.main(["bench", "--n", "128", "--out", str(out)]) == 0
    assert "slopes:" in capsys.readouterr().out
    rows = (out / "bench.csv").read_text().splitlines()
    assert rows[0] == "scheme,n_nodes,cutoff,mean_degree,messages,seconds"
    assert len(rows) > 1
    slopes = json.loads((out / "bench_summary.json").read_text())
    assert set(slopes) == {"local", "global", "reference"}


def test_bench_counts_match_graph_oracles():
    rows, _ = run_bench(n=96, seed=5, repeats=1)
    rng = np.random.default_rng(5)
    pts = fixtures.random_points(96, 16.0, rng)
    from mxmnet.graph import MultiplexGraph

    for scheme, n, cutoff, k_mean, msgs, dt in rows:
        edges = neighbor_search(pts, cutoff)
        if scheme == "local":
            g = MultiplexGraph(
                n_nodes=96,
                local_edges=edges,
                global_edges=np.empty((0, 2), dtype=np.int64),
                local_rule=f"cutoff:{cutoff:g}",
                global_cutoff=16.0,
            )
            t = enumerate_angle_triples(g)
            assert msgs == t.two_hop.shape[0] + t.one_hop.shape[0]
        elif scheme == "global":
            assert msgs == 2 * edges.shape[0]
        else:
            undirected = {tuple(sorted(e)) for e in edges}
            assert msgs == 2 * count_angles(96, undirected)


def test_commands_write_only_under_out(tmp_path, monkeypatch):
    manifest = _overfit_manifest(tmp_path, 4)
    workdir = tmp_path / "cwd"
    workdir.mkdir()
    monkeypatch.chdir(workdir)
    cfg = _write_config(
        tmp_path / "w.cfg",
        manifest=manifest,
        target="u0",
        hidden=8,
        layers=1,
        residuals=1,
        epochs=1,
        train_frac=1.0,
        val_frac=0.0,
        test_frac=0.0,
        out=tmp_path / "sink",
    )
    assert cli.main(["featurize", "--config", cfg]) == 0
    assert cli.main(["train", "--config", cfg]) == 0
    assert os.listdir(workdir) == []


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-c", "import mxmnet.cli as c, sys; sys.exit(c.main(['--help']))"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "featurize" in proc.stdout and "bench" in proc.stdout
