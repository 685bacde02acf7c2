from __future__ import annotations

import json

import numpy as np
import pytest

from lot_align import io
from lot_align.cli import main
from lot_align.harness.config import SCHEMA


def write_config(path, **overrides):
    cfg = {
        "schema": SCHEMA,
        "protocol": "complete",
        "data": {"synthetic": {"num_classes": 2, "per_class": 8, "fundus_dim": 6, "oct_dim": 6}},
        "folds": 2,
        "train": {"steps": 4, "batch_size": 8, "learning_rate": 0.01},
    }
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def cfg(tmp_path):
    return write_config(tmp_path / "cfg.json")


def test_synth(tmp_path, cfg):
    assert main(["--quiet", "synth", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    assert io.read_matrix(tmp_path / "d" / "fundus.mat").shape == (16, 6)
    assert io.read_labels(tmp_path / "d" / "labels.txt").size == 16


def test_synth_seed_flag_changes_data(tmp_path, cfg):
    main(["--quiet", "synth", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["--quiet", "--seed", "9", "synth", "--config", str(cfg), "--out", str(tmp_path / "b")])
    a = io.read_matrix(tmp_path / "a" / "fundus.mat")
    b = io.read_matrix(tmp_path / "b" / "fundus.mat")
    assert not np.array_equal(a, b)


def test_align(tmp_path):
    rng = np.random.default_rng(0)
    io.write_matrix(tmp_path / "f.mat", rng.normal(size=(6, 3)))
    io.write_matrix(tmp_path / "o.mat", rng.normal(size=(6, 4)))
    io.write_labels(tmp_path / "y.txt", [0, 1, 0, 1, 0, 1])
    rc = main(["--quiet", "align", "--embeds-f", str(tmp_path / "f.mat"), "--embeds-o", str(tmp_path / "o.mat"),
               "--labels", str(tmp_path / "y.txt"), "--eps", "0.05", "--out", str(tmp_path / "out")])
    assert rc == 0
    out = tmp_path / "out"
    fo, of = io.read_matrix(out / "t_c_fo.mat"), io.read_matrix(out / "t_c_of.mat")
    assert np.array_equal(fo, of.T)
    assert io.read_matrix(out / "t_v.mat").shape == (4, 3)
    assert io.read_matrix(out / "proto_oct.mat").shape == (6, 4)
    meta = json.loads((out / "align.json").read_text())
    assert meta["t_c_fo"]["converged"]


def test_align_rejects_bad_eps(tmp_path):
    io.write_matrix(tmp_path / "f.mat", np.ones((2, 2)))
    io.write_labels(tmp_path / "y.txt", [0, 1])
    rc = main(["align", "--embeds-f", str(tmp_path / "f.mat"), "--embeds-o", str(tmp_path / "f.mat"),
               "--labels", str(tmp_path / "y.txt"), "--eps", "-1", "--out", str(tmp_path / "o")])
    assert rc == 1


def test_train_then_eval(tmp_path, cfg):
    run = tmp_path / "run"
    assert main(["--quiet", "train", "--config", str(cfg), "--out", str(run)]) == 0
    assert (run / "model.ckpt").exists() and (run / "model.tv.mat").exists()
    for proto, extra in (("complete", []), ("inter_missing", []), ("proportional_missing", ["--ratio", "0.5"])):
        out = tmp_path / f"ev_{proto}"
        assert main(["--quiet", "eval", "--checkpoint", str(run / "model.ckpt"), "--protocol", proto,
                     *extra, "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["protocol"] == proto


def test_sweep_outputs(tmp_path, cfg):
    out = tmp_path / "sw"
    assert main(["--quiet", "sweep", "--config", str(cfg), "--ratios", "0,0.5", "--out", str(out)]) == 0
    for name in ("report.json", "report.csv", "report.svg"):
        assert (out / name).exists()


def test_validation_errors_exit_1(tmp_path, cfg):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": SCHEMA, "unknown": True}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert main(["sweep", "--config", str(cfg), "--ratios", "a,b", "--out", str(tmp_path / "x")]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 1
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--protocol", "complete",
                 "--out", str(tmp_path / "x")]) == 1
    assert main(["--seed", "-1", "synth", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
    assert main(["frobnicate"]) == 1


def test_runtime_failure_exits_2(tmp_path, cfg):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["--quiet", "synth", "--config", str(cfg), "--out", str(blocker / "sub")]) == 2


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "sweep" in capsys.readouterr().out
