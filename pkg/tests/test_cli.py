import csv
import json

import numpy as np
import pytest

from grove.cli import main
from grove.core import load_dataset


@pytest.fixture
def workspace(tmp_path):
    data = tmp_path / "data.csv"
    assert main(["simulate", "--design", "smooth", "--n", "300", "--d", "2", "--seed", "4",
                 "--test-points", "15", "--out", str(data)]) == 0
    pts = tmp_path / "pts.csv"
    side = json.loads(data.with_suffix(".json").read_text())
    np.savetxt(pts, np.array(side["test_points"]), delimiter=",", header="x1,x2", comments="")
    return tmp_path, data, pts, side


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_simulate(workspace):
    _, data, _, side = workspace
    ds = load_dataset(data, expect_treatment=True)
    assert ds.n == 300 and ds.d == 2
    assert side["design"] == "smooth" and len(side["true_tau"]) == 15


def test_train_and_predict(workspace):
    tmp, data, pts, _ = workspace
    model = tmp / "model.json"
    args = ["train", "--data", str(data), "--trees", "50", "--subsample", "60",
            "--model-out", str(model)]
    assert main(args) == 0
    first = model.read_text()
    assert main(args + ["--jobs", "4"]) == 0 and model.read_text() == first
    out = tmp / "pred.csv"
    assert main(["predict", "--model", str(model), "--points", str(pts), "--out", str(out),
                 "--ci-level", "0.9"]) == 0
    rows = _rows(out)
    assert len(rows) == 15 and list(rows[0])[:3] == ["x1", "x2", "estimate"]
    for r in rows:
        assert float(r["ci_low"]) <= float(r["estimate"]) <= float(r["ci_high"])


def test_config_file_and_overrides(workspace):
    tmp, data, _, _ = workspace
    cfg = tmp / "cfg.json"
    cfg.write_text(json.dumps({"num_trees": 5, "subsample_size": 40, "mode": "propensity"}))
    model = tmp / "m.json"
    assert main(["train", "--data", str(data), "--config", str(cfg), "--trees", "3",
                 "--model-out", str(model)]) == 0
    saved = json.loads(model.read_text())
    assert len(saved["trees"]) == 3


def test_knn(workspace):
    tmp, data, pts, _ = workspace
    out = tmp / "knn.csv"
    assert main(["knn", "--data", str(data), "--points", str(pts), "--k", "7",
                 "--out", str(out)]) == 0
    rows = _rows(out)
    assert len(rows) == 15 and {r["method"] for r in rows} == {"knn-7"}


def test_experiment(tmp_path, monkeypatch):
    import grove.harness as h
    specs = [[h.CellSpec("confounded", 200, 2, "knn-5", replications=2, test_points=10)]]
    monkeypatch.setattr(h, "table_specs", lambda table, scale: specs)
    assert main(["experiment", "--table", "t1", "--scale", "0.5", "--seed", "3",
                 "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["table"] == "t1" and meta["seed"] == 3 and meta["summary"]["cells"] == 1
    assert len(_rows(tmp_path / "cells.csv")) == 1


def test_user_errors_exit_2(workspace, capsys):
    tmp, data, pts, _ = workspace
    assert main(["train", "--data", str(data), "--subsample", "1000",
                 "--model-out", str(tmp / "x.json")]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["knn", "--data", str(tmp / "missing.csv"), "--points", str(pts),
                 "--out", str(tmp / "o.csv")]) == 2
    assert main(["simulate", "--design", "corner", "--n", "10", "--d", "3",
                 "--out", str(tmp / "c.csv")]) == 2


def test_predict_warns_when_trees_are_few(workspace, capsys):
    tmp, data, pts, _ = workspace
    model = tmp / "few.json"
    assert main(["train", "--data", str(data), "--trees", "20", "--subsample", "60",
                 "--model-out", str(model)]) == 0
    assert main(["predict", "--model", str(model), "--points", str(pts),
                 "--out", str(tmp / "p.csv")]) == 0
    assert "grove predict: warning: B=20 < n=300" in capsys.readouterr().err
