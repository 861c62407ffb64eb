import json
import subprocess
import sys

import pandas as pd
import pytest

from oktacast.cli import main

GEN = {"n_stations": 1, "n_days": 2200, "lead_times": [1], "seed": 2}
RUN = {"methods": ["RAW", "MLR", "POLR"], "seed": 5, "bootstrap": {"n_boot": 200}}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "gen.json").write_text(json.dumps(GEN))
    (d / "run.json").write_text(json.dumps(RUN))
    assert main(["generate", "--config", str(d / "gen.json"), "--out", str(d / "data.csv")]) == 0
    assert main(["run", "--config", str(d / "run.json"), "--data", str(d / "data.csv"),
                 "--out", str(d / "run1")]) == 0
    return d


def test_generate_outputs(workspace):
    m = json.loads((workspace / "data.csv.manifest.json").read_text())
    assert m["command"] == "generate" and m["seeds"] == {"seed": 2}
    assert m["config"]["n_days"] == 2200
    assert len(pd.read_csv(workspace / "data.csv")) == 2200


def test_generate_refuses_overwrite(workspace):
    args = ["generate", "--config", str(workspace / "gen.json"), "--out", str(workspace / "data.csv")]
    before = (workspace / "data.csv").read_bytes()
    assert main(args) == 2
    assert (workspace / "data.csv").read_bytes() == before


def test_missing_and_invalid_config(workspace, tmp_path):
    assert main(["generate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x.csv")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad), "--data", str(workspace / "data.csv"),
                 "--out", str(tmp_path / "r")]) == 2
    bad.write_text(json.dumps({"methods": ["RAW", "SVM"]}))
    assert main(["run", "--config", str(bad), "--data", str(workspace / "data.csv"),
                 "--out", str(tmp_path / "r")]) == 2
    assert main(["run", "--config", str(workspace / "run.json"), "--out", str(tmp_path / "r")]) == 2


def test_run_outputs(workspace):
    run = workspace / "run1"
    cases = pd.read_csv(run / "cases.csv")
    # 2002-01-01 + 2200 days ends in 2008; test years 2007 and 2008
    n_test = int((pd.to_datetime(pd.read_csv(workspace / "data.csv")["date"]).dt.year >= 2007).sum())
    assert len(cases) == 3 * n_test
    assert list(cases.columns) == ["station_id", "lead_time", "method", "date", "obs_okta", "crps", "logs", "pit"]
    m = json.loads((run / "manifest.json").read_text())
    assert m["completed_methods"] == ["MLR", "POLR", "RAW"]
    assert set(m["outputs"]) >= {"cases.csv", "summary.csv", "provenance.csv", "failures.csv"}
    assert "data.csv" in m["inputs"] and len(m["config_sha256"]) == 64
    assert "timestamp" not in json.dumps(m)


def test_run_refuses_non_empty(workspace):
    assert main(["run", "--config", str(workspace / "run.json"), "--data", str(workspace / "data.csv"),
                 "--out", str(workspace / "run1")]) == 2


def test_rerun_from_manifest_identical(workspace):
    assert main(["run", "--config", str(workspace / "run1" / "manifest.json"),
                 "--out", str(workspace / "run2")]) == 0
    for name in ("cases.csv", "summary.csv", "provenance.csv"):
        assert (workspace / "run1" / name).read_bytes() == (workspace / "run2" / name).read_bytes()


def test_compare_self(workspace):
    out = workspace / "skill.csv"
    assert main(["compare", "--scores", str(workspace / "run1"), "--out", str(out)]) == 0
    t = pd.read_csv(out)
    raw = t[t["method"] == "RAW"]
    assert (raw["skill"] == 0).all() and (raw["ci_lo"] <= 0).all() and (raw["ci_hi"] >= 0).all()
    assert (t.query("method == 'POLR' and metric == 'crps'")["skill"] > 0).all()
    assert main(["compare", "--scores", str(workspace / "run1"), "--reference", "NOPE"]) == 2


def test_dm_matrix_identical_methods(workspace, tmp_path):
    cases = pd.read_csv(workspace / "run1" / "cases.csv")
    twin = cases[cases["method"] == "POLR"].assign(method="TWIN")
    pd.concat([cases, twin]).to_csv(tmp_path / "cases.csv", index=False)
    out = tmp_path / "dm.csv"
    assert main(["dm-matrix", "--scores", str(tmp_path / "cases.csv"), "--out", str(out)]) == 0
    t = pd.read_csv(out)
    twin_rows = t[(t["method_a"] == "POLR") & (t["method_b"] == "TWIN")]
    assert len(twin_rows) == 2 and (twin_rows["proportion"] == 0).all()


def test_pit(workspace):
    out = workspace / "pit.csv"
    assert main(["pit", "--scores", str(workspace / "run1"), "--out", str(out)]) == 0
    t = pd.read_csv(out)
    assert len(t) == 3 * 20
    assert t.groupby("method")["count"].sum().nunique() == 1


def test_no_method_completed(workspace, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"methods": ["RAW"], "stations": ["S999"]}))
    assert main(["run", "--config", str(cfg), "--data", str(workspace / "data.csv"),
                 "--out", str(tmp_path / "r")]) == 1
    assert len(pd.read_csv(tmp_path / "r" / "failures.csv")) == 1


def test_missing_scores(tmp_path):
    assert main(["pit", "--scores", str(tmp_path)]) == 2


def test_console_script():
    r = subprocess.run([sys.executable, "-m", "oktacast.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("oktacast")
    r = subprocess.run([sys.executable, "-m", "oktacast.cli", "frobnicate"], capture_output=True, text=True)
    assert r.returncode == 2
