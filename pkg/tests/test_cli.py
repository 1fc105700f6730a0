import json

import numpy as np
import pytest
import scipy.sparse as sp

from milpguide.cli import main
from milpguide.milp.instance import MilpInstance, save_json


def run(*argv):
    return main([str(a) for a in argv])


def _knapsack(path, seed, n=18, m=3):
    rng = np.random.default_rng(seed)
    W = rng.integers(5, 30, size=(m, n)).astype(float)
    v = rng.integers(5, 40, size=n).astype(float)
    inst = MilpInstance(-v, sp.csr_matrix(W), np.floor(W.sum(axis=1) / 2), np.array(["L"] * m),
                        np.zeros(n), np.ones(n), list(range(n)))
    save_json(inst, path)
    return path


def test_gen_is_deterministic_and_writes_manifest(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("gen", "stl:1,1,2,4", "--seed", 3, "--out", a) == 0
    assert run("gen", "stl:1,1,2,4", "--seed", 3, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    man = json.loads((tmp_path / "a.json.manifest.json").read_text())
    assert man["command"] == "gen" and man["seeds"]["seed"] == 3
    assert man["generator_manifest"]["placement"] == "uniform"
    assert set(man["schema_versions"]) == {"graph", "dataset", "checkpoint"}


def test_stl_gen_encode_solve_check(tmp_path, capsys):
    p, i, r, rob = (tmp_path / n for n in ("p.json", "i.milp.json", "r.json", "rob.json"))
    assert run("gen", "stl:1,1,1,3", "--seed", 1, "--out", p) == 0
    assert run("encode", p, "--out", i) == 0
    assert run("solve", i, "--out", r) == 0
    res = json.loads(r.read_text())
    assert res["status"] == "optimal"
    assert run("robustness", p, i, r, "--out", rob) == 0
    rep = json.loads(rob.read_text())
    assert rep["satisfied"] is True and rep["robustness"] >= -1e-6


def test_encode_to_mps_and_solve(tmp_path):
    p, m, r1, r2 = (tmp_path / n for n in ("p.json", "i.mps", "r1.json", "r2.json"))
    run("gen", "stl:1,1,1,3", "--seed", 2, "--out", p)
    assert run("encode", p, "--out", m) == 0
    assert m.read_text().startswith("NAME")
    assert run("encode", p, "--out", tmp_path / "i.milp.json") == 0
    assert run("solve", m, "--out", r1) == 0
    assert run("solve", tmp_path / "i.milp.json", "--out", r2) == 0
    assert json.loads(r1.read_text())["objective"] == pytest.approx(json.loads(r2.read_text())["objective"], abs=1e-9)


def test_error_exit_codes(tmp_path, capsys):
    assert run("solve", tmp_path / "missing.json", "--out", tmp_path / "r.json") == 1
    assert run("gen", "stl:1,2", "--out", tmp_path / "p.json") == 1
    assert run("report", tmp_path) == 1
    with pytest.raises(SystemExit) as err:
        run("solve")
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        run("frobnicate")
    assert err.value.code == 2
    assert "error" in capsys.readouterr().err


def test_output_dir_override(tmp_path, monkeypatch):
    monkeypatch.setenv("MILPGUIDE_OUT_DIR", str(tmp_path / "outs"))
    assert run("gen", "stl:1,1,1,3", "--out", "p.json") == 0
    assert (tmp_path / "outs" / "p.json").exists()


def test_rerun_reproduces_gen(tmp_path):
    p = tmp_path / "p.json"
    run("gen", "cpp:5,16", "--seed", 4, "--out", p)
    before = p.read_bytes()
    p.unlink()
    assert run("rerun", tmp_path / "p.json.manifest.json") == 0
    assert p.read_bytes() == before


def test_solve_with_priorities_and_config(tmp_path):
    i = _knapsack(tmp_path / "k.milp.json", 0)
    (tmp_path / "prio.json").write_text(json.dumps({"priorities": {"0": 1, "3": 1}}))
    (tmp_path / "cfg.json").write_text(json.dumps({"config": {"node_selection": "depth_first"}}))
    assert run("solve", i, "--out", tmp_path / "a.json") == 0
    assert run("solve", i, "--priorities", tmp_path / "prio.json", "--config", tmp_path / "cfg.json",
               "--search-log", tmp_path / "log.jsonl", "--out", tmp_path / "b.json") == 0
    a, b = (json.loads((tmp_path / n).read_text()) for n in ("a.json", "b.json"))
    assert a["objective"] == pytest.approx(b["objective"], abs=1e-6)
    assert len((tmp_path / "log.jsonl").read_text().splitlines()) == b["node_count"]


def test_backdoor_flow(tmp_path, capsys):
    insts = [_knapsack(tmp_path / f"k{s}.milp.json", s) for s in range(3)]
    ds, model, guide, runs = tmp_path / "ds", tmp_path / "m.json", tmp_path / "g.json", tmp_path / "runs"
    assert run("collect-backdoors", *insts, "--budget", 30, "--swaps", 0, "--node-limit", 300, "--out", ds) == 0
    assert (ds / "manifest.json").exists() and (ds / "run.manifest.json").exists()
    assert run("train", ds, "--epochs", 2, "--L", 8, "--H", 2, "--out", model) == 0
    digest = json.loads((tmp_path / "m.json.manifest.json").read_text())["params_sha256"]
    assert len(digest) == 64
    assert run("infer", model, insts[0], "--count", 10, "--out", guide) == 0
    g = json.loads(guide.read_text())
    assert len(g["members"]) == 8 and len(g["scores"]) == 10
    assert run("evaluate", *insts, "--backdoor-model", model, "--random-baseline", "--count", 10,
               "--node-limit", 500, "--out", runs) == 0
    assert len(list((runs / "records").glob("*.json"))) == 9
    assert run("report", runs, "--format", "csv", "--out", tmp_path / "s.csv") == 0
    header = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert header == "benchmark,method,wins,mean,std,p25,median,p75,improvement_pct"


def test_config_flow(tmp_path):
    insts = [_knapsack(tmp_path / f"k{s}.milp.json", 10 + s) for s in range(2)]
    ds, model = tmp_path / "cds", tmp_path / "cm.json"
    assert run("collect-configs", *insts, "--count", 10, "--swaps", 2, "--node-limit", 15, "--out", ds) == 0
    assert run("train", ds, "--epochs", 2, "--L", 8, "--H", 2, "--out", model) == 0
    assert run("infer", model, insts[0], "--out", tmp_path / "c.json") == 0
    assert "config" in json.loads((tmp_path / "c.json").read_text())
    assert run("evaluate", *insts, "--config-model", model, "--node-limit", 30, "--out", tmp_path / "cr") == 0
    rep = json.loads((tmp_path / "cr" / "report.json").read_text())
    assert rep["metric"] == "primal_gap"


def test_evaluate_needs_a_method(tmp_path):
    i = _knapsack(tmp_path / "k.milp.json", 0)
    assert run("evaluate", i, "--out", tmp_path / "r") == 1
