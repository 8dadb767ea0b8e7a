import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from finsler import cli
from oracles import RANDERS_A, RANDERS_B

ROOT = Path(__file__).resolve().parents[1]


def _run(tmp_path, cfg, *args, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return cli.main(list(args) + ["--config", str(path)])


def _report(path):
    return json.loads(Path(path).read_text())


RANDERS_CFG = {
    "metric": {"family": "randers", "params": {"a": RANDERS_A, "b": RANDERS_B}},
    "connections": [{"kind": "chern"}, {"kind": "berwald"}, {"name": "dist", "kind": "distinguished", "f": 1.0, "h": 0.5}],
    "samples": {"random": {"seed": 7, "count": 3}},
}


# schema ---------------------------------------------------------------------------

def test_schema_copies_are_identical():
    assert json.loads((ROOT / "schema" / "scenario.json").read_text()) == cli.load_schema()


def test_wrong_vector_length_names_the_field(tmp_path, capsys):
    cfg = {"metric": {"family": "euclidean"}, "samples": {"points": [{"x": [0, 0], "v": [1, 0, 0]}]},
           "tasks": [{"type": "verify"}]}
    assert _run(tmp_path, cfg, "run") == 2
    err = capsys.readouterr().err
    assert "samples.points[0].v" in err and "expected 2 components" in err


@pytest.mark.parametrize("cfg, where", [
    ({"metric": {"family": "kropina"}}, "metric"),
    ({"metric": {"family": "euclidean"}, "tasks": [{"type": "dance"}]}, "tasks[0].type"),
    ({"metric": {"family": "euclidean"}, "samples": {"points": [{"x": [0, "a"], "v": [1, 0]}]}}, "samples.points[0].x[1]"),
    ({"metric": {"expression": "y1^2 + * y2", "dimension": 2}}, "metric.expression"),
    ({"metric": {"family": "euclidean"}, "tasks": [{"type": "geodesic", "connection": "nope"}]}, "tasks[0].connection"),
    ({"metric": {"family": "euclidean"}, "tasks": [{"type": "variation", "W": ["t", "q"]}]}, "tasks[0].W[1]"),
    ({"metric": {"family": "randers", "params": {"b": 0.5}}, "samples": {"points": [{"x": [0, 0], "v": [0, 0]}]}},
     "samples.points[0].v"),
])
def test_config_errors_exit_2(tmp_path, capsys, cfg, where):
    assert _run(tmp_path, cfg, "run") == 2
    assert where in capsys.readouterr().err


def test_missing_file_exits_2(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "absent.json")]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_thin_cone_fails_loudly(tmp_path, capsys):
    cfg = {"metric": {"expression": "y1^2 + y2^2", "dimension": 2, "cone": "y1 - 10"},
           "samples": {"random": {"seed": 1, "count": 1}}}
    assert _run(tmp_path, cfg, "run") == 2
    assert "after 10000 attempts" in capsys.readouterr().err


def test_seeded_samples_are_reproducible():
    from finsler.metrics import randers
    a = cli.draw_samples(randers(b=0.3), 42, 5)
    b = cli.draw_samples(randers(b=0.3), 42, 5)
    assert all(np.array_equal(s.x, t.x) and np.array_equal(s.v, t.v) for s, t in zip(a, b))
    assert all(np.all(np.abs(s.x) <= 0.5) and np.all(np.abs(s.v) <= 1.0) for s in a)


# exit codes and determinism -----------------------------------------------------------

def test_verify_euclidean_is_exactly_zero(tmp_path):
    cfg = {"metric": {"family": "euclidean", "params": {"n": 3}},
           "samples": {"random": {"seed": 3, "count": 4}}, "tasks": [{"type": "verify"}]}
    out = tmp_path / "r.json"
    assert _run(tmp_path, cfg, "run", "--out", str(out)) == 0
    rec = _report(out)["tasks"][0]
    assert rec["pass"] and all(r["value"] == 0.0 for r in rec["residuals"])
    assert rec["runtime_ms"] is None


def test_verify_randers_seed_42(tmp_path):
    cfg = {"metric": {"family": "randers", "params": {"b": 0.3}},
           "connections": [{"kind": "chern"}, {"kind": "berwald"}],
           "samples": {"random": {"seed": 42, "count": 50}}, "tasks": [{"type": "verify"}]}
    out = tmp_path / "r.json"
    assert _run(tmp_path, cfg, "verify", "--out", str(out)) == 0
    rec = _report(out)["tasks"][0]
    assert rec["inputs"]["samples"] == 50
    assert {r["check"] for r in rec["residuals"]} >= {"bianchi.first", "bianchi.second", "bianchi.vertical",
                                                     "metric", "symmetry.symR", "symmetry.seisB", "torsion"}


def test_failing_verification_exits_1(tmp_path):
    cfg = dict(RANDERS_CFG, tolerances={"bianchi": 1e-30}, tasks=[{"type": "verify", "checks": ["bianchi"]}])
    out = tmp_path / "r.json"
    assert _run(tmp_path, cfg, "run", "--out", str(out)) == 1
    assert _report(out)["pass"] is False


def test_task_error_exits_1(tmp_path):
    cfg = {"metric": {"expression": "y1^2 + y2^2", "dimension": 2, "cone": "0.5 - x1"},
           "tasks": [{"type": "geodesic", "x0": [0, 0], "v0": [1, 0], "t_span": [0, 1], "steps": 64}]}
    out = tmp_path / "r.json"
    assert _run(tmp_path, cfg, "run", "--out", str(out)) == 1
    outputs = _report(out)["tasks"][0]["outputs"]
    assert "left the admissible cone" in outputs["error"] and 0.45 < outputs["exit_time"] < 0.5


def test_reports_are_byte_identical(tmp_path):
    cfg = dict(RANDERS_CFG, tasks=[{"type": "info"}, {"type": "curvature"}, {"type": "compare"},
                                   {"type": "geodesic", "steps": 32}])
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert _run(tmp_path, cfg, "run", "--out", str(a)) == 0
    assert _run(tmp_path, cfg, "run", "--out", str(b), name="other.json") == 0
    assert a.read_bytes() == b.read_bytes()
    assert not list(tmp_path.glob(".*.tmp"))


def test_threads_do_not_change_the_report(tmp_path, monkeypatch):
    cfg = dict(RANDERS_CFG, tasks=[{"type": "verify"}, {"type": "curvature"}])
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    _run(tmp_path, cfg, "run", "--out", str(a))
    monkeypatch.setenv("FINSLER_THREADS", "4")
    _run(tmp_path, cfg, "run", "--out", str(b))
    assert a.read_bytes() == b.read_bytes()


def test_timing_is_opt_in(tmp_path):
    cfg = {"metric": {"family": "euclidean"}, "output": {"timing": True}, "tasks": [{"type": "info"}]}
    out = tmp_path / "r.json"
    _run(tmp_path, cfg, "run", "--out", str(out))
    assert _report(out)["tasks"][0]["runtime_ms"] >= 0


def test_floats_use_seventeen_digits():
    assert cli.dumps_report({"a": 0.1, "b": [1.0, float("nan")], "c": None}) == \
        '{\n  "a": 0.10000000000000001,\n  "b": [1, null],\n  "c": null\n}\n'


# subcommands --------------------------------------------------------------------------

def test_sphere_curvature_table(tmp_path):
    cfg = {"metric": {"family": "riemannian_sphere", "params": {"R": 1.0}},
           "connections": [{"kind": "chern"}, {"kind": "berwald"}],
           "samples": {"random": {"seed": 5, "count": 6}}}
    out = tmp_path / "k.csv"
    assert _run(tmp_path, cfg, "curvature", "--out", str(out), "--format", "csv") == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 6 and list(rows[0])[:2] == ["x1", "x2"]
    for r in rows:
        assert float(r["K_chern"]) == pytest.approx(1.0, abs=1e-6)
        assert float(r["K_berwald"]) == pytest.approx(1.0, abs=1e-6)


def test_geodesic_csv_is_a_straight_line(tmp_path):
    cfg = {"metric": {"family": "euclidean"},
           "tasks": [{"type": "geodesic", "x0": [0, 0], "v0": [1, 2], "t_span": [0, 1], "steps": 16}]}
    out = tmp_path / "g.csv"
    assert _run(tmp_path, cfg, "geodesic", "--out", str(out), "--format", "csv") == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,x1,x2,xdot1,xdot2"
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    assert len(data) == 17
    assert np.allclose(data[:, 1:3], data[:, :1] * [1, 2], atol=1e-12)


def test_compare_chern_berwald_on_randers(tmp_path):
    cfg = dict(RANDERS_CFG, tasks=[{"type": "compare", "connections": ["berwald", "chern"]}])
    out = tmp_path / "c.json"
    assert _run(tmp_path, cfg, "compare", "--out", str(out)) == 0
    rec = _report(out)["tasks"][0]
    assert rec["outputs"]["max"]["roftilder"] < 1e-7
    assert rec["outputs"]["max"]["flagpole"] < 1e-8


def test_transport_jacobi_and_variation_tasks(tmp_path):
    cfg = dict(RANDERS_CFG, tasks=[
        {"type": "transport", "x0": [0.1, 0], "v0": [1, 0.2], "X0": [0, 1], "steps": 32},
        {"type": "transport", "x0": [0.1, 0], "v0": [1, 0.2], "kind": "WParallel", "W": ["1", "t"], "steps": 32},
        {"type": "jacobi", "x0": [0.1, 0], "v0": [1, 0.2], "J0dot": [0, 1], "steps": 32},
        {"type": "variation", "x0": [0.1, 0], "v0": [1, 0.2], "W": ["t*(1-t)", "sin(pi*t)"], "second": True, "steps": 64},
        {"type": "variation", "curve": ["t", "t^2"], "W": ["1", "t"], "steps": 64},
    ])
    out = tmp_path / "r.json"
    assert _run(tmp_path, cfg, "run", "--out", str(out)) == 0
    recs = _report(out)["tasks"]
    assert recs[0]["outputs"]["complete"] is True
    assert recs[2]["outputs"]["curve"]["fields"].keys() == {"J", "DJ"}
    assert abs(recs[3]["outputs"]["first_variation"]) < 1e-8 and recs[3]["outputs"]["second_variation"] > 0
    assert all(r["tolerance"] is None for r in recs)


def test_multiple_csv_outputs_get_suffixes(tmp_path):
    cfg = {"metric": {"family": "euclidean"},
           "tasks": [{"type": "geodesic", "x0": [0, 0], "v0": [1, 0]}, {"type": "geodesic", "x0": [0, 0], "v0": [0, 1]}]}
    _run(tmp_path, cfg, "run", "--out", str(tmp_path / "out.csv"), "--format", "csv")
    assert (tmp_path / "out.0.geodesic.csv").exists() and (tmp_path / "out.1.geodesic.csv").exists()


def test_subcommand_without_matching_task_runs_a_default(tmp_path, capsys):
    cfg = {"metric": {"family": "euclidean"}, "samples": {"points": [{"x": [0, 0], "v": [1, 0]}]}}
    assert _run(tmp_path, cfg, "info") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["tasks"][0]["outputs"]["samples"][0]["L"] == 1


def test_console_script_end_to_end(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"metric": {"family": "euclidean"}, "samples": {"random": {"seed": 1, "count": 2}},
                               "tasks": [{"type": "verify"}]}))
    ok = subprocess.run([sys.executable, "-m", "finsler.cli", "run", "--config", str(cfg)], capture_output=True, text=True)
    assert ok.returncode == 0 and json.loads(ok.stdout)["pass"] is True
    bad = subprocess.run([sys.executable, "-m", "finsler.cli", "verify"], capture_output=True, text=True)
    assert bad.returncode == 2
