import json
import os
import subprocess
import sys

import numpy as np
import pytest

from singular_flow.cli import dumps, main
from singular_flow.engine import run_constraint_algorithm
from singular_flow.system import load_system

from conftest import PENDULUM_SEED


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analyze_exit_codes(specs_dir, capsys):
    code, out, _ = run(["analyze", specs_dir / "pendulum.json"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["status"] == "Solved" and len(rep["levels"]) == 3 and rep["gauge_dimension"] == 0
    code, out, _ = run(["analyze", specs_dir / "regular_oscillator.json"], capsys)
    assert code == 0 and json.loads(out)["levels"] == []
    code, out, _ = run(["analyze", specs_dir / "inconsistent.json"], capsys)
    assert code == 2 and json.loads(out)["status"] == "Inconsistent"


def test_input_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "linearly_singular"}')
    assert run(["analyze", bad], capsys)[0] == 1
    bad.write_text("{not json")
    assert run(["analyze", bad], capsys)[0] == 1
    assert run(["analyze", tmp_path / "missing.json"], capsys)[0] == 1


def test_rank_drift_exit_3(tmp_path, capsys):
    spec = tmp_path / "drift.json"
    spec.write_text(json.dumps({"kind": "linearly_singular", "autonomous": True, "states": ["x", "y"],
                                "A": [["1", "0"], ["0", "x"]], "b": ["1", "x*y"], "seeds": [[0, 0]]}))
    assert run(["analyze", spec], capsys)[0] == 3


def test_seed_option_overrides_spec(specs_dir, capsys):
    code, out, _ = run(["analyze", specs_dir / "pendulum.json", "--seed", "0,1,0,0.1,0,0", "--tol", "1e-9"], capsys)
    assert code == 0
    assert json.loads(out)["levels"][0]["samples"][0] == [0.0, 1.0, 0.0, 0.1, 0.0, 0.0]


def test_report_is_byte_identical(specs_dir, tmp_path):
    outs = []
    for i in range(2):
        path = tmp_path / f"r{i}.json"
        env = dict(os.environ, SINGULAR_FLOW_SEED="7")
        subprocess.run([sys.executable, "-m", "singular_flow.cli", "analyze", str(specs_dir / "pendulum.json"),
                        "--out", str(path)], check=True, env=env)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_dumps_fixes_float_digits():
    assert dumps({"a": 0.1, "b": [1, 2.0]}) == '{\n  "a": 0.10000000000000001,\n  "b": [1, 2.0]\n}'


def test_integrate_and_check(specs_dir, tmp_path, capsys):
    csv = tmp_path / "osc.csv"
    code, _, err = run(["integrate", specs_dir / "regular_oscillator.json", "--x0", "0,1,0", "--t1",
                        repr(2 * np.pi), "--dt", "1e-3", "--out", csv], capsys)
    assert code == 0 and "max drift" in err
    last = [float(v) for v in csv.read_text().splitlines()[-1].split(",")]
    assert abs(last[1] - 1.0) <= 1e-6 and abs(last[2]) <= 1e-6
    code, out, _ = run(["check", specs_dir / "regular_oscillator.json", "--traj", csv], capsys)
    assert code == 0 and json.loads(out)["ok"]
    lines = csv.read_text().splitlines()
    lines[100] = ",".join(v if i != 1 else "5.0" for i, v in enumerate(lines[100].split(",")))
    csv.write_text("\n".join(lines) + "\n")
    code, out, _ = run(["check", specs_dir / "regular_oscillator.json", "--traj", csv], capsys)
    assert code == 5 and not json.loads(out)["ok"]


def test_integrate_pendulum_short(specs_dir, tmp_path, capsys):
    csv = tmp_path / "pend.csv"
    code, _, _ = run(["integrate", specs_dir / "pendulum.json", "--t1", "0.2", "--dt", "1e-3", "--out", csv], capsys)
    assert code == 0
    rows = csv.read_text().splitlines()
    assert rows[0] == "t,x,y,vx,vy,tau,drift"
    assert max(float(r.split(",")[-1]) for r in rows[1:]) <= 1e-6


def test_integrate_off_manifold_exit_4(specs_dir, capsys):
    code, _, _ = run(["integrate", specs_dir / "pendulum.json", "--x0", "0,3,0,0,0,0", "--t1", "0.1",
                      "--dt", "1e-2"], capsys)
    assert code == 4


def test_homogenize_examples(specs_dir, tmp_path, capsys):
    code, out, _ = run(["homogenize", specs_dir / "pendulum.json", "--mode", "jet_field"], capsys)
    assert code == 0
    doc = json.loads(out)
    sys_ = load_system(doc)
    A, _ = sys_.matrices_float([0.1, 0.9, 0.2, 0.3, -0.1, 2.0])
    expected = np.zeros((6, 6))
    expected[[0, 1, 2, 3], [1, 2, 3, 4]] = 1.0
    expected[5, 0] = 1.0
    np.testing.assert_array_equal(A, expected)

    spec = tmp_path / "xdot_t.json"
    spec.write_text(json.dumps({"kind": "linearly_singular", "states": ["x"], "A": [["1"]], "c": ["-t"]}))
    code, out, _ = run(["homogenize", spec, "--mode", "vector_hull"], capsys)
    doc = json.loads(out)
    assert doc["states"] == ["t", "x"] and doc["A"] == [["-t", "1"], ["1", "0"]] and doc["b"] == ["0", "1"]


def test_homogenize_already_autonomous(specs_dir, capsys):
    code, _, err = run(["homogenize", specs_dir / "inconsistent.json"], capsys)
    assert code == 1 and "AlreadyAutonomous" in err


def test_homogenize_round_trip_preserves_ladder(specs_dir, pendulum_result, capsys):
    code, out, _ = run(["homogenize", specs_dir / "pendulum.json"], capsys)
    reloaded = run_constraint_algorithm(load_system(json.loads(out)), [PENDULUM_SEED])
    assert reloaded.status == pendulum_result.status
    assert [lev.count for lev in reloaded.levels] == [lev.count for lev in pendulum_result.levels]
    np.testing.assert_allclose(reloaded.samples, pendulum_result.samples, atol=1e-12)
    for s in pendulum_result.samples[:5]:
        np.testing.assert_allclose(reloaded.solution_field(s), pendulum_result.solution_field(s), atol=1e-12)
